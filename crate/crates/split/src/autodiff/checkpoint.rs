//! Binary container for named tensors plus string metadata.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "SPLTCKP1"          8 bytes
//! dtype tag                 1 byte (0 = f32, 1 = f64)
//! meta count                u32, then (len u32, utf8) key/value pairs
//! tensor count              u32
//!   per tensor: name (len u32, utf8), rank u32, dims u64 * rank, data
//! sha256 of everything above   32 bytes
//! ```
//!
//! The hash trailer makes byte-level reproducibility checks and corruption
//! detection trivial. Writes go through a temp file and rename.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::tensor::{Scalar, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SPLTCKP1";

pub struct Checkpoint<S: Scalar> {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<S>)>,
}

impl<S: Scalar> Default for Checkpoint<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new() -> Self {
        Checkpoint { meta: Vec::new(), tensors: Vec::new() }
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<S>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Serialized bytes including the hash trailer.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(S::DTYPE_TAG);
        push_u32(&mut out, self.meta.len() as u32);
        for (k, v) in &self.meta {
            push_str(&mut out, k);
            push_str(&mut out, v);
        }
        push_u32(&mut out, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            push_str(&mut out, name);
            push_u32(&mut out, t.shape().len() as u32);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let err = |details: &str| Error::Format {
            what: format!("checkpoint {origin}"),
            details: details.to_string(),
        };
        if bytes.len() < MAGIC.len() + 1 + 32 {
            return Err(err("truncated"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        let digest = Sha256::digest(body);
        if digest.as_slice() != trailer {
            return Err(err("hash mismatch, file corrupt"));
        }
        let mut r = Reader { buf: body, pos: 0 };
        let magic = r.take(8).ok_or_else(|| err("truncated"))?;
        if magic != MAGIC {
            return Err(err("bad magic"));
        }
        let tag = r.take(1).ok_or_else(|| err("truncated"))?[0];
        if tag != S::DTYPE_TAG {
            return Err(err(&format!(
                "dtype tag {tag} does not match requested scalar (want {})",
                S::DTYPE_TAG
            )));
        }
        let meta_count = r.u32().ok_or_else(|| err("truncated"))?;
        let mut meta = Vec::with_capacity(meta_count as usize);
        for _ in 0..meta_count {
            let k = r.string().ok_or_else(|| err("bad meta key"))?;
            let v = r.string().ok_or_else(|| err("bad meta value"))?;
            meta.push((k, v));
        }
        let tensor_count = r.u32().ok_or_else(|| err("truncated"))?;
        let mut tensors = Vec::with_capacity(tensor_count as usize);
        for _ in 0..tensor_count {
            let name = r.string().ok_or_else(|| err("bad tensor name"))?;
            let rank = r.u32().ok_or_else(|| err("truncated"))? as usize;
            if rank > 8 {
                return Err(err(&format!("tensor {name}: rank {rank} out of range")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = r.u64().ok_or_else(|| err("truncated"))? as usize;
                shape.push(d);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n * S::BYTES).ok_or_else(|| err("truncated tensor data"))?;
            let mut data = Vec::with_capacity(n);
            for chunk in raw.chunks_exact(S::BYTES) {
                data.push(S::read_le(chunk));
            }
            tensors.push((name, Tensor::from_vec(shape, data)));
        }
        if r.pos != body.len() {
            return Err(err("trailing bytes"));
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let tmp: PathBuf = path.with_extension("tmp");
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    /// Hex digest of the serialized form; equal bytes mean equal hashes.
    pub fn content_hash(&self) -> String {
        let bytes = self.to_bytes();
        let digest = Sha256::digest(&bytes);
        hex(&digest)
    }
}

/// Lowercase hex of arbitrary bytes.
pub fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Sha256 hex of a file on disk.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_str(out: &mut Vec<u8>, s: &str) {
    push_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return None;
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn string(&mut self) -> Option<String> {
        let n = self.u32()? as usize;
        if n > 1 << 20 {
            return None;
        }
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).ok()
    }
}
