//! Single-file dataset container: an index of scene offsets followed by
//! per-scene blocks (scene description text, occupancy grid, point cloud,
//! labeled poses) and a SHA-256 integrity trailer. All integers are
//! little-endian; poses are stored at full f64 precision so reloading a
//! dataset reproduces the generator's in-memory records exactly.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::datagen::{LabeledPose, PoseLabel, Provenance, SceneRecord, TaskId};
use crate::scene::io::{
    cloud_from_bytes, cloud_to_bytes, grid_from_bytes, grid_to_bytes, scene_from_spec,
    scene_to_spec,
};
use crate::se3::Pose;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SPLTDS01";
const HASH_LEN: usize = 32;

fn put_block(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

fn pose_block(poses: &[LabeledPose]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + poses.len() * 100);
    out.extend_from_slice(&(poses.len() as u32).to_le_bytes());
    for lp in poses {
        for v in lp.pose.to_floats() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(lp.task.index() as u8);
        out.push(match lp.label {
            PoseLabel::Positive => 1,
            PoseLabel::Negative => 0,
        });
        out.push(lp.provenance.tag());
        out.push(0);
    }
    out
}

pub fn dataset_to_bytes(records: &[SceneRecord]) -> Vec<u8> {
    let blocks: Vec<Vec<u8>> = records
        .iter()
        .map(|rec| {
            let mut b = Vec::new();
            put_block(&mut b, scene_to_spec(&rec.scene).as_bytes());
            put_block(&mut b, &grid_to_bytes(&rec.grid));
            put_block(&mut b, &cloud_to_bytes(&rec.cloud));
            let poses = pose_block(&rec.poses);
            put_block(&mut b, &poses);
            b
        })
        .collect();

    let header_len = MAGIC.len() + 4 + 8 * blocks.len();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    let mut offset = header_len as u64;
    for b in &blocks {
        out.extend_from_slice(&offset.to_le_bytes());
        offset += b.len() as u64;
    }
    for b in &blocks {
        out.extend_from_slice(b);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Reader<'a> {
    fn bad(&self, details: impl Into<String>) -> Error {
        Error::Format { what: format!("dataset {}", self.origin), details: details.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.bad("truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn block(&mut self) -> Result<&'a [u8]> {
        let len = self.u32()? as usize;
        self.take(len)
    }
}

pub fn dataset_from_bytes(bytes: &[u8], origin: &str) -> Result<Vec<SceneRecord>> {
    let make_err = |details: &str| Error::Format {
        what: format!("dataset {origin}"),
        details: details.into(),
    };
    if bytes.len() < MAGIC.len() + 4 + HASH_LEN {
        return Err(make_err("too short"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - HASH_LEN);
    let digest = Sha256::digest(body);
    if digest.as_slice() != trailer {
        return Err(make_err("integrity hash mismatch"));
    }
    let mut r = Reader { buf: body, pos: 0, origin };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(make_err("bad magic"));
    }
    let count = r.u32()? as usize;
    let mut offsets = Vec::with_capacity(count);
    for _ in 0..count {
        offsets.push(r.u64()? as usize);
    }
    let mut records = Vec::with_capacity(count);
    for off in offsets {
        if off != r.pos {
            return Err(make_err("scene offset out of order"));
        }
        let spec = std::str::from_utf8(r.block()?)
            .map_err(|_| make_err("scene text not utf-8"))?
            .to_string();
        let scene = scene_from_spec(&spec, origin)?;
        let grid = grid_from_bytes(r.block()?, origin)?;
        let cloud = cloud_from_bytes(r.block()?, origin)?;
        let pose_bytes = r.block()?;
        let mut pr = Reader { buf: pose_bytes, pos: 0, origin };
        let n_poses = pr.u32()? as usize;
        let mut poses = Vec::with_capacity(n_poses);
        for _ in 0..n_poses {
            let mut floats = [0.0f64; 12];
            for f in &mut floats {
                *f = pr.f64()?;
            }
            let pose = Pose::from_floats(&floats);
            let task = TaskId::from_index(pr.take(1)?[0] as usize)?;
            let label = match pr.take(1)?[0] {
                1 => PoseLabel::Positive,
                0 => PoseLabel::Negative,
                other => return Err(make_err(&format!("bad label byte {other}"))),
            };
            let provenance = Provenance::from_tag(pr.take(1)?[0])?;
            pr.take(1)?; // pad
            poses.push(LabeledPose { pose, task, label, provenance });
        }
        if pr.pos != pose_bytes.len() {
            return Err(make_err("trailing bytes in pose block"));
        }
        records.push(SceneRecord { scene, grid, cloud, poses });
    }
    if r.pos != body.len() {
        return Err(make_err("trailing bytes after last scene"));
    }
    Ok(records)
}

pub fn write_dataset(path: &Path, records: &[SceneRecord]) -> Result<()> {
    let bytes = dataset_to_bytes(records);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<SceneRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    dataset_from_bytes(&bytes, &path.display().to_string())
}
