//! On-disk formats for clouds, grids, and scene specs.
//!
//! * Point cloud: `SPLTPCD1`, point count u32, then N*3 f32, little-endian.
//! * Occupancy grid: `SPLTGRD1`, origin pose as 12 f64 (rotation rows then
//!   translation), then 64^3 u32 cell counts, little-endian, x fastest.
//! * Scene spec: line-oriented text, one key plus values per line; floats
//!   are printed with Rust's shortest round-trip formatting so parsing
//!   reproduces the exact bits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::se3::Pose;
use crate::{Error, Result};
use super::{ObjectKind, OccupancyGrid, PlacedPrimitive, PointCloud, Primitive, PrimitiveScene, SceneObject, GRID_DIM};

const CLOUD_MAGIC: &[u8; 8] = b"SPLTPCD1";
const GRID_MAGIC: &[u8; 8] = b"SPLTGRD1";

pub fn cloud_to_bytes(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + cloud.len() * 12);
    out.extend_from_slice(CLOUD_MAGIC);
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for p in &cloud.points {
        for a in 0..3 {
            out.extend_from_slice(&(p[a] as f32).to_le_bytes());
        }
    }
    out
}

pub fn cloud_from_bytes(bytes: &[u8], origin: &str) -> Result<PointCloud> {
    let err = |d: &str| Error::Format { what: format!("cloud {origin}"), details: d.into() };
    if bytes.len() < 12 || &bytes[..8] != CLOUD_MAGIC {
        return Err(err("bad magic"));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() != 12 + n * 12 {
        return Err(err("length mismatch"));
    }
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let base = 12 + i * 12;
        let f = |k: usize| {
            f32::from_le_bytes(bytes[base + 4 * k..base + 4 * k + 4].try_into().unwrap()) as f64
        };
        points.push(Vector3::new(f(0), f(1), f(2)));
    }
    Ok(PointCloud { points })
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, cloud_to_bytes(cloud)).map_err(|e| Error::io(path, e))
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    cloud_from_bytes(&bytes, &path.display().to_string())
}

pub fn grid_to_bytes(grid: &OccupancyGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 96 + grid.counts.len() * 4);
    out.extend_from_slice(GRID_MAGIC);
    for v in grid.origin.to_floats() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &c in &grid.counts {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out
}

pub fn grid_from_bytes(bytes: &[u8], origin: &str) -> Result<OccupancyGrid> {
    let err = |d: &str| Error::Format { what: format!("grid {origin}"), details: d.into() };
    let n = GRID_DIM * GRID_DIM * GRID_DIM;
    if bytes.len() != 8 + 96 + n * 4 || &bytes[..8] != GRID_MAGIC {
        return Err(err("bad magic or length"));
    }
    let mut floats = [0.0f64; 12];
    for (i, f) in floats.iter_mut().enumerate() {
        *f = f64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap());
    }
    let pose = Pose::from_floats(&floats);
    let mut counts = Vec::with_capacity(n);
    for i in 0..n {
        let base = 104 + 4 * i;
        counts.push(u32::from_le_bytes(bytes[base..base + 4].try_into().unwrap()));
    }
    Ok(OccupancyGrid { counts, origin: pose })
}

pub fn write_grid(path: &Path, grid: &OccupancyGrid) -> Result<()> {
    fs::write(path, grid_to_bytes(grid)).map_err(|e| Error::io(path, e))
}

pub fn read_grid(path: &Path) -> Result<OccupancyGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    grid_from_bytes(&bytes, &path.display().to_string())
}

fn push_pose(out: &mut String, key: &str, pose: &Pose) {
    write!(out, "{key}").unwrap();
    for v in pose.to_floats() {
        write!(out, " {v}").unwrap();
    }
    out.push('\n');
}

pub fn scene_to_spec(scene: &PrimitiveScene) -> String {
    let mut out = String::new();
    out.push_str("scene 1\n");
    writeln!(out, "objects {}", scene.objects.len()).unwrap();
    for obj in &scene.objects {
        writeln!(out, "kind {}", obj.kind.name()).unwrap();
        push_pose(&mut out, "pose", &obj.pose);
        writeln!(out, "parts {}", obj.parts.len()).unwrap();
        for part in &obj.parts {
            match &part.shape {
                Primitive::Box { half } => {
                    writeln!(out, "box {} {} {}", half.x, half.y, half.z).unwrap()
                }
                Primitive::Cylinder { radius, half_height } => {
                    writeln!(out, "cylinder {radius} {half_height}").unwrap()
                }
                Primitive::TorusSegment { major, minor, arc } => {
                    writeln!(out, "torus {major} {minor} {} {}", arc.0, arc.1).unwrap()
                }
            }
            push_pose(&mut out, "part-pose", &part.pose);
        }
    }
    out
}

struct Lines<'a> {
    lines: std::str::Lines<'a>,
    origin: &'a str,
}

impl<'a> Lines<'a> {
    fn next_tokens(&mut self, key: &str) -> Result<Vec<&'a str>> {
        loop {
            let line = self.lines.next().ok_or_else(|| Error::Format {
                what: format!("scene spec {}", self.origin),
                details: format!("missing {key} line"),
            })?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let head = tokens.next().unwrap_or("");
            if head != key {
                return Err(Error::Format {
                    what: format!("scene spec {}", self.origin),
                    details: format!("expected {key}, found {head}"),
                });
            }
            return Ok(tokens.collect());
        }
    }

    fn floats(&self, key: &str, tokens: &[&str], n: usize) -> Result<Vec<f64>> {
        if tokens.len() != n {
            return Err(Error::Format {
                what: format!("scene spec {}", self.origin),
                details: format!("{key}: expected {n} values, found {}", tokens.len()),
            });
        }
        tokens
            .iter()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Format {
                    what: format!("scene spec {}", self.origin),
                    details: format!("{key}: bad float {t}"),
                })
            })
            .collect()
    }

    fn pose(&mut self, key: &str) -> Result<Pose> {
        let tokens = self.next_tokens(key)?;
        let f = self.floats(key, &tokens, 12)?;
        let mut arr = [0.0f64; 12];
        arr.copy_from_slice(&f);
        Ok(Pose::from_floats(&arr))
    }
}

pub fn scene_from_spec(text: &str, origin: &str) -> Result<PrimitiveScene> {
    let mut r = Lines { lines: text.lines(), origin };
    let version = r.next_tokens("scene")?;
    if version != ["1"] {
        return Err(Error::Format {
            what: format!("scene spec {origin}"),
            details: format!("unsupported version {version:?}"),
        });
    }
    let count: usize = r
        .next_tokens("objects")?
        .first()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Format {
            what: format!("scene spec {origin}"),
            details: "bad objects count".into(),
        })?;
    let mut objects = Vec::with_capacity(count);
    for _ in 0..count {
        let kind_tokens = r.next_tokens("kind")?;
        let kind = ObjectKind::parse(kind_tokens.first().copied().unwrap_or(""))?;
        let pose = r.pose("pose")?;
        let part_count: usize = r
            .next_tokens("parts")?
            .first()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Format {
                what: format!("scene spec {origin}"),
                details: "bad parts count".into(),
            })?;
        let mut parts = Vec::with_capacity(part_count);
        for _ in 0..part_count {
            let line = r.lines.next().ok_or_else(|| Error::Format {
                what: format!("scene spec {origin}"),
                details: "missing part line".into(),
            })?;
            let mut tokens = line.trim().split_whitespace();
            let head = tokens.next().unwrap_or("");
            let rest: Vec<&str> = tokens.collect();
            let shape = match head {
                "box" => {
                    let f = r.floats("box", &rest, 3)?;
                    Primitive::Box { half: Vector3::new(f[0], f[1], f[2]) }
                }
                "cylinder" => {
                    let f = r.floats("cylinder", &rest, 2)?;
                    Primitive::Cylinder { radius: f[0], half_height: f[1] }
                }
                "torus" => {
                    let f = r.floats("torus", &rest, 4)?;
                    Primitive::TorusSegment { major: f[0], minor: f[1], arc: (f[2], f[3]) }
                }
                other => {
                    return Err(Error::Format {
                        what: format!("scene spec {origin}"),
                        details: format!("unknown part kind {other}"),
                    })
                }
            };
            let part_pose = r.pose("part-pose")?;
            parts.push(PlacedPrimitive { shape, pose: part_pose });
        }
        objects.push(SceneObject { kind, pose, parts });
    }
    Ok(PrimitiveScene { objects })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::exp_so3;

    fn sample_scene() -> PrimitiveScene {
        let pose = Pose::new(
            exp_so3(&Vector3::new(0.0, 0.0, 0.7)),
            Vector3::new(0.12, 0.2, 0.035),
        );
        let body = PlacedPrimitive {
            shape: Primitive::Cylinder { radius: 0.03, half_height: 0.035 },
            pose: pose.clone(),
        };
        let handle_pose = pose.compose(&Pose::new(
            nalgebra::Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0),
            Vector3::new(0.03, 0.0, 0.0),
        ));
        let handle = PlacedPrimitive {
            shape: Primitive::TorusSegment { major: 0.02, minor: 0.005, arc: (-1.9, 1.9) },
            pose: handle_pose,
        };
        PrimitiveScene {
            objects: vec![
                SceneObject { kind: ObjectKind::Mug, pose, parts: vec![body, handle] },
                SceneObject {
                    kind: ObjectKind::Box,
                    pose: Pose::new(nalgebra::Matrix3::identity(), Vector3::new(0.22, 0.1, 0.02)),
                    parts: vec![PlacedPrimitive {
                        shape: Primitive::Box { half: Vector3::new(0.02, 0.015, 0.02) },
                        pose: Pose::new(nalgebra::Matrix3::identity(), Vector3::new(0.22, 0.1, 0.02)),
                    }],
                },
            ],
        }
    }

    #[test]
    fn scene_spec_round_trips_bit_exact() {
        let scene = sample_scene();
        let text = scene_to_spec(&scene);
        let back = scene_from_spec(&text, "test").unwrap();
        assert_eq!(back.objects.len(), scene.objects.len());
        for (a, b) in scene.objects.iter().zip(&back.objects) {
            assert_eq!(a.kind, b.kind);
            assert_eq!(a.pose.to_floats(), b.pose.to_floats());
            assert_eq!(a.parts.len(), b.parts.len());
            for (pa, pb) in a.parts.iter().zip(&b.parts) {
                assert_eq!(pa.shape, pb.shape);
                assert_eq!(pa.pose.to_floats(), pb.pose.to_floats());
            }
        }
        // And the re-serialization is byte-identical.
        assert_eq!(scene_to_spec(&back), text);
    }

    #[test]
    fn scene_spec_rejects_garbage() {
        assert!(scene_from_spec("", "t").is_err());
        assert!(scene_from_spec("scene 2\nobjects 0\n", "t").is_err());
        assert!(scene_from_spec("scene 1\nobjects 1\nkind sphere\n", "t").is_err());
    }

    #[test]
    fn cloud_file_round_trip() {
        let cloud = PointCloud {
            points: vec![
                Vector3::new(0.1, 0.2, 0.3),
                Vector3::new(-0.05, 0.0, 0.125),
            ],
        };
        let bytes = cloud_to_bytes(&cloud);
        let back = cloud_from_bytes(&bytes, "mem").unwrap();
        assert_eq!(back.len(), 2);
        // f32 quantization applies; 0.125 survives exactly.
        assert_eq!(back.points[1].z, 0.125);
        assert!((back.points[0].x - 0.1).abs() < 1e-7);
        assert!(cloud_from_bytes(&bytes[..10], "mem").is_err());
    }

    #[test]
    fn grid_file_round_trip() {
        let mut grid = OccupancyGrid::empty(Pose::identity());
        grid.counts[OccupancyGrid::index(1, 2, 3)] = 9;
        grid.counts[OccupancyGrid::index(63, 63, 63)] = 2;
        let bytes = grid_to_bytes(&grid);
        let back = grid_from_bytes(&bytes, "mem").unwrap();
        assert_eq!(back, grid);
    }
}
