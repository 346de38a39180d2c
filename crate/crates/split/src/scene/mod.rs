//! Synthetic scene capture: primitive scenes on a ground plane, a pinhole
//! depth camera, point-cloud processing, and the occupancy grid the encoder
//! consumes.
//!
//! Grid memory layout is `[channel][z][y][x]` with x fastest, matching the
//! tensor convention `[C, D, H, W]` used by the convolution stack. Grid
//! coordinates follow the cell-center convention: continuous coordinate
//! `g = p / voxel - 0.5` puts integer values at cell centers.

pub mod io;
pub mod primitives;
mod quartic;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{gather_forward, Tensor};
use crate::se3::Pose;
use crate::{Error, Result};

pub use primitives::{PlacedPrimitive, Primitive, SurfaceSample};

pub const GRID_DIM: usize = 64;
pub const WORKSPACE_EDGE: f64 = 0.3;
pub const VOXEL_SIZE: f64 = WORKSPACE_EDGE / GRID_DIM as f64;
/// Cell counts are divided by this cap (then clamped to 1) when the grid is
/// turned into network input, keeping activations bounded.
pub const OCCUPANCY_CAP: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectKind {
    Box,
    Cylinder,
    Mug,
}

impl ObjectKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Box => "box",
            ObjectKind::Cylinder => "cylinder",
            ObjectKind::Mug => "mug",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "box" => Ok(ObjectKind::Box),
            "cylinder" => Ok(ObjectKind::Cylinder),
            "mug" => Ok(ObjectKind::Mug),
            other => Err(Error::Format {
                what: "object kind".into(),
                details: other.to_string(),
            }),
        }
    }
}

/// One object: a single primitive, or several rigidly attached parts (a
/// mug-like object is a cylinder body plus a torus-segment handle). Part
/// poses are world poses; `pose` is the object's own frame, used to attach
/// candidate poses.
#[derive(Clone, Debug)]
pub struct SceneObject {
    pub kind: ObjectKind,
    pub pose: Pose,
    pub parts: Vec<PlacedPrimitive>,
}

impl SceneObject {
    pub fn sdf_world(&self, p: &Vector3<f64>) -> f64 {
        self.parts
            .iter()
            .map(|part| part.sdf_world(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// First hit over all parts: (t, world normal, part index).
    pub fn ray_first_hit_world(
        &self,
        o: &Vector3<f64>,
        d: &Vector3<f64>,
    ) -> Option<(f64, Vector3<f64>, usize)> {
        let mut best: Option<(f64, Vector3<f64>, usize)> = None;
        for (i, part) in self.parts.iter().enumerate() {
            if let Some((t, n)) = part.ray_first_hit_world(o, d) {
                if best.map_or(true, |(bt, _, _)| t < bt) {
                    best = Some((t, n, i));
                }
            }
        }
        best
    }

    /// Radius of a ground-plane disk around the object pose that bounds all
    /// parts, for overlap rejection at placement time.
    pub fn footprint_radius(&self) -> f64 {
        self.parts
            .iter()
            .map(|part| {
                let offset = (part.pose.translation - self.pose.translation).norm();
                offset + part.shape.bounding_radius()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, Default)]
pub struct PrimitiveScene {
    pub objects: Vec<SceneObject>,
}

impl PrimitiveScene {
    /// Conservative containment check: every part stays above the ground
    /// plane and inside the workspace box, via per-shape support bounds.
    pub fn validate(&self) -> Result<()> {
        for (i, obj) in self.objects.iter().enumerate() {
            for part in &obj.parts {
                let c = part.pose.translation;
                let r = part.shape.bounding_radius();
                let min_z = match &part.shape {
                    Primitive::Box { half } => {
                        let row = part.pose.rotation.row(2);
                        c.z - (row[0].abs() * half.x + row[1].abs() * half.y + row[2].abs() * half.z)
                    }
                    Primitive::Cylinder { radius, half_height } => {
                        let az = part.pose.rotation[(2, 2)];
                        c.z - half_height * az.abs() - radius * (1.0 - az * az).max(0.0).sqrt()
                    }
                    Primitive::TorusSegment { .. } => c.z - r,
                };
                if min_z < -1e-9 {
                    return Err(Error::Domain {
                        what: format!("object {i} dips below the ground plane ({min_z:.4})"),
                    });
                }
                for a in 0..3 {
                    if c[a] - r < -0.05 || c[a] + r > WORKSPACE_EDGE + 0.05 {
                        return Err(Error::Domain {
                            what: format!("object {i} leaves the workspace on axis {a}"),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Pinhole camera. The pose maps camera frame to world; camera axes are
/// x right, y down, z forward (view direction).
#[derive(Clone, Debug)]
pub struct Camera {
    pub pose: Pose,
    pub fov_y_rad: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Camera at `eye` looking at `target`, world +z used as up reference.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, fov_y_rad: f64, width: usize, height: usize) -> Camera {
        let forward = (target - eye).normalize();
        let up_world = Vector3::new(0.0, 0.0, 1.0);
        let mut right = forward.cross(&up_world);
        if right.norm() < 1e-9 {
            // Looking straight down; any horizontal right works, fixed choice.
            right = Vector3::new(1.0, 0.0, 0.0);
        } else {
            right = right.normalize();
        }
        let down = forward.cross(&right).normalize();
        let rotation = nalgebra::Matrix3::from_columns(&[right, down, forward]);
        Camera { pose: Pose::new(rotation, eye), fov_y_rad, width, height }
    }

    /// World-space unit ray through pixel (col, row), sampled at the pixel
    /// center.
    pub fn ray(&self, col: usize, row: usize) -> (Vector3<f64>, Vector3<f64>) {
        let t = (self.fov_y_rad * 0.5).tan();
        let aspect = self.width as f64 / self.height as f64;
        let x = (2.0 * (col as f64 + 0.5) / self.width as f64 - 1.0) * t * aspect;
        let y = (2.0 * (row as f64 + 0.5) / self.height as f64 - 1.0) * t;
        let dir_cam = Vector3::new(x, y, 1.0).normalize();
        (self.pose.translation, self.pose.rotation * dir_cam)
    }

    /// Standard capture rig: orbit at a given elevation and azimuth about a
    /// target point.
    pub fn orbit(
        target: Vector3<f64>,
        distance: f64,
        elevation_rad: f64,
        azimuth_rad: f64,
        fov_y_rad: f64,
        width: usize,
        height: usize,
    ) -> Camera {
        let eye = target
            + distance
                * Vector3::new(
                    elevation_rad.cos() * azimuth_rad.cos(),
                    elevation_rad.cos() * azimuth_rad.sin(),
                    elevation_rad.sin(),
                );
        Camera::look_at(eye, target, fov_y_rad, width, height)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Per-pixel nearest-surface capture. Pixels whose ray misses everything
/// contribute nothing; a capture with no hits at all is an error.
pub fn raycast_depth(scene: &PrimitiveScene, camera: &Camera) -> Result<PointCloud> {
    let mut points = Vec::new();
    for row in 0..camera.height {
        for col in 0..camera.width {
            let (o, d) = camera.ray(col, row);
            let mut best: Option<f64> = None;
            for obj in &scene.objects {
                if let Some((t, _, _)) = obj.ray_first_hit_world(&o, &d) {
                    if best.map_or(true, |bt| t < bt) {
                        best = Some(t);
                    }
                }
            }
            if let Some(t) = best {
                points.push(o + d * t);
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyView);
    }
    Ok(PointCloud { points })
}

/// Greedy farthest-point subset of size `min(n, len)`. The first seed is the
/// lowest-index point and distance ties keep the lowest index, so the result
/// is fully determined by the input order.
pub fn fps_downsample(cloud: &PointCloud, n: usize) -> PointCloud {
    assert!(n >= 1, "fps_downsample needs n >= 1");
    let pts = &cloud.points;
    if pts.len() <= n {
        return cloud.clone();
    }
    let mut selected = Vec::with_capacity(n);
    let mut dist2: Vec<f64> = Vec::with_capacity(pts.len());
    selected.push(0usize);
    for p in pts {
        dist2.push((p - pts[0]).norm_squared());
    }
    while selected.len() < n {
        let mut best_i = 0usize;
        let mut best_d = -1.0f64;
        for (i, &d2) in dist2.iter().enumerate() {
            if d2 > best_d {
                best_d = d2;
                best_i = i;
            }
        }
        selected.push(best_i);
        let np = pts[best_i];
        for (i, d2) in dist2.iter_mut().enumerate() {
            let nd = (pts[i] - np).norm_squared();
            if nd < *d2 {
                *d2 = nd;
            }
        }
    }
    PointCloud { points: selected.iter().map(|&i| pts[i]).collect() }
}

/// I.i.d. zero-mean Gaussian displacement per coordinate.
pub fn add_noise(cloud: &PointCloud, std: f64, rng: &mut impl Rng) -> PointCloud {
    assert!(std >= 0.0, "noise std must be non-negative");
    if std == 0.0 {
        return cloud.clone();
    }
    let dist = Normal::new(0.0, std).expect("valid normal");
    let points = cloud
        .points
        .iter()
        .map(|p| {
            Vector3::new(
                p.x + dist.sample(rng),
                p.y + dist.sample(rng),
                p.z + dist.sample(rng),
            )
        })
        .collect();
    PointCloud { points }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    /// `[z][y][x]`, x fastest.
    pub counts: Vec<u32>,
    pub origin: Pose,
}

impl OccupancyGrid {
    pub fn empty(origin: Pose) -> OccupancyGrid {
        OccupancyGrid { counts: vec![0; GRID_DIM * GRID_DIM * GRID_DIM], origin }
    }

    pub fn index(ix: usize, iy: usize, iz: usize) -> usize {
        (iz * GRID_DIM + iy) * GRID_DIM + ix
    }

    pub fn count_at(&self, ix: usize, iy: usize, iz: usize) -> u32 {
        self.counts[Self::index(ix, iy, iz)]
    }

    pub fn nonzero_cells(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Network input `[1, 64, 64, 64]`: counts normalized by the fixed cap.
    pub fn normalized_tensor(&self) -> Tensor<f32> {
        let data = self
            .counts
            .iter()
            .map(|&c| ((c as f64 / OCCUPANCY_CAP).min(1.0)) as f32)
            .collect();
        Tensor::from_vec(vec![1, GRID_DIM, GRID_DIM, GRID_DIM], data)
    }
}

/// Counts points per cell. Points outside the workspace are dropped, except
/// that a coordinate exactly on the upper face belongs to the last cell.
pub fn voxelize(cloud: &PointCloud, origin: &Pose) -> OccupancyGrid {
    let mut grid = OccupancyGrid::empty(origin.clone());
    for p in &cloud.points {
        let local = origin.inverse_act(p);
        let mut idx = [0usize; 3];
        let mut ok = true;
        for a in 0..3 {
            let t = local[a] / VOXEL_SIZE;
            if t < 0.0 || t > GRID_DIM as f64 {
                ok = false;
                break;
            }
            let i = t.floor() as usize;
            idx[a] = if i >= GRID_DIM { GRID_DIM - 1 } else { i };
        }
        if ok {
            grid.counts[OccupancyGrid::index(idx[0], idx[1], idx[2])] += 1;
        }
    }
    grid
}

/// Interpolates a `[C, D, H, W]` value grid at a world-space point. `origin`
/// maps grid frame to world and `voxel` is the grid's cell edge; values live
/// at cell centers and queries are clamped to the volume.
pub fn trilinear_sample(
    values: &Tensor<f32>,
    origin: &Pose,
    voxel: f64,
    p_world: &Vector3<f64>,
) -> Vec<f32> {
    let local = origin.inverse_act(p_world);
    let g = [
        local.x / voxel - 0.5,
        local.y / voxel - 0.5,
        local.z / voxel - 0.5,
    ];
    gather_forward(values, &[g]).data().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_box_scene(center: Vector3<f64>, half: f64) -> PrimitiveScene {
        PrimitiveScene {
            objects: vec![SceneObject {
                kind: ObjectKind::Box,
                pose: Pose::new(nalgebra::Matrix3::identity(), center),
                parts: vec![PlacedPrimitive {
                    shape: Primitive::Box { half: Vector3::new(half, half, half) },
                    pose: Pose::new(nalgebra::Matrix3::identity(), center),
                }],
            }],
        }
    }

    fn capture_camera() -> Camera {
        Camera::orbit(
            Vector3::new(0.15, 0.15, 0.02),
            0.55,
            45f64.to_radians(),
            -135f64.to_radians(),
            60f64.to_radians(),
            120,
            120,
        )
    }

    #[test]
    fn visible_points_face_the_camera() {
        let scene = unit_box_scene(Vector3::new(0.15, 0.15, 0.05), 0.03);
        let cam = capture_camera();
        let cloud = raycast_depth(&scene, &cam).unwrap();
        assert!(!cloud.is_empty());
        // Re-derive the normal at each point and check it faces the camera.
        let obj = &scene.objects[0];
        for p in &cloud.points {
            let to_p = (p - cam.pose.translation).normalize();
            let (_, n, _) = obj
                .ray_first_hit_world(&cam.pose.translation, &to_p)
                .expect("point must be on the object");
            assert!(n.dot(&to_p) < 1e-9, "normal facing away from camera");
        }
    }

    #[test]
    fn rear_box_is_occluded() {
        // Two boxes stacked along the view axis; look straight down the x
        // axis so the near box fully covers the far one.
        let near = unit_box_scene(Vector3::new(0.10, 0.15, 0.05), 0.03);
        let far_center = Vector3::new(0.22, 0.15, 0.05);
        let mut scene = near.clone();
        let mut far_obj = unit_box_scene(far_center, 0.02).objects.remove(0);
        far_obj.kind = ObjectKind::Box;
        scene.objects.push(far_obj);
        let cam = Camera::look_at(
            Vector3::new(-0.4, 0.15, 0.05),
            Vector3::new(0.15, 0.15, 0.05),
            40f64.to_radians(),
            120,
            120,
        );
        let cloud = raycast_depth(&scene, &cam).unwrap();
        // The far box (smaller, centered behind the near one) must be
        // completely hidden: no observed point lies on it.
        for p in &cloud.points {
            assert!(
                (p.x - 0.20).abs() > 1e-6 || (p - far_center).norm() > 0.06,
                "far box visible at {p:?}"
            );
        }
        let far_only = PrimitiveScene { objects: vec![scene.objects[1].clone()] };
        let far_cloud = raycast_depth(&far_only, &cam).unwrap();
        assert!(!far_cloud.is_empty(), "far box alone must be visible");
    }

    #[test]
    fn point_count_matches_projected_pixel_oracle() {
        // Axis-aligned box viewed head-on: a pixel hits iff its ray hits,
        // and the hit test reduces to slab intersection checked per pixel
        // by independent arithmetic.
        let half = 0.03;
        let center = Vector3::new(0.15, 0.15, 0.05);
        let scene = unit_box_scene(center, half);
        let cam = Camera::look_at(
            Vector3::new(0.15, 0.15, 0.55),
            center,
            50f64.to_radians(),
            120,
            120,
        );
        let cloud = raycast_depth(&scene, &cam).unwrap();
        // Oracle: looking straight down, a pixel ray from eye e with unit
        // direction d hits the box iff it crosses the axis-aligned slabs.
        let mut expected = 0usize;
        for row in 0..cam.height {
            for col in 0..cam.width {
                let (o, d) = cam.ray(col, row);
                let mut tmin = f64::NEG_INFINITY;
                let mut tmax = f64::INFINITY;
                for a in 0..3 {
                    let lo = center[a] - half;
                    let hi = center[a] + half;
                    if d[a].abs() < 1e-15 {
                        if o[a] < lo || o[a] > hi {
                            tmin = f64::INFINITY;
                        }
                        continue;
                    }
                    let (t1, t2) = ((lo - o[a]) / d[a], (hi - o[a]) / d[a]);
                    let (t1, t2) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
                    tmin = tmin.max(t1);
                    tmax = tmax.min(t2);
                }
                if tmin <= tmax && tmax > 0.0 {
                    expected += 1;
                }
            }
        }
        assert_eq!(cloud.len(), expected);
    }

    #[test]
    fn empty_view_errors() {
        let scene = PrimitiveScene { objects: vec![] };
        let cam = capture_camera();
        assert!(matches!(raycast_depth(&scene, &cam), Err(Error::EmptyView)));
    }

    #[test]
    fn fps_identity_when_small() {
        let cloud = PointCloud {
            points: vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)],
        };
        let out = fps_downsample(&cloud, 5);
        assert_eq!(out, cloud);
    }

    #[test]
    fn fps_square_picks_a_diagonal() {
        // Brute force over all pairs: the diagonal pairs maximize pairwise
        // distance, and FPS from the lowest-index seed must find one.
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        let out = fps_downsample(&PointCloud { points: pts.clone() }, 2);
        assert_eq!(out.points[0], pts[0]);
        assert_eq!(out.points[1], pts[2], "diagonal partner of the seed");
    }

    #[test]
    fn fps_beats_random_subsets_on_min_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts: Vec<Vector3<f64>> = (0..3000)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(0.0..0.3),
                    rng.gen_range(0.0..0.3),
                    rng.gen_range(0.0..0.1),
                )
            })
            .collect();
        let cloud = PointCloud { points: pts.clone() };
        let n = 200;
        let fps = fps_downsample(&cloud, n);
        assert_eq!(fps.len(), n);
        let min_pairwise = |s: &[Vector3<f64>]| -> f64 {
            let mut best = f64::INFINITY;
            for i in 0..s.len() {
                for j in i + 1..s.len() {
                    best = best.min((s[i] - s[j]).norm());
                }
            }
            best
        };
        let fps_min = min_pairwise(&fps.points);
        for _ in 0..100 {
            let mut subset: Vec<usize> = (0..pts.len()).collect();
            // Partial Fisher-Yates for a random n-subset.
            for i in 0..n {
                let j = rng.gen_range(i..subset.len());
                subset.swap(i, j);
            }
            let sel: Vec<Vector3<f64>> = subset[..n].iter().map(|&i| pts[i]).collect();
            assert!(min_pairwise(&sel) <= fps_min + 1e-12);
        }
    }

    #[test]
    fn noise_statistics() {
        let n = 100_000;
        let cloud = PointCloud { points: vec![Vector3::zeros(); n] };
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let noisy = add_noise(&cloud, 0.005, &mut rng);
        let mut sum = Vector3::zeros();
        let mut sum2 = 0.0f64;
        for p in &noisy.points {
            sum += p;
            sum2 += p.norm_squared();
        }
        let mean = sum / n as f64;
        // Mean displacement shrinks as std/sqrt(3N) per component budget.
        assert!(mean.norm() < 4.0 * 0.005 / (3.0 * n as f64).sqrt() * 3.0, "{mean:?}");
        let std = (sum2 / (3.0 * n as f64)).sqrt();
        assert!((std - 0.005).abs() < 0.005 * 0.02, "std {std}");
        // Zero noise is the identity.
        let same = add_noise(&cloud, 0.0, &mut rng);
        assert_eq!(same, cloud);
    }

    #[test]
    fn voxelize_center_point_rule() {
        let cloud = PointCloud { points: vec![Vector3::new(0.15, 0.15, 0.15)] };
        let grid = voxelize(&cloud, &Pose::identity());
        assert_eq!(grid.nonzero_cells(), 1);
        assert_eq!(grid.count_at(32, 32, 32), 1);
    }

    #[test]
    fn voxelize_upper_face_goes_to_last_cell() {
        let cloud = PointCloud {
            points: vec![
                Vector3::new(0.3, 0.15, 0.15),
                Vector3::new(0.3 + 1e-9, 0.15, 0.15), // just outside: dropped
                Vector3::new(-1e-12, 0.15, 0.15),     // just below zero: dropped
            ],
        };
        let grid = voxelize(&cloud, &Pose::identity());
        assert_eq!(grid.nonzero_cells(), 1);
        assert_eq!(grid.count_at(63, 32, 32), 1);
    }

    #[test]
    fn voxelize_empty_cloud() {
        let grid = voxelize(&PointCloud::default(), &Pose::identity());
        assert_eq!(grid.nonzero_cells(), 0);
    }

    #[test]
    fn voxel_shift_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        // Interior points placed away from cell boundaries so the shifted
        // coordinates cannot straddle a boundary through rounding.
        let coord = |rng: &mut ChaCha8Rng| {
            (rng.gen_range(5..40) as f64 + rng.gen_range(0.25..0.75)) * VOXEL_SIZE
        };
        let pts: Vec<Vector3<f64>> = (0..500)
            .map(|_| Vector3::new(coord(&mut rng), coord(&mut rng), coord(&mut rng)))
            .collect();
        let base = voxelize(&PointCloud { points: pts.clone() }, &Pose::identity());
        let k = 7i32;
        let shifted_pts: Vec<Vector3<f64>> = pts
            .iter()
            .map(|p| p + Vector3::new(k as f64 * VOXEL_SIZE, 0.0, 0.0))
            .collect();
        let shifted = voxelize(&PointCloud { points: shifted_pts }, &Pose::identity());
        for iz in 0..GRID_DIM {
            for iy in 0..GRID_DIM {
                for ix in 0..GRID_DIM {
                    let want = base.count_at(ix, iy, iz);
                    let sx = ix as i32 + k;
                    let got = if (0..GRID_DIM as i32).contains(&sx) {
                        shifted.count_at(sx as usize, iy, iz)
                    } else {
                        0
                    };
                    assert_eq!(got, want, "cell ({ix},{iy},{iz})");
                }
            }
        }
    }

    #[test]
    fn trilinear_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let c = 3;
        let dim = 5;
        let data: Vec<f32> = (0..c * dim * dim * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grid = Tensor::from_vec(vec![c, dim, dim, dim], data.clone());
        let voxel = 0.01;
        for _ in 0..200 {
            let p = Vector3::new(
                rng.gen_range(0.005..0.045),
                rng.gen_range(0.005..0.045),
                rng.gen_range(0.005..0.045),
            );
            let got = trilinear_sample(&grid, &Pose::identity(), voxel, &p);
            // Independent 8-corner weighted sum.
            let g = [p.x / voxel - 0.5, p.y / voxel - 0.5, p.z / voxel - 0.5];
            let i0 = [g[0].floor() as usize, g[1].floor() as usize, g[2].floor() as usize];
            let f = [g[0] - i0[0] as f64, g[1] - i0[1] as f64, g[2] - i0[2] as f64];
            for ch in 0..c {
                let mut want = 0.0f64;
                for dz in 0..2 {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let w = (if dx == 1 { f[0] } else { 1.0 - f[0] })
                                * (if dy == 1 { f[1] } else { 1.0 - f[1] })
                                * (if dz == 1 { f[2] } else { 1.0 - f[2] });
                            let idx = ((ch * dim + i0[2] + dz) * dim + i0[1] + dy) * dim
                                + i0[0] + dx;
                            want += w * data[idx] as f64;
                        }
                    }
                }
                assert!((got[ch] as f64 - want).abs() < 1e-6, "channel {ch}");
            }
        }
    }

    #[test]
    fn trilinear_node_and_edge_midpoint() {
        let dim = 4;
        let mut data = vec![0.0f32; dim * dim * dim];
        data[(2 * dim + 1) * dim + 3] = 8.0; // (x,y,z) = (3,1,2)
        data[(2 * dim + 1) * dim + 2] = 4.0; // (2,1,2)
        let grid = Tensor::from_vec(vec![1, dim, dim, dim], data);
        let voxel = 0.1;
        let at = |gx: f64, gy: f64, gz: f64| {
            let p = Vector3::new((gx + 0.5) * voxel, (gy + 0.5) * voxel, (gz + 0.5) * voxel);
            trilinear_sample(&grid, &Pose::identity(), voxel, &p)[0]
        };
        assert_eq!(at(3.0, 1.0, 2.0), 8.0);
        assert_eq!(at(2.0, 1.0, 2.0), 4.0);
        assert!((at(2.5, 1.0, 2.0) - 6.0).abs() < 1e-6);
    }

    #[test]
    fn capture_pipeline_is_deterministic() {
        let scene = unit_box_scene(Vector3::new(0.14, 0.17, 0.05), 0.03);
        let cam = capture_camera();
        let run = || {
            let cloud = raycast_depth(&scene, &cam).unwrap();
            let cloud = fps_downsample(&cloud, 500);
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let cloud = add_noise(&cloud, 0.005, &mut rng);
            voxelize(&cloud, &Pose::identity())
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn scene_validation_catches_underground() {
        let scene = unit_box_scene(Vector3::new(0.15, 0.15, 0.01), 0.03);
        assert!(scene.validate().is_err());
        let ok = unit_box_scene(Vector3::new(0.15, 0.15, 0.03), 0.03);
        ok.validate().unwrap();
    }
}
