//! Labeled scene and pose generation: randomized primitive scenes, antipodal
//! grasp candidates, feasibility filtering, and analytic descriptor
//! annotation.

pub mod container;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::scene::{
    add_noise, fps_downsample, raycast_depth, voxelize, Camera, ObjectKind, OccupancyGrid,
    PlacedPrimitive, PointCloud, Primitive, PrimitiveScene, SceneObject, SurfaceSample,
    WORKSPACE_EDGE,
};
use crate::se3::Pose;
use crate::{Error, Result};

/// Target task, one-hot encoded as network conditioning.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskId {
    Grasp,
    UprightPlace,
    TopDescriptor,
}

impl TaskId {
    pub const ALL: [TaskId; 3] = [TaskId::Grasp, TaskId::UprightPlace, TaskId::TopDescriptor];

    pub fn index(self) -> usize {
        match self {
            TaskId::Grasp => 0,
            TaskId::UprightPlace => 1,
            TaskId::TopDescriptor => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<TaskId> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or(Error::Format { what: "task index".into(), details: i.to_string() })
    }

    pub fn one_hot(self) -> [f32; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskId::Grasp => "grasp",
            TaskId::UprightPlace => "upright",
            TaskId::TopDescriptor => "top",
        }
    }

    pub fn parse(s: &str) -> Result<TaskId> {
        match s {
            "grasp" => Ok(TaskId::Grasp),
            "upright" => Ok(TaskId::UprightPlace),
            "top" => Ok(TaskId::TopDescriptor),
            other => Err(Error::Config { what: format!("unknown task {other}") }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoseLabel {
    Positive,
    Negative,
}

/// Where a labeled pose came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Antipodal,
    Annotation,
    FeasibilityFail,
    NoiseNegative,
}

impl Provenance {
    pub fn tag(self) -> u8 {
        match self {
            Provenance::Antipodal => 0,
            Provenance::Annotation => 1,
            Provenance::FeasibilityFail => 2,
            Provenance::NoiseNegative => 3,
        }
    }

    pub fn from_tag(t: u8) -> Result<Provenance> {
        match t {
            0 => Ok(Provenance::Antipodal),
            1 => Ok(Provenance::Annotation),
            2 => Ok(Provenance::FeasibilityFail),
            3 => Ok(Provenance::NoiseNegative),
            other => Err(Error::Format { what: "provenance tag".into(), details: other.to_string() }),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LabeledPose {
    pub pose: Pose,
    pub task: TaskId,
    pub label: PoseLabel,
    pub provenance: Provenance,
}

/// Everything stored per scene.
#[derive(Clone, Debug)]
pub struct SceneRecord {
    pub scene: PrimitiveScene,
    pub grid: OccupancyGrid,
    pub cloud: PointCloud,
    pub poses: Vec<LabeledPose>,
}

/// Parallel-jaw gripper model used for sampling and clearance checks,
/// dimensions in meters. The body is three boxes in the grasp frame
/// (x = closing axis, z = approach axis, fingertips at z = 0): two fingers
/// at the full opening and a palm bar behind them.
#[derive(Clone, Copy, Debug)]
pub struct GripperConfig {
    pub max_width: f64,
    pub finger_length: f64,
    pub finger_thickness: f64,
    pub finger_depth: f64,
    pub palm_thickness: f64,
    pub clearance: f64,
}

impl Default for GripperConfig {
    fn default() -> Self {
        GripperConfig {
            max_width: 0.08,
            finger_length: 0.04,
            finger_thickness: 0.01,
            finger_depth: 0.02,
            palm_thickness: 0.012,
            clearance: 0.002,
        }
    }
}

impl GripperConfig {
    /// Gripper body as grasp-frame boxes: (center, half-extents).
    pub fn body_boxes(&self) -> [(Vector3<f64>, Vector3<f64>); 3] {
        let w2 = self.max_width * 0.5;
        let th = self.finger_thickness;
        let fd2 = self.finger_depth * 0.5;
        let fl = self.finger_length;
        let pt = self.palm_thickness;
        [
            (
                Vector3::new(w2 + th * 0.5, 0.0, -fl * 0.5),
                Vector3::new(th * 0.5, fd2, fl * 0.5),
            ),
            (
                Vector3::new(-(w2 + th * 0.5), 0.0, -fl * 0.5),
                Vector3::new(th * 0.5, fd2, fl * 0.5),
            ),
            (
                Vector3::new(0.0, 0.0, -fl - pt * 0.5),
                Vector3::new(w2 + th, fd2, pt * 0.5),
            ),
        ]
    }
}

/// Dataset generation knobs. Defaults are the desk-scale protocol.
#[derive(Clone, Debug)]
pub struct GenConfig {
    pub scenes: usize,
    pub seed: u64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub kinds: Vec<ObjectKind>,
    pub grasps_per_object: usize,
    pub max_grasp_attempts: usize,
    pub friction_cone_deg: f64,
    pub gripper: GripperConfig,
    pub fps_points: usize,
    pub noise_std: f64,
    pub camera_distance: f64,
    pub camera_elevation_deg: f64,
    pub camera_fov_deg: f64,
    pub image_size: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            scenes: 500,
            seed: 1,
            min_objects: 1,
            max_objects: 5,
            kinds: vec![ObjectKind::Box, ObjectKind::Cylinder, ObjectKind::Mug],
            grasps_per_object: 8,
            max_grasp_attempts: 3000,
            friction_cone_deg: 15.0,
            gripper: GripperConfig::default(),
            fps_points: 2000,
            noise_std: 0.005,
            camera_distance: 0.55,
            camera_elevation_deg: 45.0,
            camera_fov_deg: 60.0,
            image_size: 120,
        }
    }
}

/// An object in its canonical frame: origin at the body center, base resting
/// plane at `base_z`, top face at `top_z`. Part poses are relative to this
/// frame.
#[derive(Clone, Debug)]
pub struct ObjectTemplate {
    pub kind: ObjectKind,
    pub parts: Vec<PlacedPrimitive>,
    pub base_z: f64,
    pub top_z: f64,
    /// For mug-like objects, the wall point where the handle attaches,
    /// in the canonical frame.
    pub handle_root: Option<Vector3<f64>>,
}

/// Rotation mapping the handle torus frame (tube ring in its local x-y
/// plane) into the body frame so the ring lies in the body's x-z plane.
fn handle_rotation() -> Matrix3<f64> {
    Matrix3::new(
        1.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, //
        0.0, -1.0, 0.0,
    )
}

pub fn random_template(kind: ObjectKind, rng: &mut impl Rng) -> ObjectTemplate {
    match kind {
        ObjectKind::Box => {
            let half = Vector3::new(
                rng.gen_range(0.012..0.034),
                rng.gen_range(0.012..0.034),
                rng.gen_range(0.015..0.04),
            );
            ObjectTemplate {
                kind,
                parts: vec![PlacedPrimitive {
                    shape: Primitive::Box { half },
                    pose: Pose::identity(),
                }],
                base_z: -half.z,
                top_z: half.z,
                handle_root: None,
            }
        }
        ObjectKind::Cylinder => {
            let radius = rng.gen_range(0.012..0.035);
            let half_height = rng.gen_range(0.02..0.05);
            ObjectTemplate {
                kind,
                parts: vec![PlacedPrimitive {
                    shape: Primitive::Cylinder { radius, half_height },
                    pose: Pose::identity(),
                }],
                base_z: -half_height,
                top_z: half_height,
                handle_root: None,
            }
        }
        ObjectKind::Mug => {
            let radius = rng.gen_range(0.024..0.034);
            let half_height = rng.gen_range(0.03..0.045);
            let major = half_height * rng.gen_range(0.5..0.62);
            let minor = rng.gen_range(0.005..0.0065);
            let arc_half = 100f64.to_radians();
            let body = PlacedPrimitive {
                shape: Primitive::Cylinder { radius, half_height },
                pose: Pose::identity(),
            };
            let handle = PlacedPrimitive {
                shape: Primitive::TorusSegment { major, minor, arc: (-arc_half, arc_half) },
                pose: Pose::new(handle_rotation(), Vector3::new(radius, 0.0, 0.0)),
            };
            ObjectTemplate {
                kind,
                parts: vec![body, handle],
                base_z: -half_height,
                top_z: half_height,
                handle_root: Some(Vector3::new(radius, 0.0, 0.0)),
            }
        }
    }
}

impl ObjectTemplate {
    /// Largest ground-plane radius over the parts, for placement rejection.
    pub fn footprint_radius(&self) -> f64 {
        self.parts
            .iter()
            .map(|p| p.pose.translation.norm() + p.shape.bounding_radius())
            .fold(0.0, f64::max)
    }

    /// Instantiates the object standing on the ground at (x, y) with the
    /// given yaw.
    pub fn place(&self, x: f64, y: f64, yaw: f64) -> SceneObject {
        let rot = Matrix3::new(
            yaw.cos(), -yaw.sin(), 0.0, //
            yaw.sin(), yaw.cos(), 0.0, //
            0.0, 0.0, 1.0,
        );
        let pose = Pose::new(rot, Vector3::new(x, y, -self.base_z));
        let parts = self
            .parts
            .iter()
            .map(|p| PlacedPrimitive { shape: p.shape.clone(), pose: pose.compose(&p.pose) })
            .collect();
        SceneObject { kind: self.kind, pose, parts }
    }
}

/// Rejection-samples non-overlapping upright placements. Objects that fail
/// to fit after many tries are dropped, so the result can hold fewer objects
/// than requested (never zero when at least one was requested).
pub fn place_objects(
    templates: &[ObjectTemplate],
    rng: &mut impl Rng,
) -> (PrimitiveScene, Vec<ObjectTemplate>) {
    let mut placed: Vec<(f64, f64, f64)> = Vec::new(); // x, y, radius
    let mut scene = PrimitiveScene::default();
    let mut kept = Vec::new();
    for template in templates {
        let r = template.footprint_radius();
        let margin = r + 0.01;
        if margin * 2.0 >= WORKSPACE_EDGE {
            continue;
        }
        let mut found = None;
        for _ in 0..120 {
            let x = rng.gen_range(margin..WORKSPACE_EDGE - margin);
            let y = rng.gen_range(margin..WORKSPACE_EDGE - margin);
            let clear = placed
                .iter()
                .all(|&(px, py, pr)| ((x - px).powi(2) + (y - py).powi(2)).sqrt() > pr + r + 0.005);
            if clear {
                found = Some((x, y));
                break;
            }
        }
        if let Some((x, y)) = found {
            let yaw = rng.gen_range(0.0..std::f64::consts::TAU);
            scene.objects.push(template.place(x, y, yaw));
            placed.push((x, y, r));
            kept.push(template.clone());
        }
    }
    (scene, kept)
}

/// Antipodal acceptance test: the closing direction must lie inside both
/// contact friction cones and the contacts must fit in the gripper.
pub fn antipodal_ok(
    c1: &Vector3<f64>,
    n1: &Vector3<f64>,
    c2: &Vector3<f64>,
    n2: &Vector3<f64>,
    max_width: f64,
    cone_half_angle_rad: f64,
) -> bool {
    let sep = c2 - c1;
    let dist = sep.norm();
    if dist < 1e-6 || dist >= max_width {
        return false;
    }
    let u = sep / dist;
    let cos_cone = cone_half_angle_rad.cos();
    // u points from contact 1 into the object, -u from contact 2.
    n1.dot(&-u) >= cos_cone && n2.dot(&u) >= cos_cone
}

/// Uniform direction inside a cone of half-angle `alpha` around `axis`.
fn sample_cone(axis: &Vector3<f64>, alpha: f64, rng: &mut impl Rng) -> Vector3<f64> {
    let cos_a = alpha.cos();
    let c = rng.gen_range(cos_a..=1.0);
    let s = (1.0 - c * c).max(0.0).sqrt();
    let psi = rng.gen_range(0.0..std::f64::consts::TAU);
    let (ax, bx) = orthonormal_basis(axis);
    axis * c + (ax * psi.cos() + bx * psi.sin()) * s
}

/// Any orthonormal pair completing `v` (unit) to a right-handed frame.
fn orthonormal_basis(v: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if v.x.abs() < 0.9 {
        Vector3::new(1.0, 0.0, 0.0)
    } else {
        Vector3::new(0.0, 1.0, 0.0)
    };
    let a = v.cross(&helper).normalize();
    let b = v.cross(&a);
    (a, b)
}

/// Draws antipodal grasp poses on one placed primitive. Grasp frame:
/// x = closing axis, z = approach axis (direction the gripper moves in),
/// translation at the midpoint between contacts. The approach direction is
/// sampled uniformly in the plane normal to the closing axis; feasibility
/// filtering decides which approaches survive.
pub fn sample_antipodal_grasps(
    part: &PlacedPrimitive,
    n: usize,
    gripper: &GripperConfig,
    cone_half_angle_rad: f64,
    max_attempts: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Pose>> {
    let mut out = Vec::new();
    for _attempt in 0..max_attempts {
        if out.len() >= n {
            break;
        }
        let s = part.sample_surface_world(rng);
        let u = sample_cone(&(-s.normal), cone_half_angle_rad, rng);
        // March along u through the material to the exit surface.
        let lo = part.pose.inverse_act(&s.point);
        let ld = part.pose.rotation.transpose() * u;
        let crossings = part.shape.ray_crossings(&lo, &ld);
        let Some(hit) = crossings.into_iter().find(|h| h.t > 1e-6) else {
            continue;
        };
        let c2 = s.point + u * hit.t;
        let n2 = part.pose.rotation * hit.normal;
        if !antipodal_ok(&s.point, &s.normal, &c2, &n2, gripper.max_width, cone_half_angle_rad) {
            continue;
        }
        let x_axis = (c2 - s.point).normalize();
        let (a, b) = orthonormal_basis(&x_axis);
        let psi = rng.gen_range(0.0..std::f64::consts::TAU);
        let z_axis = a * psi.cos() + b * psi.sin();
        let y_axis = z_axis.cross(&x_axis);
        let rotation = Matrix3::from_columns(&[x_axis, y_axis, z_axis]);
        let translation = (s.point + c2) * 0.5;
        out.push(Pose::new(rotation, translation));
    }
    if out.is_empty() {
        return Err(Error::NoGraspFound { attempts: max_attempts });
    }
    Ok(out)
}

/// Outcome of the three feasibility checks; a grasp is usable when all pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeasibilityResult {
    /// The grasp is physically executable: the gripper body (at full
    /// opening) stays above the ground and clear of every scene primitive,
    /// and the closing sweep reaches same-object contacts that satisfy the
    /// antipodal predicate. The second half matters in clutter, where a
    /// neighboring object can sit between the open fingers without touching
    /// them and still block the closing motion.
    pub collision_free: bool,
    /// Approach axis points downward (into the table).
    pub approach_down: bool,
    /// The approach ray's first surface intersection is near an observed
    /// cloud point.
    pub visible: bool,
}

impl FeasibilityResult {
    pub fn passed(&self) -> bool {
        self.collision_free && self.approach_down && self.visible
    }
}

/// Lattice of probe points over a grasp-frame box, in world coordinates.
pub(crate) fn box_probes(
    grasp: &Pose,
    center: &Vector3<f64>,
    half: &Vector3<f64>,
    steps: [usize; 3],
) -> Vec<Vector3<f64>> {
    let mut pts = Vec::with_capacity(steps[0] * steps[1] * steps[2]);
    for i in 0..steps[0] {
        for j in 0..steps[1] {
            for k in 0..steps[2] {
                let f = |idx: usize, n: usize| {
                    if n == 1 {
                        0.0
                    } else {
                        idx as f64 / (n - 1) as f64 * 2.0 - 1.0
                    }
                };
                let local = center
                    + Vector3::new(f(i, steps[0]) * half.x, f(j, steps[1]) * half.y, f(k, steps[2]) * half.z);
                pts.push(grasp.act(&local));
            }
        }
    }
    pts
}

/// Contacts produced by closing the fingers from full opening along the
/// grasp x-axis centerline. Each side takes the first surface crossing
/// within half the opening; both sides must land on the same object, and a
/// finger may not start inside any solid. Returns the contacted object
/// index with the contacts in (-x side, +x side) order.
pub fn closing_contacts(
    scene: &PrimitiveScene,
    grasp: &Pose,
    max_width: f64,
) -> Option<(usize, SurfaceSample, SurfaceSample)> {
    let x = grasp.rotation.column(0).into_owned();
    let reach = max_width / 2.0;
    let mut hits = Vec::with_capacity(2);
    for sign in [-1.0, 1.0] {
        let o = grasp.translation + x * (sign * reach);
        let d = -x * sign;
        if scene.objects.iter().any(|obj| obj.sdf_world(&o) < 0.0) {
            return None;
        }
        let mut best: Option<(f64, Vector3<f64>, usize)> = None;
        for (i, obj) in scene.objects.iter().enumerate() {
            if let Some((t, n, _)) = obj.ray_first_hit_world(&o, &d) {
                if best.map_or(true, |(bt, _, _)| t < bt) {
                    best = Some((t, n, i));
                }
            }
        }
        let (t, n, i) = best?;
        if t > reach {
            return None;
        }
        hits.push((SurfaceSample { point: o + d * t, normal: n }, i));
    }
    if hits[0].1 != hits[1].1 {
        return None;
    }
    Some((hits[0].1, hits[0].0, hits[1].0))
}

pub fn check_feasibility(
    grasp: &Pose,
    scene: &PrimitiveScene,
    cloud: &PointCloud,
    gripper: &GripperConfig,
    cone: f64,
    visibility_tol: f64,
) -> FeasibilityResult {
    let approach_world = grasp.rotation.column(2).into_owned();
    let approach_down = approach_world.dot(&Vector3::new(0.0, 0.0, -1.0)) > 0.0;

    let mut collision_free = true;
    'boxes: for (center, half) in gripper.body_boxes() {
        let steps = if half.x > half.z { [7, 3, 3] } else { [3, 3, 7] };
        for p in box_probes(grasp, &center, &half, steps) {
            if p.z < 0.0 {
                collision_free = false;
                break 'boxes;
            }
            for obj in &scene.objects {
                if obj.sdf_world(&p) < gripper.clearance {
                    collision_free = false;
                    break 'boxes;
                }
            }
        }
    }
    if collision_free {
        collision_free = closing_contacts(scene, grasp, gripper.max_width).map_or(
            false,
            |(_, low, high)| {
                antipodal_ok(
                    &low.point,
                    &low.normal,
                    &high.point,
                    &high.normal,
                    gripper.max_width,
                    cone,
                )
            },
        );
    }

    // Walk the approach ray from behind the grasp toward the scene; the
    // first surface it meets must have been observed by the camera.
    let back = 0.15;
    let origin = grasp.translation - approach_world * back;
    let mut first: Option<f64> = None;
    for obj in &scene.objects {
        if let Some((t, _, _)) = obj.ray_first_hit_world(&origin, &approach_world) {
            if first.map_or(true, |bt| t < bt) {
                first = Some(t);
            }
        }
    }
    let visible = match first {
        None => false,
        Some(t) => {
            let hit = origin + approach_world * t;
            let mut best = f64::INFINITY;
            for p in &cloud.points {
                let d = (p - hit).norm();
                if d < best {
                    best = d;
                }
            }
            best <= visibility_tol
        }
    };

    FeasibilityResult { collision_free, approach_down, visible }
}

/// Analytic descriptor poses in the object's canonical frame.
///
/// UprightPlace: base center, z up, 16 yaw steps. TopDescriptor: top center
/// with 16 yaw steps, except mug-like objects, which get the single
/// handle-root pose with x pointing toward the handle.
pub fn annotate_descriptors(template: &ObjectTemplate) -> Vec<(TaskId, Pose)> {
    let mut out = Vec::new();
    let yaw_pose = |z: f64, k: usize| {
        let yaw = k as f64 / 16.0 * std::f64::consts::TAU;
        let rot = Matrix3::new(
            yaw.cos(), -yaw.sin(), 0.0, //
            yaw.sin(), yaw.cos(), 0.0, //
            0.0, 0.0, 1.0,
        );
        Pose::new(rot, Vector3::new(0.0, 0.0, z))
    };
    for k in 0..16 {
        out.push((TaskId::UprightPlace, yaw_pose(template.base_z, k)));
    }
    match template.handle_root {
        Some(root) => {
            out.push((TaskId::TopDescriptor, Pose::new(Matrix3::identity(), root)));
        }
        None => {
            for k in 0..16 {
                out.push((TaskId::TopDescriptor, yaw_pose(template.top_z, k)));
            }
        }
    }
    out
}

/// Per-scene generation report, for logging.
#[derive(Clone, Debug, Default)]
pub struct GenStats {
    pub scenes_built: usize,
    pub scenes_skipped: usize,
    pub positives: usize,
    pub negatives: usize,
}

/// Deterministic per-scene stream: scene i derives its own generator, so a
/// subset regeneration reproduces the full run's scenes bit for bit.
fn scene_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Snaps coordinates to f32 precision so in-memory data equals its stored
/// form and label revalidation over a reloaded dataset is exact.
/// One simulated capture: orbit camera raycast, farthest-point
/// downsampling, sensor noise, f32 quantization, voxelization.
pub fn capture_scene(
    scene: &PrimitiveScene,
    cfg: &GenConfig,
    azimuth: f64,
    rng: &mut impl Rng,
) -> Result<(PointCloud, OccupancyGrid)> {
    let camera = Camera::orbit(
        Vector3::new(WORKSPACE_EDGE * 0.5, WORKSPACE_EDGE * 0.5, 0.02),
        cfg.camera_distance,
        cfg.camera_elevation_deg.to_radians(),
        azimuth,
        cfg.camera_fov_deg.to_radians(),
        cfg.image_size,
        cfg.image_size,
    );
    let cloud = raycast_depth(scene, &camera)?;
    let cloud = fps_downsample(&cloud, cfg.fps_points);
    let cloud = add_noise(&cloud, cfg.noise_std, rng);
    let cloud = quantize_cloud(&cloud);
    let grid = voxelize(&cloud, &Pose::identity());
    Ok((cloud, grid))
}

fn quantize_cloud(cloud: &PointCloud) -> PointCloud {
    PointCloud {
        points: cloud
            .points
            .iter()
            .map(|p| Vector3::new(p.x as f32 as f64, p.y as f32 as f64, p.z as f32 as f64))
            .collect(),
    }
}

pub fn generate_scene_record(cfg: &GenConfig, index: usize) -> Result<SceneRecord> {
    let mut rng = scene_rng(cfg.seed, index);
    for _retry in 0..6 {
        let n_obj = rng.gen_range(cfg.min_objects..=cfg.max_objects);
        let templates: Vec<ObjectTemplate> = (0..n_obj)
            .map(|_| {
                let kind = cfg.kinds[rng.gen_range(0..cfg.kinds.len())];
                random_template(kind, &mut rng)
            })
            .collect();
        let (scene, kept) = place_objects(&templates, &mut rng);
        if scene.objects.is_empty() {
            continue;
        }
        scene.validate()?;
        let azimuth = rng.gen_range(0.0..std::f64::consts::TAU);
        let Ok((cloud, grid)) = capture_scene(&scene, cfg, azimuth, &mut rng) else {
            continue;
        };

        let cone = cfg.friction_cone_deg.to_radians();
        let mut poses = Vec::new();
        for (obj, template) in scene.objects.iter().zip(&kept) {
            // Grasp candidates per part, proportional to surface area.
            let total_area: f64 = obj.parts.iter().map(|p| p.shape.surface_area()).sum();
            let mut fails = Vec::new();
            let mut kept_grasps = 0usize;
            for part in &obj.parts {
                let share = part.shape.surface_area() / total_area;
                let want = ((cfg.grasps_per_object as f64 * share).round() as usize).max(1);
                // Feasibility passes only a small fraction of antipodal
                // candidates (steep visible approaches that clear the scene),
                // so oversample generously and stop once the quota is met.
                let candidates = match sample_antipodal_grasps(
                    part,
                    want * 30,
                    &cfg.gripper,
                    cone,
                    cfg.max_grasp_attempts,
                    &mut rng,
                ) {
                    Ok(c) => c,
                    Err(Error::NoGraspFound { .. }) => continue,
                    Err(e) => return Err(e),
                };
                let mut part_kept = 0usize;
                for pose in candidates {
                    if part_kept >= want || kept_grasps >= cfg.grasps_per_object {
                        break;
                    }
                    let res = check_feasibility(&pose, &scene, &cloud, &cfg.gripper, cone, 0.005);
                    if res.passed() {
                        poses.push(LabeledPose {
                            pose,
                            task: TaskId::Grasp,
                            label: PoseLabel::Positive,
                            provenance: Provenance::Antipodal,
                        });
                        kept_grasps += 1;
                        part_kept += 1;
                    } else {
                        fails.push(pose);
                    }
                }
            }
            // Feasibility failures become negatives, at most one per kept
            // positive to bound the class imbalance.
            for pose in fails.into_iter().take(kept_grasps) {
                poses.push(LabeledPose {
                    pose,
                    task: TaskId::Grasp,
                    label: PoseLabel::Negative,
                    provenance: Provenance::FeasibilityFail,
                });
            }
            for (task, local) in annotate_descriptors(template) {
                poses.push(LabeledPose {
                    pose: obj.pose.compose(&local),
                    task,
                    label: PoseLabel::Positive,
                    provenance: Provenance::Annotation,
                });
            }
        }
        return Ok(SceneRecord { scene, grid, cloud, poses });
    }
    Err(Error::Domain { what: format!("scene {index}: no valid arrangement found") })
}

pub fn generate_dataset(cfg: &GenConfig) -> Result<(Vec<SceneRecord>, GenStats)> {
    let mut records = Vec::with_capacity(cfg.scenes);
    let mut stats = GenStats::default();
    for i in 0..cfg.scenes {
        match generate_scene_record(cfg, i) {
            Ok(rec) => {
                for p in &rec.poses {
                    match p.label {
                        PoseLabel::Positive => stats.positives += 1,
                        PoseLabel::Negative => stats.negatives += 1,
                    }
                }
                stats.scenes_built += 1;
                records.push(rec);
            }
            Err(Error::Domain { .. }) | Err(Error::NoGraspFound { .. }) | Err(Error::EmptyView) => {
                stats.scenes_skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok((records, stats))
}
