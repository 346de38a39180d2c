//! Pose-set matching metrics, a geometric grasp oracle, and the sequential
//! decluttering protocol.
//!
//! The oracle replaces a physics simulator with closed-form geometry: a
//! grasp succeeds when closing the fingers along the grasp x-axis produces
//! same-object contacts that satisfy the antipodal friction-cone predicate,
//! and the gripper body stays clear of the ground and of every other
//! object. Success rates quoted anywhere in this crate are against this
//! oracle, not against any physics engine.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::autodiff::{ParamStore, Scalar, Tensor};
use crate::datagen::{
    antipodal_ok, box_probes, capture_scene, closing_contacts, GenConfig, GripperConfig,
    PoseLabel, SceneRecord, TaskId,
};
use crate::diffusion::{sample_poses, NoiseSchedule, RankedPose, SampleConfig};
use crate::encoder::{
    build_pyramid, encoder_param_names, extract_local_context, KERNEL_DISPLACEMENT,
};
use crate::scene::{OccupancyGrid, PrimitiveScene};
use crate::score_model::{eval_head_spec, evaluate_sample, FourierEmbedding, HeadParams};
use crate::se3::Pose;
use crate::{Error, Result};

/// A generated pose matches a ground-truth pose when both distances are
/// within these bounds. Defaults are strict relative to the smallest
/// training noise level (0.02).
#[derive(Clone, Copy, Debug)]
pub struct MatchTolerance {
    pub translation: f64,
    pub rotation: f64,
}

impl Default for MatchTolerance {
    fn default() -> Self {
        MatchTolerance { translation: 0.01, rotation: 10f64.to_radians() }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PoseSetMetrics {
    /// Fraction of ground-truth poses with a generated pose within tolerance.
    pub coverage: f64,
    /// Fraction of generated poses within tolerance of some ground-truth pose.
    pub precision: f64,
    /// Precision is reported as 0 over an empty generated set; this flag
    /// separates that case from a genuine zero.
    pub empty_generated: bool,
}

pub fn pose_set_metrics(
    generated: &[Pose],
    ground_truth: &[Pose],
    tol: &MatchTolerance,
) -> Result<PoseSetMetrics> {
    if ground_truth.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let matches = |a: &Pose, b: &Pose| {
        a.translation_distance(b) <= tol.translation && a.rotation_distance(b) <= tol.rotation
    };
    if generated.is_empty() {
        return Ok(PoseSetMetrics { coverage: 0.0, precision: 0.0, empty_generated: true });
    }
    let covered = ground_truth
        .iter()
        .filter(|gt| generated.iter().any(|g| matches(g, gt)))
        .count();
    let precise = generated
        .iter()
        .filter(|g| ground_truth.iter().any(|gt| matches(g, gt)))
        .count();
    Ok(PoseSetMetrics {
        coverage: covered as f64 / ground_truth.len() as f64,
        precision: precise as f64 / generated.len() as f64,
        empty_generated: false,
    })
}

/// ROC-AUC by the midrank formula; ties get averaged ranks, so a
/// constant-score classifier lands exactly at 0.5.
pub fn midrank_auc(samples: &[(f64, bool)]) -> Result<f64> {
    let pos = samples.iter().filter(|(_, l)| *l).count();
    let neg = samples.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClassSet);
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].0.partial_cmp(&samples[b].0).expect("finite scores"));
    let mut ranks = vec![0.0f64; samples.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && samples[order[j + 1]].0 == samples[order[i]].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    let rank_sum: f64 = samples
        .iter()
        .zip(&ranks)
        .filter(|((_, l), _)| *l)
        .map(|(_, r)| r)
        .sum();
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Fraction of samples classified correctly when predicting positive at
/// `probability >= threshold`.
pub fn accuracy_at(samples: &[(f64, bool)], threshold: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let correct = samples
        .iter()
        .filter(|(p, l)| (*p >= threshold) == *l)
        .count();
    correct as f64 / samples.len() as f64
}

#[derive(Clone, Copy, Debug)]
pub struct GraspCheck {
    pub success: bool,
    /// Contacted object index when the closing test found one.
    pub object: Option<usize>,
    /// Terse failure tag for round logs.
    pub why: &'static str,
}

/// Geometric grasp execution test. Contacts come from `closing_contacts`,
/// so they lie exactly on an object's surface; the antipodal predicate is
/// the same one the data generator uses.
pub fn grasp_oracle(
    grasp: &Pose,
    scene: &PrimitiveScene,
    gripper: &GripperConfig,
    cone: f64,
) -> GraspCheck {
    let Some((object, low, high)) = closing_contacts(scene, grasp, gripper.max_width) else {
        return GraspCheck { success: false, object: None, why: "no-contact" };
    };
    if !antipodal_ok(&low.point, &low.normal, &high.point, &high.normal, gripper.max_width, cone) {
        return GraspCheck { success: false, object: Some(object), why: "not-antipodal" };
    }
    for (center, half) in gripper.body_boxes() {
        let steps = if half.x > half.z { [7, 3, 3] } else { [3, 3, 7] };
        for p in box_probes(grasp, &center, &half, steps) {
            if p.z < 0.0 {
                return GraspCheck { success: false, object: Some(object), why: "ground" };
            }
            for (i, obj) in scene.objects.iter().enumerate() {
                if i != object && obj.sdf_world(&p) < gripper.clearance {
                    return GraspCheck { success: false, object: Some(object), why: "body" };
                }
            }
        }
    }
    GraspCheck { success: true, object: Some(object), why: "grasped" }
}

#[derive(Clone, Debug)]
pub struct RoundLog {
    pub scene: usize,
    pub round: usize,
    pub proposals: usize,
    pub top_probability: Option<f64>,
    /// "grasped", "missed", "no-proposal", or "sampler-error".
    pub outcome: &'static str,
    pub removed_object: Option<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct DeclutterResult {
    pub attempts: usize,
    pub successes: usize,
    pub objects_total: usize,
    pub objects_removed: usize,
    pub rounds: Vec<RoundLog>,
}

impl DeclutterResult {
    /// Grasp success rate: successes over executed attempts.
    pub fn gsr(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.successes as f64 / self.attempts as f64
        }
    }

    /// Declutter rate: removed objects over all objects presented.
    pub fn dr(&self) -> f64 {
        if self.objects_total == 0 {
            0.0
        } else {
            self.objects_removed as f64 / self.objects_total as f64
        }
    }
}

/// Sequential decluttering with an arbitrary proposal source. Per round:
/// re-capture the remaining scene, propose poses, execute the top proposal
/// through the oracle, and remove the grasped object. A scene ends when it
/// is empty, when no proposal clears the evaluator threshold, or after two
/// consecutive failed attempts. A sampler run that rejects every chain
/// counts as a failed attempt.
pub fn run_declutter_with<F>(
    scenes: &[PrimitiveScene],
    capture: &GenConfig,
    cone: f64,
    seed: u64,
    mut propose: F,
) -> Result<DeclutterResult>
where
    F: FnMut(&PrimitiveScene, &OccupancyGrid, u64) -> Result<Vec<RankedPose>>,
{
    let mut result = DeclutterResult::default();
    for (si, start) in scenes.iter().enumerate() {
        let mut scene = start.clone();
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (si as u64).wrapping_mul(0x9E3779B97F4A7C15));
        let azimuth = rng.gen_range(0.0..std::f64::consts::TAU);
        result.objects_total += scene.objects.len();
        let mut consecutive_failures = 0;
        let mut round = 0;
        while !scene.objects.is_empty() && consecutive_failures < 2 {
            let (_cloud, grid) = capture_scene(&scene, capture, azimuth, &mut rng)?;
            let round_seed = rng.gen::<u64>();
            let mut log = RoundLog {
                scene: si,
                round,
                proposals: 0,
                top_probability: None,
                outcome: "",
                removed_object: None,
            };
            match propose(&scene, &grid, round_seed) {
                Err(Error::AllChainsRejected) => {
                    result.attempts += 1;
                    consecutive_failures += 1;
                    log.outcome = "sampler-error";
                    result.rounds.push(log);
                }
                Err(e) => return Err(e),
                Ok(ranked) if ranked.is_empty() => {
                    log.outcome = "no-proposal";
                    result.rounds.push(log);
                    break;
                }
                Ok(ranked) => {
                    result.attempts += 1;
                    log.proposals = ranked.len();
                    log.top_probability = Some(ranked[0].probability);
                    let check = grasp_oracle(&ranked[0].pose, &scene, &capture.gripper, cone);
                    if check.success {
                        let object = check.object.expect("successful grasp names its object");
                        scene.objects.remove(object);
                        result.successes += 1;
                        result.objects_removed += 1;
                        consecutive_failures = 0;
                        log.outcome = "grasped";
                        log.removed_object = Some(object);
                    } else {
                        consecutive_failures += 1;
                        log.outcome = check.why;
                    }
                    result.rounds.push(log);
                }
            }
            round += 1;
        }
    }
    Ok(result)
}

/// Model-backed declutter run: proposals come from the annealed Langevin
/// sampler on the captured grid, grasp task only.
#[allow(clippy::too_many_arguments)]
pub fn run_declutter<S: Scalar>(
    store: &ParamStore<S>,
    fourier: &FourierEmbedding,
    schedule: &NoiseSchedule,
    sample: &SampleConfig,
    scenes: &[PrimitiveScene],
    capture: &GenConfig,
    seed: u64,
) -> Result<DeclutterResult> {
    let cone = capture.friction_cone_deg.to_radians();
    run_declutter_with(scenes, capture, cone, seed, |_, grid, round_seed| {
        let cfg = SampleConfig { seed: round_seed, ..sample.clone() };
        Ok(sample_poses(grid, store, fourier, TaskId::Grasp, schedule, &cfg)?.ranked)
    })
}

/// Evaluator probabilities with ground-truth labels for every pose of one
/// scene record, for AUC and accuracy reporting.
pub fn evaluator_scores<S: Scalar>(
    store: &ParamStore<S>,
    record: &SceneRecord,
) -> Result<Vec<(f64, bool)>> {
    let names = encoder_param_names();
    let mut weights = Vec::with_capacity(5);
    for n in &names {
        weights.push(
            store
                .get(n)
                .ok_or_else(|| Error::Config { what: format!("missing parameter {n}") })?,
        );
    }
    let grid_t: Tensor<S> = Tensor::from_f64_tensor(&record.grid.normalized_tensor().to_f64());
    let pyramid = build_pyramid(
        &grid_t,
        &[weights[0], weights[1], weights[2], weights[3], weights[4]],
    )?;
    let head = HeadParams::resolve(store, eval_head_spec())?;
    let origin = &record.grid.origin;
    let mut out = Vec::with_capacity(record.poses.len());
    for lp in &record.poses {
        let (ctx, _) = extract_local_context(&pyramid, origin, &lp.pose, KERNEL_DISPLACEMENT);
        let p = evaluate_sample(&head, &ctx, lp.task);
        out.push((p, lp.label == PoseLabel::Positive));
    }
    Ok(out)
}

/// Machine-readable run summary: headline metrics, identifying hashes, and
/// the per-round log.
pub fn write_declutter_summary(
    path: &Path,
    result: &DeclutterResult,
    config_hash: &str,
    seed: u64,
) -> Result<()> {
    let rounds: Vec<serde_json::Value> = result
        .rounds
        .iter()
        .map(|r| {
            json!({
                "scene": r.scene,
                "round": r.round,
                "proposals": r.proposals,
                "top_probability": r.top_probability,
                "outcome": r.outcome,
                "removed_object": r.removed_object,
            })
        })
        .collect();
    let doc = json!({
        "gsr": result.gsr(),
        "dr": result.dr(),
        "attempts": result.attempts,
        "successes": result.successes,
        "objects_total": result.objects_total,
        "objects_removed": result.objects_removed,
        "config_hash": config_hash,
        "seed": seed,
        "rounds": rounds,
    });
    let text = serde_json::to_string_pretty(&doc).expect("json serialization");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
