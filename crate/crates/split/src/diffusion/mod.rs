//! Annealed Langevin machinery: geometric noise schedule, forward
//! perturbation with locally parameterized score targets, the DSM training
//! loss, and the pose sampler.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId, ParamStore, Scalar, Tensor};
use crate::datagen::TaskId;
use crate::encoder::{
    build_pyramid, encoder_param_names, extract_local_context, extract_local_context_graph,
    FeaturePyramid, KERNEL_DISPLACEMENT,
};
use crate::scene::{OccupancyGrid, WORKSPACE_EDGE};
use crate::score_model::{
    predict_score, score_head_spec, eval_head_spec, evaluate_sample, head_forward_graph,
    FourierEmbedding, HeadParams, HeadSpec,
};
use crate::se3::{local_exp, re_orthonormalize, sample_tangent, Pose, TangentGaussian, Twist};
use crate::{Error, Result};

pub const SIGMA_MIN: f64 = 0.02;
pub const SIGMA_MAX: f64 = 0.1;
pub const TRAIN_LEVELS: usize = 1000;
pub const EPS_STEP: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
    alphas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn sigma(&self, k: usize) -> f64 {
        self.sigmas[k]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alphas[k]
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigmas[0]
    }
}

/// Geometric ladder from σ_min up to σ_max with α_k = ε·(σ_k/σ_max)².
/// The endpoints are written exactly rather than through the power form.
pub fn make_schedule(sigma_min: f64, sigma_max: f64, levels: usize, eps_step: f64) -> Result<NoiseSchedule> {
    if !(sigma_min > 0.0 && sigma_max > sigma_min) {
        return Err(Error::Config {
            what: format!("need 0 < sigma_min < sigma_max, got {sigma_min} and {sigma_max}"),
        });
    }
    if levels < 2 {
        return Err(Error::Config { what: format!("need at least 2 levels, got {levels}") });
    }
    if !(eps_step > 0.0) {
        return Err(Error::Config { what: format!("step scale must be positive, got {eps_step}") });
    }
    let ratio = sigma_max / sigma_min;
    let sigmas: Vec<f64> = (0..levels)
        .map(|k| {
            if k == 0 {
                sigma_min
            } else if k == levels - 1 {
                sigma_max
            } else {
                sigma_min * ratio.powf(k as f64 / (levels - 1) as f64)
            }
        })
        .collect();
    let alphas = sigmas.iter().map(|s| eps_step * (s / sigma_max).powi(2)).collect();
    Ok(NoiseSchedule { sigmas, alphas })
}

pub fn default_schedule() -> NoiseSchedule {
    make_schedule(SIGMA_MIN, SIGMA_MAX, TRAIN_LEVELS, EPS_STEP).expect("default schedule is valid")
}

/// Draws H̃ = H·Exp(v) with v ~ N(0, σ²I) and returns the score of the
/// tangent Gaussian at H̃, expressed in H̃'s own frame. The rare draw that
/// lands on the log branch cut is redrawn; σ = 0 short-circuits to the
/// exact limit.
pub fn perturb(h: &Pose, sigma: f64, rng: &mut impl Rng) -> (Pose, Twist) {
    if sigma == 0.0 {
        return (h.clone(), Twist::zeros());
    }
    let gaussian = TangentGaussian::new(h.clone(), sigma).expect("positive sigma");
    loop {
        let sample = gaussian.sample(rng);
        match gaussian.score(&sample) {
            Ok(target) => return (sample, target),
            Err(Error::NearPiRotation { .. }) => continue,
            Err(e) => unreachable!("tangent score failed: {e}"),
        }
    }
}

/// One sample-frame Langevin update: H' = H·Exp((α/2)·s + √α·ε), with the
/// rotation factor re-orthonormalized to stop drift from the group.
pub fn langevin_step(
    h: &Pose,
    score: &Twist,
    alpha: f64,
    rng: &mut impl Rng,
    noise_on: bool,
) -> Pose {
    let mut step = score * (alpha / 2.0);
    if noise_on {
        step += sample_tangent(rng, 1.0) * alpha.sqrt();
    }
    let moved = local_exp(h, &step);
    Pose::new(re_orthonormalize(&moved.rotation), moved.translation)
}

/// Mean DSM loss over one scene's positive poses, built on the tape.
/// Each item draws a uniform schedule level, perturbs its pose, and matches
/// the predicted score against the analytic target. Items whose perturbed
/// kernel leaves the workspace are dropped; the count of kept items is
/// returned with the loss node.
#[allow(clippy::too_many_arguments)]
pub fn dsm_loss_graph<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    leaves: &[NodeId],
    spec: &HeadSpec,
    fourier: &FourierEmbedding,
    levels: &[NodeId; 5],
    origin: &Pose,
    items: &[(Pose, TaskId)],
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<(NodeId, usize)> {
    let mut terms = Vec::new();
    for (pose, task) in items {
        let k = rng.gen_range(0..schedule.len());
        let sigma = schedule.sigma(k);
        let (perturbed, target) = perturb(pose, sigma, rng);
        let (ctx, outside) =
            extract_local_context_graph(g, levels, origin, &perturbed, KERNEL_DISPLACEMENT)?;
        if outside {
            continue;
        }
        let cond = HeadSpec::score_conditioning(fourier, *task, sigma);
        let predicted = head_forward_graph(g, store, leaves, spec, ctx, &cond)?;
        let target_t = Tensor::from_vec(
            vec![1, 6],
            target.iter().map(|&v| S::from_f64(v)).collect(),
        );
        let target_node = g.constant(target_t);
        let diff = g.sub(predicted, target_node)?;
        let sq = g.mul(diff, diff)?;
        terms.push(g.sum(sq));
    }
    if terms.is_empty() {
        return Err(Error::Domain { what: "every item in the batch left the workspace".into() });
    }
    let mut acc = terms[0];
    for t in &terms[1..] {
        acc = g.add(acc, *t)?;
    }
    let mean = g.affine(acc, 1.0 / terms.len() as f64, 0.0);
    Ok((mean, terms.len()))
}

/// Sampler knobs; `steps` counts annealing levels taken as an evenly
/// strided descending subset of the training schedule, followed by
/// `denoise_steps` noise-free refinement steps at the smallest σ.
#[derive(Clone, Debug)]
pub struct SampleConfig {
    pub chains: usize,
    pub steps: usize,
    pub denoise_steps: usize,
    pub threshold: f64,
    pub seed: u64,
    pub record_trajectories: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            chains: 256,
            steps: 100,
            denoise_steps: 5,
            threshold: 0.5,
            seed: 0,
            record_trajectories: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RankedPose {
    pub pose: Pose,
    pub probability: f64,
    pub task: TaskId,
}

#[derive(Clone, Debug)]
pub struct SampleOutcome {
    /// Above-threshold survivors, best probability first.
    pub ranked: Vec<RankedPose>,
    /// Chains whose final kernel left the workspace.
    pub rejected: usize,
    /// Survivors filtered out by the probability threshold.
    pub below_threshold: usize,
    /// Full per-chain pose histories when recording was requested.
    pub trajectories: Option<Vec<Vec<Pose>>>,
}

/// Descending strided level indices: the last schedule level, stepping down
/// by len/steps, `steps` entries total.
fn sampling_levels(schedule: &NoiseSchedule, steps: usize) -> Vec<usize> {
    let stride = (schedule.len() / steps).max(1);
    let mut ks = Vec::with_capacity(steps);
    let mut k = schedule.len() as i64 - 1;
    for _ in 0..steps {
        if k < 0 {
            break;
        }
        ks.push(k as usize);
        k -= stride as i64;
    }
    ks
}

/// Annealed Langevin sampling over the scene grid. Chains are independent,
/// each with its own seed stream; contexts are clamped while a chain roams,
/// and only the final pose decides workspace rejection.
pub fn sample_poses<S: Scalar>(
    grid: &OccupancyGrid,
    store: &ParamStore<S>,
    fourier: &FourierEmbedding,
    task: TaskId,
    schedule: &NoiseSchedule,
    cfg: &SampleConfig,
) -> Result<SampleOutcome> {
    let weights = encoder_param_names();
    let mut refs = Vec::with_capacity(5);
    for name in &weights {
        refs.push(
            store
                .get(name)
                .ok_or_else(|| Error::Config { what: format!("missing parameter {name}") })?,
        );
    }
    let grid_t: Tensor<S> = Tensor::from_f64_tensor(&grid.normalized_tensor().to_f64());
    let pyramid: FeaturePyramid<S> =
        build_pyramid(&grid_t, &[refs[0], refs[1], refs[2], refs[3], refs[4]])?;
    let score_head = HeadParams::resolve(store, score_head_spec())?;
    let eval_head = HeadParams::resolve(store, eval_head_spec())?;
    let origin = &grid.origin;
    let levels = sampling_levels(schedule, cfg.steps);
    let denoise_alpha = schedule.sigma_min().powi(2);

    let mut ranked = Vec::new();
    let mut rejected = 0;
    let mut below = 0;
    let mut trajectories = cfg.record_trajectories.then(Vec::new);
    let lo = Vector3::zeros();
    let hi = Vector3::new(WORKSPACE_EDGE, WORKSPACE_EDGE, WORKSPACE_EDGE);
    for chain in 0..cfg.chains {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ chain as u64);
        let mut pose = crate::se3::random_uniform_pose(&mut rng, &lo, &hi);
        let mut track = cfg.record_trajectories.then(|| vec![pose.clone()]);
        for &k in &levels {
            let (ctx, _) = extract_local_context(&pyramid, origin, &pose, KERNEL_DISPLACEMENT);
            let score = predict_score(&score_head, fourier, &ctx, schedule.sigma(k), task);
            pose = langevin_step(&pose, &score, schedule.alpha(k), &mut rng, true);
            if let Some(t) = track.as_mut() {
                t.push(pose.clone());
            }
        }
        for _ in 0..cfg.denoise_steps {
            let (ctx, _) = extract_local_context(&pyramid, origin, &pose, KERNEL_DISPLACEMENT);
            let score = predict_score(&score_head, fourier, &ctx, schedule.sigma_min(), task);
            pose = langevin_step(&pose, &score, denoise_alpha, &mut rng, false);
            if let Some(t) = track.as_mut() {
                t.push(pose.clone());
            }
        }
        if let (Some(all), Some(t)) = (trajectories.as_mut(), track) {
            all.push(t);
        }
        let (ctx, outside) = extract_local_context(&pyramid, origin, &pose, KERNEL_DISPLACEMENT);
        if outside {
            rejected += 1;
            continue;
        }
        let probability = evaluate_sample(&eval_head, &ctx, task);
        if probability >= cfg.threshold {
            ranked.push(RankedPose { pose, probability, task });
        } else {
            below += 1;
        }
    }
    if cfg.chains > 0 && rejected == cfg.chains {
        return Err(Error::AllChainsRejected);
    }
    ranked.sort_by(|a, b| {
        b.probability
            .partial_cmp(&a.probability)
            .expect("finite probabilities")
            .then_with(|| a.pose.translation.x.partial_cmp(&b.pose.translation.x).unwrap())
    });
    Ok(SampleOutcome { ranked, rejected, below_threshold: below, trajectories })
}

const POSES_MAGIC: &[u8; 8] = b"SPLTPOS1";

/// Pose sets serialize as 12 pose floats, the evaluator probability, and
/// the task id per entry.
pub fn poses_to_bytes(poses: &[RankedPose]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 + poses.len() * 105);
    out.extend_from_slice(POSES_MAGIC);
    out.extend_from_slice(&(poses.len() as u32).to_le_bytes());
    for rp in poses {
        for v in rp.pose.to_floats() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&rp.probability.to_le_bytes());
        out.push(rp.task.index() as u8);
    }
    out
}

pub fn poses_from_bytes(bytes: &[u8], origin: &str) -> Result<Vec<RankedPose>> {
    let bad = |details: &str| Error::Format {
        what: format!("pose set {origin}"),
        details: details.into(),
    };
    if bytes.len() < 12 || &bytes[..8] != POSES_MAGIC {
        return Err(bad("bad header"));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let entry = 12 * 8 + 8 + 1;
    if bytes.len() != 12 + count * entry {
        return Err(bad("length mismatch"));
    }
    let mut out = Vec::with_capacity(count);
    let mut pos = 12;
    for _ in 0..count {
        let mut floats = [0.0f64; 12];
        for f in &mut floats {
            *f = f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
            pos += 8;
        }
        let probability = f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
        pos += 8;
        let task = TaskId::from_index(bytes[pos] as usize)?;
        pos += 1;
        out.push(RankedPose { pose: Pose::from_floats(&floats), probability, task });
    }
    Ok(out)
}

pub fn write_poses(path: &std::path::Path, poses: &[RankedPose]) -> Result<()> {
    std::fs::write(path, poses_to_bytes(poses)).map_err(|e| Error::io(path, e))
}

pub fn read_poses(path: &std::path::Path) -> Result<Vec<RankedPose>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    poses_from_bytes(&bytes, &path.display().to_string())
}
