//! Joint training of the feature pyramid, score head, and feasibility
//! evaluator. Each optimizer step takes one scene minibatch and minimizes
//! `L_score + w * L_eval`: denoising score matching on perturbed positive
//! poses plus focal-weighted classification on a mined batch whose negatives
//! are feasibility failures and positives perturbed past a time threshold.
//! Runs are resumable: the per-epoch checkpoint carries parameters, optimizer
//! moments, the Fourier frequencies, and the generator state, so a resumed
//! run continues bit-for-bit.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{hex, Adam, Checkpoint, Graph, NodeId, ParamStore, Scalar, Tensor};
use crate::datagen::{PoseLabel, SceneRecord, TaskId};
use crate::diffusion::{make_schedule, perturb, NoiseSchedule};
use crate::encoder::{
    build_pyramid_graph, encoder_param_names, extract_local_context_graph, init_encoder_params,
    KERNEL_DISPLACEMENT,
};
use crate::evalkit::{evaluator_scores, midrank_auc};
use crate::score_model::{
    eval_head_spec, head_forward_graph, init_head_params, score_head_spec, FourierEmbedding,
    HeadSpec,
};
use crate::se3::Pose;
use crate::{Error, Result};

/// Training hyperparameters. `loss_weight` scales the evaluator loss inside
/// the joint objective and may be zero to train the score path alone; the
/// remaining fields must be positive, with `t_th` strictly inside (0, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub loss_weight: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    /// Fraction of the schedule past which perturbed positives count as
    /// negatives for the evaluator.
    pub t_th: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub levels: usize,
    pub eps_step: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            loss_weight: 0.1,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            t_th: 0.3,
            batch: 64,
            epochs: 200,
            seed: 0,
            sigma_min: crate::diffusion::SIGMA_MIN,
            sigma_max: crate::diffusion::SIGMA_MAX,
            levels: crate::diffusion::TRAIN_LEVELS,
            eps_step: crate::diffusion::EPS_STEP,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("focal_alpha", self.focal_alpha),
            ("focal_gamma", self.focal_gamma),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config { what: format!("{name} must be positive, got {v}") });
            }
        }
        if !(self.loss_weight >= 0.0 && self.loss_weight.is_finite()) {
            return Err(Error::Config {
                what: format!("loss_weight must be non-negative, got {}", self.loss_weight),
            });
        }
        if !(self.t_th > 0.0 && self.t_th < 1.0) {
            return Err(Error::Config {
                what: format!("t_th must lie strictly in (0, 1), got {}", self.t_th),
            });
        }
        if self.batch == 0 {
            return Err(Error::Config { what: "batch must be at least 1".into() });
        }
        if self.epochs == 0 {
            return Err(Error::Config { what: "epochs must be at least 1".into() });
        }
        // Schedule parameters share the sampler's validation rules.
        make_schedule(self.sigma_min, self.sigma_max, self.levels, self.eps_step)?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.sigma_min, self.sigma_max, self.levels, self.eps_step)
    }
}

/// Focal loss for one predicted probability. Down-weights easy examples by
/// `(1 - p)^gamma` (resp. `p^gamma`) and balances classes with `alpha`.
pub fn focal_loss(p: f64, label: bool, alpha: f64, gamma: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain {
            what: format!("focal loss needs a probability strictly in (0, 1), got {p}"),
        });
    }
    Ok(if label {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    })
}

/// One labeled pose for the evaluator. `level` records the schedule level
/// that produced a perturbed item; clean poses carry `None`.
#[derive(Clone, Debug)]
pub struct EvaluatorItem {
    pub pose: Pose,
    pub task: TaskId,
    pub label: bool,
    pub level: Option<usize>,
}

/// Builds the evaluator's labeled pose set. Every positive contributes a
/// clean copy, a lightly perturbed copy (level k with k/L < t_th, still
/// labeled 1), and, when the threshold leaves room, a heavily perturbed copy
/// (k/L >= t_th) labeled 0; feasibility failures come in clean, labeled 0.
pub fn make_evaluator_batch(
    positives: &[(Pose, TaskId)],
    negatives: &[(Pose, TaskId)],
    schedule: &NoiseSchedule,
    t_th: f64,
    rng: &mut impl Rng,
) -> Vec<EvaluatorItem> {
    assert!(!positives.is_empty(), "evaluator batch needs at least one positive");
    let l = schedule.len();
    // First level whose fraction k/L reaches the threshold. ceil handles
    // both the exact case (0.3 * 1000 -> 300) and fractional products.
    let boundary = ((t_th * l as f64).ceil() as usize).min(l);
    let mut out = Vec::with_capacity(3 * positives.len() + negatives.len());
    for &(pose, task) in positives {
        out.push(EvaluatorItem { pose, task, label: true, level: None });
        if boundary > 0 {
            let k = rng.gen_range(0..boundary);
            let (p, _) = perturb(&pose, schedule.sigma(k), rng);
            out.push(EvaluatorItem { pose: p, task, label: true, level: Some(k) });
        }
        if boundary < l {
            let k = rng.gen_range(boundary..l);
            let (p, _) = perturb(&pose, schedule.sigma(k), rng);
            out.push(EvaluatorItem { pose: p, task, label: false, level: Some(k) });
        }
    }
    for &(pose, task) in negatives {
        out.push(EvaluatorItem { pose, task, label: false, level: None });
    }
    out
}

/// Focal loss of one logit on the tape, written in logit space so saturated
/// predictions underflow to zero instead of producing log-of-zero:
/// label 1 -> alpha * sigmoid(-z)^gamma * softplus(-z), label 0 mirrors it.
fn focal_term_graph<S: Scalar>(
    g: &mut Graph<S>,
    logit: NodeId,
    label: bool,
    alpha: f64,
    gamma: f64,
) -> NodeId {
    let (sign, coeff) = if label { (-1.0, alpha) } else { (1.0, 1.0 - alpha) };
    let z = g.affine(logit, sign, 0.0);
    let s = g.sigmoid(z);
    let modulated = g.pow_scalar(s, gamma);
    let ce = g.softplus(z);
    let prod = g.mul(modulated, ce).expect("same shape");
    let weighted = g.affine(prod, coeff, 0.0);
    g.sum(weighted)
}

/// Mean focal loss of the evaluator over `items`, built on the tape.
/// Items whose kernel leaves the workspace are dropped; returns `None` if
/// nothing survives. The second element counts kept items.
#[allow(clippy::too_many_arguments)]
pub fn focal_loss_graph<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    leaves: &[NodeId],
    spec: &HeadSpec,
    levels: &[NodeId; 5],
    origin: &Pose,
    items: &[EvaluatorItem],
    alpha: f64,
    gamma: f64,
) -> Result<Option<(NodeId, usize)>> {
    let mut acc: Option<NodeId> = None;
    let mut kept = 0usize;
    for item in items {
        let (ctx, outside) =
            extract_local_context_graph(g, levels, origin, &item.pose, KERNEL_DISPLACEMENT)?;
        if outside {
            continue;
        }
        let cond = HeadSpec::eval_conditioning(item.task);
        let logit = head_forward_graph(g, store, leaves, spec, ctx, &cond)?;
        let term = focal_term_graph(g, logit, item.label, alpha, gamma);
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term)?,
        });
        kept += 1;
    }
    match acc {
        None => Ok(None),
        Some(a) => Ok(Some((g.affine(a, 1.0 / kept as f64, 0.0), kept))),
    }
}

/// Everything a run needs to continue: parameters, optimizer moments, the
/// Fourier frequencies, the generator, and the position in the epoch loop.
pub struct TrainState<S: Scalar> {
    pub cfg: TrainConfig,
    pub store: ParamStore<S>,
    pub adam: Adam<S>,
    pub fourier: FourierEmbedding,
    pub rng: ChaCha8Rng,
    /// Next epoch to run.
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub steps: usize,
}

const STATE_FORMAT: &str = "split-train-state-v1";

impl<S: Scalar> TrainState<S> {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let fourier = FourierEmbedding::new(&mut rng);
        let mut store = ParamStore::new();
        init_encoder_params(&mut store, &mut rng)?;
        init_head_params(&mut store, &score_head_spec(), &mut rng)?;
        init_head_params(&mut store, &eval_head_spec(), &mut rng)?;
        let adam = Adam::new(&store, cfg.lr);
        Ok(TrainState { cfg: cfg.clone(), store, adam, fourier, rng, epoch: 0, steps: 0 })
    }

    pub fn checkpoint(&self) -> Checkpoint<S> {
        let mut ck = Checkpoint::new();
        let c = &self.cfg;
        let (t, m, v) = self.adam.state();
        ck.meta = vec![
            ("format".into(), STATE_FORMAT.into()),
            ("epoch".into(), self.epoch.to_string()),
            ("steps".into(), self.steps.to_string()),
            ("adam.t".into(), t.to_string()),
            ("rng.seed".into(), hex(&self.rng.get_seed())),
            ("rng.word_pos".into(), self.rng.get_word_pos().to_string()),
            ("cfg.lr".into(), format!("{:?}", c.lr)),
            ("cfg.loss_weight".into(), format!("{:?}", c.loss_weight)),
            ("cfg.focal_alpha".into(), format!("{:?}", c.focal_alpha)),
            ("cfg.focal_gamma".into(), format!("{:?}", c.focal_gamma)),
            ("cfg.t_th".into(), format!("{:?}", c.t_th)),
            ("cfg.batch".into(), c.batch.to_string()),
            ("cfg.epochs".into(), c.epochs.to_string()),
            ("cfg.seed".into(), c.seed.to_string()),
            ("cfg.sigma_min".into(), format!("{:?}", c.sigma_min)),
            ("cfg.sigma_max".into(), format!("{:?}", c.sigma_max)),
            ("cfg.levels".into(), c.levels.to_string()),
            ("cfg.eps_step".into(), format!("{:?}", c.eps_step)),
            // The frequencies live in f64; going through a Tensor<S> would
            // round them and nudge resumed runs off the original trajectory.
            (
                "fourier.b".into(),
                self.fourier
                    .freqs()
                    .iter()
                    .map(|f| format!("{f:?}"))
                    .collect::<Vec<_>>()
                    .join(","),
            ),
        ];
        for (name, tensor) in self.store.iter() {
            ck.tensors.push((format!("p.{name}"), tensor.clone()));
        }
        for (i, (name, _)) in self.store.iter().enumerate() {
            ck.tensors.push((format!("m.{name}"), m[i].clone()));
            ck.tensors.push((format!("v.{name}"), v[i].clone()));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint<S>) -> Result<Self> {
        fn meta<'a, S: Scalar>(ck: &'a Checkpoint<S>, key: &str) -> Result<&'a str> {
            ck.meta_value(key).ok_or_else(|| Error::Format {
                what: "train state".into(),
                details: format!("missing meta key {key}"),
            })
        }
        fn parse<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
            raw.parse().map_err(|_| Error::Format {
                what: "train state".into(),
                details: format!("bad value for {key}: {raw}"),
            })
        }
        if meta(ck, "format")? != STATE_FORMAT {
            return Err(Error::Format {
                what: "train state".into(),
                details: format!("unknown format {}", meta(ck, "format")?),
            });
        }
        let cfg = TrainConfig {
            lr: parse("cfg.lr", meta(ck, "cfg.lr")?)?,
            loss_weight: parse("cfg.loss_weight", meta(ck, "cfg.loss_weight")?)?,
            focal_alpha: parse("cfg.focal_alpha", meta(ck, "cfg.focal_alpha")?)?,
            focal_gamma: parse("cfg.focal_gamma", meta(ck, "cfg.focal_gamma")?)?,
            t_th: parse("cfg.t_th", meta(ck, "cfg.t_th")?)?,
            batch: parse("cfg.batch", meta(ck, "cfg.batch")?)?,
            epochs: parse("cfg.epochs", meta(ck, "cfg.epochs")?)?,
            seed: parse("cfg.seed", meta(ck, "cfg.seed")?)?,
            sigma_min: parse("cfg.sigma_min", meta(ck, "cfg.sigma_min")?)?,
            sigma_max: parse("cfg.sigma_max", meta(ck, "cfg.sigma_max")?)?,
            levels: parse("cfg.levels", meta(ck, "cfg.levels")?)?,
            eps_step: parse("cfg.eps_step", meta(ck, "cfg.eps_step")?)?,
        };
        let mut store = ParamStore::new();
        for (name, tensor) in &ck.tensors {
            if let Some(base) = name.strip_prefix("p.") {
                store.insert(base, tensor.clone())?;
            }
        }
        if store.is_empty() {
            return Err(Error::Format {
                what: "train state".into(),
                details: "checkpoint holds no parameters".into(),
            });
        }
        let mut adam = Adam::new(&store, cfg.lr);
        let mut m = Vec::with_capacity(store.len());
        let mut v = Vec::with_capacity(store.len());
        for (name, _) in store.iter() {
            let grab = |prefix: &str| -> Result<Tensor<S>> {
                ck.tensor(&format!("{prefix}.{name}")).cloned().ok_or_else(|| Error::Format {
                    what: "train state".into(),
                    details: format!("missing moment tensor {prefix}.{name}"),
                })
            };
            m.push(grab("m")?);
            v.push(grab("v")?);
        }
        adam.restore_state(parse("adam.t", meta(ck, "adam.t")?)?, m, v)?;
        let freqs: Vec<f64> = meta(ck, "fourier.b")?
            .split(',')
            .map(|raw| parse("fourier.b", raw))
            .collect::<Result<_>>()?;
        let fourier = FourierEmbedding::from_freqs(freqs)?;
        let seed_hex = meta(ck, "rng.seed")?;
        let mut seed = [0u8; 32];
        if seed_hex.len() != 64 {
            return Err(Error::Format {
                what: "train state".into(),
                details: format!("rng seed must be 32 bytes of hex, got {seed_hex:?}"),
            });
        }
        for (i, byte) in seed.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16).map_err(|_| {
                Error::Format {
                    what: "train state".into(),
                    details: format!("bad rng seed hex {seed_hex:?}"),
                }
            })?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_word_pos(parse("rng.word_pos", meta(ck, "rng.word_pos")?)?);
        Ok(TrainState {
            cfg,
            store,
            adam,
            fourier,
            rng,
            epoch: parse("epoch", meta(ck, "epoch")?)?,
            steps: parse("steps", meta(ck, "steps")?)?,
        })
    }
}

/// Per-epoch means of the joint objective and its parts, plus the
/// evaluator's ranking quality over the whole dataset. `eval_auc` is `None`
/// when the dataset holds a single class.
#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub dsm: f64,
    pub focal: f64,
    pub eval_auc: Option<f64>,
    pub steps: usize,
}

pub struct TrainRun<S: Scalar> {
    pub state: TrainState<S>,
    pub history: Vec<EpochStats>,
}

/// Trains a fresh model. With an output directory, appends one JSON line of
/// metrics per epoch to `metrics.jsonl` and keeps `checkpoint.bin` current.
pub fn train<S: Scalar>(
    dataset: &[SceneRecord],
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainRun<S>> {
    let mut state = TrainState::new(cfg)?;
    let history = train_loop(dataset, &mut state, out)?;
    Ok(TrainRun { state, history })
}

/// Runs epochs `state.epoch .. state.cfg.epochs`, mutating the state in
/// place; resuming a loaded state continues the exact trajectory of an
/// uninterrupted run.
pub fn train_loop<S: Scalar>(
    dataset: &[SceneRecord],
    state: &mut TrainState<S>,
    out: Option<&Path>,
) -> Result<Vec<EpochStats>> {
    if dataset.is_empty() {
        return Err(Error::DatasetEmpty);
    }
    state.cfg.validate()?;
    let schedule = state.cfg.schedule()?;
    let score_spec = score_head_spec();
    let eval_spec = eval_head_spec();
    let enc_names = encoder_param_names();

    let grids: Vec<Tensor<S>> = dataset
        .iter()
        .map(|r| Tensor::from_f64_tensor(&r.grid.normalized_tensor().to_f64()))
        .collect();
    let split_labels = |r: &SceneRecord, label: PoseLabel| -> Vec<(Pose, TaskId)> {
        r.poses.iter().filter(|p| p.label == label).map(|p| (p.pose, p.task)).collect()
    };
    let positives: Vec<Vec<(Pose, TaskId)>> =
        dataset.iter().map(|r| split_labels(r, PoseLabel::Positive)).collect();
    let negatives: Vec<Vec<(Pose, TaskId)>> =
        dataset.iter().map(|r| split_labels(r, PoseLabel::Negative)).collect();
    if positives.iter().all(|p| p.is_empty()) {
        return Err(Error::Domain { what: "dataset has no positively labeled poses".into() });
    }

    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut history = Vec::new();
    for epoch in state.epoch..state.cfg.epochs {
        let cfg = state.cfg.clone();
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut state.rng);
        let (mut sum_total, mut sum_dsm, mut sum_focal) = (0.0, 0.0, 0.0);
        let (mut steps, mut focal_steps) = (0usize, 0usize);
        for &si in &order {
            let pos = &positives[si];
            if pos.is_empty() {
                continue;
            }
            let negs = &negatives[si];
            let origin = dataset[si].grid.origin;
            let mut pidx: Vec<usize> = (0..pos.len()).collect();
            pidx.shuffle(&mut state.rng);
            let mut neg_cursor = 0usize;
            for chunk in pidx.chunks(cfg.batch) {
                let mut g = Graph::new();
                let leaves = state.store.leaves(&mut g);
                let grid_node = g.constant(grids[si].clone());
                let enc_w: [NodeId; 5] = std::array::from_fn(|i| {
                    leaves[state.store.index_of(&enc_names[i]).expect("encoder param")]
                });
                let levels = build_pyramid_graph(&mut g, grid_node, &enc_w)?;

                let dsm_items: Vec<(Pose, TaskId)> = chunk.iter().map(|&i| pos[i]).collect();
                // A whole chunk can leave the workspace after perturbation;
                // that step is skipped rather than treated as a failure.
                let dsm = match crate::diffusion::dsm_loss_graph(
                    &mut g,
                    &state.store,
                    &leaves,
                    &score_spec,
                    &state.fourier,
                    &levels,
                    &origin,
                    &dsm_items,
                    &schedule,
                    &mut state.rng,
                ) {
                    Ok(x) => Some(x),
                    Err(Error::Domain { .. }) => None,
                    Err(e) => return Err(e),
                };
                let Some((dsm_node, _dsm_kept)) = dsm else { continue };

                // Pair the chunk's positives with a rotating slice of the
                // scene's stored negatives.
                let take = chunk.len().min(negs.len());
                let neg_slice: Vec<(Pose, TaskId)> =
                    (0..take).map(|j| negs[(neg_cursor + j) % negs.len()]).collect();
                neg_cursor = if negs.is_empty() { 0 } else { (neg_cursor + take) % negs.len() };
                let eval_items = make_evaluator_batch(
                    &dsm_items,
                    &neg_slice,
                    &schedule,
                    cfg.t_th,
                    &mut state.rng,
                );
                let focal = focal_loss_graph(
                    &mut g,
                    &state.store,
                    &leaves,
                    &eval_spec,
                    &levels,
                    &origin,
                    &eval_items,
                    cfg.focal_alpha,
                    cfg.focal_gamma,
                )?;

                let dsm_val = g.value(dsm_node).item().to_f64();
                let (total_node, focal_val) = match focal {
                    Some((focal_node, _)) => {
                        let scaled = g.affine(focal_node, cfg.loss_weight, 0.0);
                        let total = g.add(dsm_node, scaled)?;
                        (total, Some(g.value(focal_node).item().to_f64()))
                    }
                    None => (dsm_node, None),
                };
                let total_val = g.value(total_node).item().to_f64();
                state.steps += 1;
                if !total_val.is_finite() {
                    let details = format!(
                        "epoch {epoch}, scene {si}: total = {total_val}, score term = \
                         {dsm_val}, evaluator term = {focal_val:?}, {} poses in chunk",
                        chunk.len(),
                    );
                    if let Some(dir) = out {
                        let dump = serde_json::json!({
                            "step": state.steps,
                            "epoch": epoch,
                            "scene": si,
                            "total": format!("{total_val}"),
                            "dsm": format!("{dsm_val}"),
                            "focal": format!("{focal_val:?}"),
                        });
                        let _ = std::fs::write(
                            dir.join("nonfinite-dump.json"),
                            serde_json::to_string_pretty(&dump).expect("literal json"),
                        );
                    }
                    return Err(Error::NonFiniteLoss { step: state.steps, details });
                }

                let grads = g.backward(total_node)?;
                let grad_refs = state.store.collect_grads(&leaves, &grads);
                if cfg.loss_weight == 0.0 {
                    debug_assert!(
                        state.store.iter().zip(&grad_refs).all(|((name, _), grad)| {
                            !name.starts_with(eval_spec.prefix)
                                || grad.map_or(true, |t| t.data().iter().all(|v| v.to_f64() == 0.0))
                        }),
                        "evaluator gradient must vanish when its loss weight is zero",
                    );
                }
                state.adam.step(&mut state.store, &grad_refs)?;

                sum_total += total_val;
                sum_dsm += dsm_val;
                if let Some(f) = focal_val {
                    sum_focal += f;
                    focal_steps += 1;
                }
                steps += 1;
            }
        }

        let mut scored = Vec::new();
        for record in dataset {
            scored.extend(evaluator_scores(&state.store, record)?);
        }
        let eval_auc = midrank_auc(&scored).ok();
        let stats = EpochStats {
            epoch,
            total: if steps > 0 { sum_total / steps as f64 } else { 0.0 },
            dsm: if steps > 0 { sum_dsm / steps as f64 } else { 0.0 },
            focal: if focal_steps > 0 { sum_focal / focal_steps as f64 } else { 0.0 },
            eval_auc,
            steps,
        };
        state.epoch = epoch + 1;
        if let Some(dir) = out {
            append_metrics(dir, &stats)?;
            state.checkpoint().save(&dir.join("checkpoint.bin"))?;
        }
        history.push(stats);
    }
    Ok(history)
}

fn append_metrics(dir: &Path, stats: &EpochStats) -> Result<()> {
    let path = dir.join("metrics.jsonl");
    let line = serde_json::json!({
        "epoch": stats.epoch,
        "total": stats.total,
        "dsm": stats.dsm,
        "focal": stats.focal,
        "eval_auc": stats.eval_auc,
        "steps": stats.steps,
    });
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(file, "{line}").map_err(|e| Error::io(&path, e))
}
