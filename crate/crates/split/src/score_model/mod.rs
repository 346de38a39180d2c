//! Score and evaluator heads: FiLM-conditioned 8-layer MLPs over the local
//! context vector. The score head is conditioned on task one-hot plus a
//! Gaussian Fourier embedding of the noise scale; the evaluator on the task
//! alone. Neither head ever sees the pose itself, only its context.

use nalgebra::Vector6;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Graph, NodeId, ParamStore, Scalar, Tensor};
use crate::datagen::TaskId;
use crate::encoder::CONTEXT_DIM;
use crate::{Error, Result};

pub const HIDDEN_WIDTH: usize = 256;
pub const NUM_LAYERS: usize = 8;
pub const FOURIER_HALF_DIM: usize = 64;
pub const FOURIER_SCALE: f64 = 10.0;

/// Frozen random frequencies for the noise-scale embedding. Drawn once at
/// initialization and carried in the checkpoint, never trained.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierEmbedding {
    freqs: Vec<f64>,
}

impl FourierEmbedding {
    pub fn new(rng: &mut impl Rng) -> Self {
        let freqs = (0..FOURIER_HALF_DIM)
            .map(|_| {
                let g: f64 = StandardNormal.sample(rng);
                g * FOURIER_SCALE
            })
            .collect();
        FourierEmbedding { freqs }
    }

    pub fn dim(&self) -> usize {
        2 * self.freqs.len()
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn from_freqs(freqs: Vec<f64>) -> Result<Self> {
        if freqs.is_empty() || freqs.iter().any(|f| !f.is_finite()) {
            return Err(Error::Format {
                what: "fourier frequencies".into(),
                details: "need a nonempty finite frequency vector".into(),
            });
        }
        Ok(FourierEmbedding { freqs })
    }

    /// [sin(2π b σ); cos(2π b σ)] over the frozen frequency vector.
    pub fn encode(&self, sigma: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for &b in &self.freqs {
            out.push((std::f64::consts::TAU * b * sigma).sin());
        }
        for &b in &self.freqs {
            out.push((std::f64::consts::TAU * b * sigma).cos());
        }
        out
    }

    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        Tensor::from_vec(
            vec![self.freqs.len()],
            self.freqs.iter().map(|&f| S::from_f64(f)).collect(),
        )
    }

    pub fn from_tensor<S: Scalar>(t: &Tensor<S>) -> Result<Self> {
        if t.shape().len() != 1 || t.numel() == 0 {
            return Err(Error::Format {
                what: "fourier frequencies".into(),
                details: format!("bad shape {:?}", t.shape()),
            });
        }
        Ok(FourierEmbedding { freqs: t.data().iter().map(|v| v.to_f64()).collect() })
    }
}

/// Layer layout of one head; the two heads differ only in conditioning and
/// output width.
#[derive(Clone, Copy, Debug)]
pub struct HeadSpec {
    pub prefix: &'static str,
    pub in_dim: usize,
    pub cond_dim: usize,
    pub out_dim: usize,
    pub width: usize,
    pub depth: usize,
}

pub fn score_head_spec() -> HeadSpec {
    HeadSpec {
        prefix: "score",
        in_dim: CONTEXT_DIM,
        cond_dim: 3 + 2 * FOURIER_HALF_DIM,
        out_dim: 6,
        width: HIDDEN_WIDTH,
        depth: NUM_LAYERS,
    }
}

pub fn eval_head_spec() -> HeadSpec {
    HeadSpec {
        prefix: "eval",
        in_dim: CONTEXT_DIM,
        cond_dim: 3,
        out_dim: 1,
        width: HIDDEN_WIDTH,
        depth: NUM_LAYERS,
    }
}

impl HeadSpec {
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.depth);
        let mut cur = self.in_dim;
        for _ in 0..self.depth - 1 {
            dims.push((cur, self.width));
            cur = self.width;
        }
        dims.push((cur, self.out_dim));
        dims
    }

    /// Score-head conditioning: task one-hot then the Fourier embedding.
    pub fn score_conditioning(fourier: &FourierEmbedding, task: TaskId, sigma: f64) -> Vec<f64> {
        let mut cond = Vec::with_capacity(3 + fourier.dim());
        cond.extend(task.one_hot().map(f64::from));
        cond.extend(fourier.encode(sigma));
        cond
    }

    pub fn eval_conditioning(task: TaskId) -> Vec<f64> {
        task.one_hot().map(f64::from).to_vec()
    }
}

/// Registers one head's parameters. Hidden linears are He-initialized; the
/// FiLM generators and the output layer start at zero, so conditioning acts
/// as the identity and both heads output exactly zero before training.
pub fn init_head_params<S: Scalar>(
    store: &mut ParamStore<S>,
    spec: &HeadSpec,
    rng: &mut impl Rng,
) -> Result<()> {
    let dims = spec.layer_dims();
    for (i, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let last = i == dims.len() - 1;
        let w = if last {
            Tensor::zeros(vec![fan_in, fan_out])
        } else {
            let std = (2.0 / fan_in as f64).sqrt();
            let data: Vec<S> = (0..fan_in * fan_out)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(rng);
                    S::from_f64(g * std)
                })
                .collect();
            Tensor::from_vec(vec![fan_in, fan_out], data)
        };
        store.insert(&format!("{}.l{}.w", spec.prefix, i + 1), w)?;
        store.insert(&format!("{}.l{}.b", spec.prefix, i + 1), Tensor::zeros(vec![fan_out]))?;
        if !last {
            store.insert(
                &format!("{}.f{}.scale", spec.prefix, i + 1),
                Tensor::zeros(vec![spec.cond_dim, fan_out]),
            )?;
            store.insert(
                &format!("{}.f{}.shift", spec.prefix, i + 1),
                Tensor::zeros(vec![spec.cond_dim, fan_out]),
            )?;
        }
    }
    Ok(())
}

/// Borrowed view of one head's tensors for tape-free inference.
pub struct HeadParams<'a, S: Scalar> {
    spec: HeadSpec,
    lin: Vec<(&'a Tensor<S>, &'a Tensor<S>)>,
    film: Vec<(&'a Tensor<S>, &'a Tensor<S>)>,
}

impl<'a, S: Scalar> HeadParams<'a, S> {
    pub fn resolve(store: &'a ParamStore<S>, spec: HeadSpec) -> Result<Self> {
        let missing = |name: &str| Error::Config { what: format!("missing parameter {name}") };
        let mut lin = Vec::new();
        let mut film = Vec::new();
        for i in 1..=spec.depth {
            let wn = format!("{}.l{i}.w", spec.prefix);
            let bn = format!("{}.l{i}.b", spec.prefix);
            let w = store.get(&wn).ok_or_else(|| missing(&wn))?;
            let b = store.get(&bn).ok_or_else(|| missing(&bn))?;
            lin.push((w, b));
            if i < spec.depth {
                let sn = format!("{}.f{i}.scale", spec.prefix);
                let tn = format!("{}.f{i}.shift", spec.prefix);
                film.push((
                    store.get(&sn).ok_or_else(|| missing(&sn))?,
                    store.get(&tn).ok_or_else(|| missing(&tn))?,
                ));
            }
        }
        Ok(HeadParams { spec, lin, film })
    }

    /// Plain forward pass: x -> [linear, FiLM, ReLU] x7 -> linear.
    pub fn forward(&self, ctx: &[S], cond: &[f64]) -> Vec<S> {
        assert_eq!(ctx.len(), self.spec.in_dim, "context length");
        assert_eq!(cond.len(), self.spec.cond_dim, "conditioning length");
        let mut x: Vec<f64> = ctx.iter().map(|v| v.to_f64()).collect();
        for (i, (w, b)) in self.lin.iter().enumerate() {
            let (fan_in, fan_out) = (w.shape()[0], w.shape()[1]);
            let wd = w.data();
            let bd = b.data();
            let mut y = vec![0.0f64; fan_out];
            for (j, yj) in y.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, xv) in x.iter().enumerate() {
                    acc += xv * wd[k * fan_out + j].to_f64();
                }
                *yj = acc + bd[j].to_f64();
            }
            if i < self.film.len() {
                let (ws, wt) = self.film[i];
                let (sd, td) = (ws.data(), wt.data());
                for (j, yj) in y.iter_mut().enumerate() {
                    let mut scale = 1.0;
                    let mut shift = 0.0;
                    for (k, cv) in cond.iter().enumerate() {
                        scale += cv * sd[k * fan_out + j].to_f64();
                        shift += cv * td[k * fan_out + j].to_f64();
                    }
                    *yj = (*yj * scale + shift).max(0.0);
                }
            }
            let _ = fan_in;
            x = y;
        }
        x.into_iter().map(S::from_f64).collect()
    }
}

/// Noise- and task-conditioned score in the pose-local frame.
pub fn predict_score<S: Scalar>(
    head: &HeadParams<'_, S>,
    fourier: &FourierEmbedding,
    ctx: &[S],
    sigma: f64,
    task: TaskId,
) -> Vector6<f64> {
    let cond = HeadSpec::score_conditioning(fourier, task, sigma);
    let out = head.forward(ctx, &cond);
    Vector6::from_iterator(out.iter().map(|v| v.to_f64()))
}

/// Evaluator probability that the context belongs to a feasible pose.
pub fn evaluate_sample<S: Scalar>(
    head: &HeadParams<'_, S>,
    ctx: &[S],
    task: TaskId,
) -> f64 {
    let cond = HeadSpec::eval_conditioning(task);
    let logit = head.forward(ctx, &cond)[0].to_f64();
    1.0 / (1.0 + (-logit).exp())
}

/// Tape forward pass for training. `ctx` is a rank-1 context node;
/// returns the head output as a [1, out_dim] node (the evaluator output is
/// the raw logit; losses apply their own link).
pub fn head_forward_graph<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    leaves: &[NodeId],
    spec: &HeadSpec,
    ctx: NodeId,
    cond: &[f64],
) -> Result<NodeId> {
    let node = |name: &str| -> Result<NodeId> {
        store
            .index_of(name)
            .map(|i| leaves[i])
            .ok_or_else(|| Error::Config { what: format!("missing parameter {name}") })
    };
    assert_eq!(cond.len(), spec.cond_dim, "conditioning length");
    let cond_t = Tensor::from_vec(
        vec![1, spec.cond_dim],
        cond.iter().map(|&v| S::from_f64(v)).collect(),
    );
    let cond_node = g.constant(cond_t);
    let mut x = g.reshape(ctx, vec![1, spec.in_dim])?;
    for i in 1..=spec.depth {
        let w = node(&format!("{}.l{i}.w", spec.prefix))?;
        let b = node(&format!("{}.l{i}.b", spec.prefix))?;
        let lin = g.matmul(x, w)?;
        let lin = g.add_bias(lin, b)?;
        if i < spec.depth {
            let ws = node(&format!("{}.f{i}.scale", spec.prefix))?;
            let wt = node(&format!("{}.f{i}.shift", spec.prefix))?;
            let scale_raw = g.matmul(cond_node, ws)?;
            let scale = g.affine(scale_raw, 1.0, 1.0);
            let shift = g.matmul(cond_node, wt)?;
            let factored = g.film(lin, scale, shift)?;
            x = g.relu(factored);
        } else {
            x = lin;
        }
    }
    Ok(x)
}
