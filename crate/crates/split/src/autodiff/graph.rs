//! Eager tape: forward values computed at construction, gradients by a
//! reverse sweep. Every accumulation loop runs in a fixed order, so results
//! are bit-reproducible for a given build.

use std::sync::Arc;

use super::tensor::{Scalar, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    /// `[m, n] + [n]`, bias broadcast over rows.
    AddBias(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `a * x + b` with scalar constants; only the slope matters to the
    /// backward pass.
    Affine { x: NodeId, a: f64 },
    MatMul(NodeId, NodeId),
    Relu(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Softplus(NodeId),
    Sigmoid(NodeId),
    Ln(NodeId),
    PowScalar { x: NodeId, p: f64 },
    Sum(NodeId),
    Mean(NodeId),
    /// Concatenation along the last axis (rank 1 or 2).
    Concat(Vec<NodeId>),
    Reshape(NodeId),
    /// Input `[C, D, H, W]`, weight `[O, C, k, k, k]`, zero padding.
    Conv3d { input: NodeId, weight: NodeId, stride: usize, pad: usize },
    /// Grid `[C, D, H, W]` sampled at fixed points in grid coordinates
    /// (x, y, z per point, cell-center convention, clamped to the volume).
    /// Output `[N, C]`. Points carry no gradient.
    Gather { grid: NodeId, points: Arc<Vec<[f64; 3]>> },
    /// Elementwise `x * scale + shift`, all three the same shape.
    Film { x: NodeId, scale: NodeId, shift: NodeId },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

/// Gradients of a scalar loss with respect to every grad-requiring node.
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient for `id`, if that node required one.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.grads[id.0].as_ref()
    }
}

fn softplus_val<S: Scalar>(x: S) -> S {
    // max(x, 0) + ln(1 + exp(-|x|)), stable on both tails.
    x.max(S::ZERO) + (-x.abs()).exp().ln_1p()
}

fn sigmoid_val<S: Scalar>(x: S) -> S {
    if x >= S::ZERO {
        S::ONE / (S::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::ONE + e)
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Trainable leaf; gradients will be produced for it.
    pub fn param(&mut self, t: Tensor<S>) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    /// Constant leaf; no gradient.
    pub fn constant(&mut self, t: Tensor<S>) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    fn same_shape(&self, op: &str, a: NodeId, b: NodeId) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch {
                op: op.into(),
                details: format!(
                    "{:?} vs {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let v: Vec<S> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor::from_vec(self.value(a).shape().to_vec(), v);
        Ok(self.push(t, Op::Add(a, b), self.rg(a) || self.rg(b)))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let bs = self.value(bias).shape().to_vec();
        if xs.len() != 2 || bs.len() != 1 || bs[0] != xs[1] {
            return Err(Error::ShapeMismatch {
                op: "add_bias".into(),
                details: format!("{xs:?} + {bs:?}"),
            });
        }
        let (m, n) = (xs[0], xs[1]);
        let xd = self.value(x).data();
        let bd = self.value(bias).data();
        let mut v = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                v.push(xd[i * n + j] + bd[j]);
            }
        }
        let t = Tensor::from_vec(xs, v);
        Ok(self.push(t, Op::AddBias(x, bias), self.rg(x) || self.rg(bias)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let v: Vec<S> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let t = Tensor::from_vec(self.value(a).shape().to_vec(), v);
        Ok(self.push(t, Op::Sub(a, b), self.rg(a) || self.rg(b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let v: Vec<S> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::from_vec(self.value(a).shape().to_vec(), v);
        Ok(self.push(t, Op::Mul(a, b), self.rg(a) || self.rg(b)))
    }

    /// `a * x + b` elementwise with f64 constants.
    pub fn affine(&mut self, x: NodeId, a: f64, b: f64) -> NodeId {
        let (sa, sb) = (S::from_f64(a), S::from_f64(b));
        let t = self.value(x).map(|v| sa * v + sb);
        let rg = self.rg(x);
        self.push(t, Op::Affine { x, a }, rg)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape().to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul".into(),
                details: format!("{sa:?} x {sb:?}"),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut v = vec![S::ZERO; m * n];
        for i in 0..m {
            for kk in 0..k {
                let aik = ad[i * k + kk];
                let brow = &bd[kk * n..(kk + 1) * n];
                let orow = &mut v[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aik * brow[j];
                }
            }
        }
        let t = Tensor::from_vec(vec![m, n], v);
        Ok(self.push(t, Op::MatMul(a, b), self.rg(a) || self.rg(b)))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x).map(|v| v.max(S::ZERO));
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg)
    }

    pub fn sin(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x).map(|v| v.sin());
        let rg = self.rg(x);
        self.push(t, Op::Sin(x), rg)
    }

    pub fn cos(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x).map(|v| v.cos());
        let rg = self.rg(x);
        self.push(t, Op::Cos(x), rg)
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x).map(softplus_val);
        let rg = self.rg(x);
        self.push(t, Op::Softplus(x), rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x).map(sigmoid_val);
        let rg = self.rg(x);
        self.push(t, Op::Sigmoid(x), rg)
    }

    /// Natural log; caller guarantees positive inputs.
    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x).map(|v| v.ln());
        let rg = self.rg(x);
        self.push(t, Op::Ln(x), rg)
    }

    /// `x^p` for constant `p`; caller guarantees a valid domain.
    pub fn pow_scalar(&mut self, x: NodeId, p: f64) -> NodeId {
        let sp = S::from_f64(p);
        let t = self.value(x).map(|v| v.powf(sp));
        let rg = self.rg(x);
        self.push(t, Op::PowScalar { x, p }, rg)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let mut acc = S::ZERO;
        for &v in self.value(x).data() {
            acc += v;
        }
        let rg = self.rg(x);
        self.push(Tensor::scalar(acc), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).numel();
        let mut acc = S::ZERO;
        for &v in self.value(x).data() {
            acc += v;
        }
        let t = Tensor::scalar(acc / S::from_f64(n as f64));
        let rg = self.rg(x);
        self.push(t, Op::Mean(x), rg)
    }

    /// Concatenates along the last axis. Rank-1 inputs, or rank-2 inputs
    /// sharing the row count.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::ShapeMismatch { op: "concat".into(), details: "no inputs".into() });
        }
        let rank = self.value(parts[0]).shape().len();
        let rg = parts.iter().any(|&p| self.rg(p));
        match rank {
            1 => {
                let mut v = Vec::new();
                for &p in parts {
                    if self.value(p).shape().len() != 1 {
                        return Err(Error::ShapeMismatch {
                            op: "concat".into(),
                            details: "mixed ranks".into(),
                        });
                    }
                    v.extend_from_slice(self.value(p).data());
                }
                let n = v.len();
                Ok(self.push(Tensor::from_vec(vec![n], v), Op::Concat(parts.to_vec()), rg))
            }
            2 => {
                let m = self.value(parts[0]).shape()[0];
                let mut widths = Vec::with_capacity(parts.len());
                for &p in parts {
                    let s = self.value(p).shape();
                    if s.len() != 2 || s[0] != m {
                        return Err(Error::ShapeMismatch {
                            op: "concat".into(),
                            details: format!("rows differ: {s:?} vs m={m}"),
                        });
                    }
                    widths.push(s[1]);
                }
                let total: usize = widths.iter().sum();
                let mut v = vec![S::ZERO; m * total];
                let mut off = 0;
                for (idx, &p) in parts.iter().enumerate() {
                    let w = widths[idx];
                    let d = self.value(p).data();
                    for i in 0..m {
                        v[i * total + off..i * total + off + w]
                            .copy_from_slice(&d[i * w..(i + 1) * w]);
                    }
                    off += w;
                }
                Ok(self.push(Tensor::from_vec(vec![m, total], v), Op::Concat(parts.to_vec()), rg))
            }
            r => Err(Error::ShapeMismatch {
                op: "concat".into(),
                details: format!("unsupported rank {r}"),
            }),
        }
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        if shape.iter().product::<usize>() != self.value(x).numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape".into(),
                details: format!("{:?} -> {shape:?}", self.value(x).shape()),
            });
        }
        let t = self.value(x).reshaped(shape);
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    pub fn conv3d(&mut self, input: NodeId, weight: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let is = self.value(input).shape().to_vec();
        let ws = self.value(weight).shape().to_vec();
        if is.len() != 4 || ws.len() != 5 || is[0] != ws[1] || ws[2] != ws[3] || ws[3] != ws[4] {
            return Err(Error::ShapeMismatch {
                op: "conv3d".into(),
                details: format!("input {is:?} weight {ws:?}"),
            });
        }
        let k = ws[2];
        if is[1] + 2 * pad < k || stride == 0 {
            return Err(Error::ShapeMismatch {
                op: "conv3d".into(),
                details: format!("kernel {k} does not fit input {is:?} with pad {pad}"),
            });
        }
        let t = conv3d_forward(self.value(input), self.value(weight), stride, pad);
        let rg = self.rg(input) || self.rg(weight);
        Ok(self.push(t, Op::Conv3d { input, weight, stride, pad }, rg))
    }

    pub fn gather(&mut self, grid: NodeId, points: Arc<Vec<[f64; 3]>>) -> Result<NodeId> {
        let gs = self.value(grid).shape().to_vec();
        if gs.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "gather".into(),
                details: format!("grid rank {} != 4", gs.len()),
            });
        }
        let t = gather_forward(self.value(grid), &points);
        let rg = self.rg(grid);
        Ok(self.push(t, Op::Gather { grid, points }, rg))
    }

    pub fn film(&mut self, x: NodeId, scale: NodeId, shift: NodeId) -> Result<NodeId> {
        self.same_shape("film", x, scale)?;
        self.same_shape("film", x, shift)?;
        let xd = self.value(x).data();
        let sd = self.value(scale).data();
        let hd = self.value(shift).data();
        let v: Vec<S> = xd
            .iter()
            .zip(sd.iter())
            .zip(hd.iter())
            .map(|((&x, &s), &h)| x * s + h)
            .collect();
        let t = Tensor::from_vec(self.value(x).shape().to_vec(), v);
        let rg = self.rg(x) || self.rg(scale) || self.rg(shift);
        Ok(self.push(t, Op::Film { x, scale, shift }, rg))
    }

    /// Reverse sweep from a scalar loss. Returns per-node gradients for all
    /// grad-requiring nodes reachable from the loss.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<S>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss { shape: self.value(loss).shape().to_vec() });
        }
        let n = self.nodes.len();
        let mut bufs: Vec<Option<Vec<S>>> = (0..n).map(|_| None).collect();
        bufs[loss.0] = Some(vec![S::ONE]);

        let ensure = |bufs: &mut Vec<Option<Vec<S>>>, id: NodeId, len: usize| {
            if bufs[id.0].is_none() {
                bufs[id.0] = Some(vec![S::ZERO; len]);
            }
        };

        for idx in (0..n).rev() {
            if bufs[idx].is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let g = bufs[idx].take().unwrap();
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    bufs[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    for p in [*a, *b] {
                        if self.rg(p) {
                            ensure(&mut bufs, p, g.len());
                            let buf = bufs[p.0].as_mut().unwrap();
                            for (o, &gi) in buf.iter_mut().zip(&g) {
                                *o += gi;
                            }
                        }
                    }
                }
                Op::AddBias(x, bias) => {
                    let nx = self.value(*x).shape()[1];
                    if self.rg(*x) {
                        ensure(&mut bufs, *x, g.len());
                        let buf = bufs[x.0].as_mut().unwrap();
                        for (o, &gi) in buf.iter_mut().zip(&g) {
                            *o += gi;
                        }
                    }
                    if self.rg(*bias) {
                        ensure(&mut bufs, *bias, nx);
                        let buf = bufs[bias.0].as_mut().unwrap();
                        let rows = g.len() / nx;
                        for i in 0..rows {
                            for j in 0..nx {
                                buf[j] += g[i * nx + j];
                            }
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        ensure(&mut bufs, *a, g.len());
                        let buf = bufs[a.0].as_mut().unwrap();
                        for (o, &gi) in buf.iter_mut().zip(&g) {
                            *o += gi;
                        }
                    }
                    if self.rg(*b) {
                        ensure(&mut bufs, *b, g.len());
                        let buf = bufs[b.0].as_mut().unwrap();
                        for (o, &gi) in buf.iter_mut().zip(&g) {
                            *o += -gi;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        ensure(&mut bufs, *a, g.len());
                        let bd = self.value(*b).data();
                        let buf = bufs[a.0].as_mut().unwrap();
                        for i in 0..g.len() {
                            buf[i] += g[i] * bd[i];
                        }
                    }
                    if self.rg(*b) {
                        ensure(&mut bufs, *b, g.len());
                        let ad = self.value(*a).data();
                        let buf = bufs[b.0].as_mut().unwrap();
                        for i in 0..g.len() {
                            buf[i] += g[i] * ad[i];
                        }
                    }
                }
                Op::Affine { x, a } => {
                    if self.rg(*x) {
                        ensure(&mut bufs, *x, g.len());
                        let sa = S::from_f64(*a);
                        let buf = bufs[x.0].as_mut().unwrap();
                        for i in 0..g.len() {
                            buf[i] += g[i] * sa;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let sa = self.value(*a).shape();
                    let sb = self.value(*b).shape();
                    let (m, k, nn) = (sa[0], sa[1], sb[1]);
                    if self.rg(*a) {
                        ensure(&mut bufs, *a, m * k);
                        let bd = self.value(*b).data();
                        let buf = bufs[a.0].as_mut().unwrap();
                        // dA = g * B^T
                        for i in 0..m {
                            for kk in 0..k {
                                let mut acc = S::ZERO;
                                let grow = &g[i * nn..(i + 1) * nn];
                                let brow = &bd[kk * nn..(kk + 1) * nn];
                                for j in 0..nn {
                                    acc += grow[j] * brow[j];
                                }
                                buf[i * k + kk] += acc;
                            }
                        }
                    }
                    if self.rg(*b) {
                        ensure(&mut bufs, *b, k * nn);
                        let ad = self.value(*a).data();
                        let buf = bufs[b.0].as_mut().unwrap();
                        // dB = A^T * g
                        for kk in 0..k {
                            for i in 0..m {
                                let aik = ad[i * k + kk];
                                let grow = &g[i * nn..(i + 1) * nn];
                                let brow = &mut buf[kk * nn..(kk + 1) * nn];
                                for j in 0..nn {
                                    brow[j] += aik * grow[j];
                                }
                            }
                        }
                    }
                }
                Op::Relu(x) => {
                    if self.rg(*x) {
                        ensure(&mut bufs, *x, g.len());
                        let xd = self.value(*x).data();
                        let buf = bufs[x.0].as_mut().unwrap();
                        for i in 0..g.len() {
                            if xd[i] > S::ZERO {
                                buf[i] += g[i];
                            }
                        }
                    }
                }
                Op::Sin(x) => {
                    if self.rg(*x) {
                        ensure(&mut bufs, *x, g.len());
                        let xd = self.value(*x).data();
                        let buf = bufs[x.0].as_mut().unwrap();
                        for i in 0..g.len() {
                            buf[i] += g[i] * xd[i].cos();
                        }
                    }
                }
                Op::Cos(x) => {
                    if self.rg(*x) {
                        ensure(&mut bufs, *x, g.len());
                        let xd = self.value(*x).data();
                        let buf = bufs[x.0].as_mut().unwrap();
                        for i in 0..g.len() {
                            buf[i] += -(g[i] * xd[i].sin());
                        }
                    }
                }
                Op::Softplus(x) => {
                    if self.rg(*x) {
                        ensure(&mut bufs, *x, g.len());
                        let xd = self.value(*x).data();
                        let buf = bufs[x.0].as_mut().unwrap();
                        for i in 0..g.len() {
                            buf[i] += g[i] * sigmoid_val(xd[i]);
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    if self.rg(*x) {
                        ensure(&mut bufs, *x, g.len());
                        let yd = node.value.data();
                        let buf = bufs[x.0].as_mut().unwrap();
                        for i in 0..g.len() {
                            buf[i] += g[i] * yd[i] * (S::ONE - yd[i]);
                        }
                    }
                }
                Op::Ln(x) => {
                    if self.rg(*x) {
                        ensure(&mut bufs, *x, g.len());
                        let xd = self.value(*x).data();
                        let buf = bufs[x.0].as_mut().unwrap();
                        for i in 0..g.len() {
                            buf[i] += g[i] / xd[i];
                        }
                    }
                }
                Op::PowScalar { x, p } => {
                    if self.rg(*x) {
                        ensure(&mut bufs, *x, g.len());
                        let xd = self.value(*x).data();
                        let sp = S::from_f64(*p);
                        let spm1 = S::from_f64(*p - 1.0);
                        let buf = bufs[x.0].as_mut().unwrap();
                        for i in 0..g.len() {
                            buf[i] += g[i] * sp * xd[i].powf(spm1);
                        }
                    }
                }
                Op::Sum(x) => {
                    if self.rg(*x) {
                        let nx = self.value(*x).numel();
                        ensure(&mut bufs, *x, nx);
                        let buf = bufs[x.0].as_mut().unwrap();
                        for o in buf.iter_mut() {
                            *o += g[0];
                        }
                    }
                }
                Op::Mean(x) => {
                    if self.rg(*x) {
                        let nx = self.value(*x).numel();
                        ensure(&mut bufs, *x, nx);
                        let gi = g[0] / S::from_f64(nx as f64);
                        let buf = bufs[x.0].as_mut().unwrap();
                        for o in buf.iter_mut() {
                            *o += gi;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let rank = self.value(parts[0]).shape().len();
                    if rank == 1 {
                        let mut off = 0;
                        for &p in parts {
                            let w = self.value(p).numel();
                            if self.rg(p) {
                                ensure(&mut bufs, p, w);
                                let buf = bufs[p.0].as_mut().unwrap();
                                for j in 0..w {
                                    buf[j] += g[off + j];
                                }
                            }
                            off += w;
                        }
                    } else {
                        let m = self.value(parts[0]).shape()[0];
                        let total: usize = parts.iter().map(|&p| self.value(p).shape()[1]).sum();
                        let mut off = 0;
                        for &p in parts {
                            let w = self.value(p).shape()[1];
                            if self.rg(p) {
                                ensure(&mut bufs, p, m * w);
                                let buf = bufs[p.0].as_mut().unwrap();
                                for i in 0..m {
                                    for j in 0..w {
                                        buf[i * w + j] += g[i * total + off + j];
                                    }
                                }
                            }
                            off += w;
                        }
                    }
                }
                Op::Reshape(x) => {
                    if self.rg(*x) {
                        ensure(&mut bufs, *x, g.len());
                        let buf = bufs[x.0].as_mut().unwrap();
                        for (o, &gi) in buf.iter_mut().zip(&g) {
                            *o += gi;
                        }
                    }
                }
                Op::Conv3d { input, weight, stride, pad } => {
                    if self.rg(*weight) {
                        ensure(&mut bufs, *weight, self.value(*weight).numel());
                        let mut dw = bufs[weight.0].take().unwrap();
                        conv3d_backward_weight(self.value(*input), self.value(*weight).shape(), &g, node.value.shape(), *stride, *pad, &mut dw);
                        bufs[weight.0] = Some(dw);
                    }
                    if self.rg(*input) {
                        ensure(&mut bufs, *input, self.value(*input).numel());
                        let mut di = bufs[input.0].take().unwrap();
                        conv3d_backward_input(self.value(*input).shape(), self.value(*weight), &g, node.value.shape(), *stride, *pad, &mut di);
                        bufs[input.0] = Some(di);
                    }
                }
                Op::Gather { grid, points } => {
                    if self.rg(*grid) {
                        ensure(&mut bufs, *grid, self.value(*grid).numel());
                        let gs = self.value(*grid).shape().to_vec();
                        let buf = bufs[grid.0].as_mut().unwrap();
                        gather_backward::<S>(&gs, points, &g, buf);
                    }
                }
                Op::Film { x, scale, shift } => {
                    if self.rg(*x) {
                        ensure(&mut bufs, *x, g.len());
                        let sd = self.value(*scale).data();
                        let buf = bufs[x.0].as_mut().unwrap();
                        for i in 0..g.len() {
                            buf[i] += g[i] * sd[i];
                        }
                    }
                    if self.rg(*scale) {
                        ensure(&mut bufs, *scale, g.len());
                        let xd = self.value(*x).data();
                        let buf = bufs[scale.0].as_mut().unwrap();
                        for i in 0..g.len() {
                            buf[i] += g[i] * xd[i];
                        }
                    }
                    if self.rg(*shift) {
                        ensure(&mut bufs, *shift, g.len());
                        let buf = bufs[shift.0].as_mut().unwrap();
                        for (o, &gi) in buf.iter_mut().zip(&g) {
                            *o += gi;
                        }
                    }
                }
            }
        }

        let grads = bufs
            .into_iter()
            .enumerate()
            .map(|(i, b)| {
                b.map(|v| Tensor::from_vec(self.nodes[i].value.shape().to_vec(), v))
            })
            .collect();
        Ok(Gradients { grads })
    }
}

/// Direct convolution, weight-stationary inner loops. Shared by the graph op
/// and the tape-free inference path so the two produce identical bits.
pub fn conv3d_forward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> Tensor<S> {
    let is = input.shape();
    let ws = weight.shape();
    let (c_in, d, h, w) = (is[0], is[1], is[2], is[3]);
    let (c_out, k) = (ws[0], ws[2]);
    let od = (d + 2 * pad - k) / stride + 1;
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let id_ = input.data();
    let wd = weight.data();
    let mut out = vec![S::ZERO; c_out * od * oh * ow];
    let in_plane = h * w;
    let out_plane = oh * ow;
    for o in 0..c_out {
        let obase = o * od * out_plane;
        for c in 0..c_in {
            let ibase = c * d * in_plane;
            let wbase = (o * c_in + c) * k * k * k;
            for kz in 0..k {
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wd[wbase + (kz * k + ky) * k + kx];
                        for z in 0..od {
                            let iz = (z * stride + kz) as isize - pad as isize;
                            if iz < 0 || iz >= d as isize {
                                continue;
                            }
                            let izb = ibase + iz as usize * in_plane;
                            let ozb = obase + z * out_plane;
                            for y in 0..oh {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let iyb = izb + iy as usize * w;
                                let oyb = ozb + y * ow;
                                for x in 0..ow {
                                    let ix = (x * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    out[oyb + x] += wv * id_[iyb + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(vec![c_out, od, oh, ow], out)
}

fn conv3d_backward_weight<S: Scalar>(
    input: &Tensor<S>,
    weight_shape: &[usize],
    g: &[S],
    out_shape: &[usize],
    stride: usize,
    pad: usize,
    dw: &mut [S],
) {
    let is = input.shape();
    let (c_in, d, h, w) = (is[0], is[1], is[2], is[3]);
    let (c_out, k) = (weight_shape[0], weight_shape[2]);
    let (od, oh, ow) = (out_shape[1], out_shape[2], out_shape[3]);
    let in_plane = h * w;
    let out_plane = oh * ow;
    let id_ = input.data();
    for o in 0..c_out {
        let obase = o * od * out_plane;
        for c in 0..c_in {
            let ibase = c * d * in_plane;
            let wbase = (o * c_in + c) * k * k * k;
            for kz in 0..k {
                for ky in 0..k {
                    for kx in 0..k {
                        let mut acc = S::ZERO;
                        for z in 0..od {
                            let iz = (z * stride + kz) as isize - pad as isize;
                            if iz < 0 || iz >= d as isize {
                                continue;
                            }
                            let izb = ibase + iz as usize * in_plane;
                            let ozb = obase + z * out_plane;
                            for y in 0..oh {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let iyb = izb + iy as usize * w;
                                let oyb = ozb + y * ow;
                                for x in 0..ow {
                                    let ix = (x * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += g[oyb + x] * id_[iyb + ix as usize];
                                }
                            }
                        }
                        dw[wbase + (kz * k + ky) * k + kx] += acc;
                    }
                }
            }
        }
    }
}

fn conv3d_backward_input<S: Scalar>(
    input_shape: &[usize],
    weight: &Tensor<S>,
    g: &[S],
    out_shape: &[usize],
    stride: usize,
    pad: usize,
    di: &mut [S],
) {
    let (c_in, d, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let ws = weight.shape();
    let (c_out, k) = (ws[0], ws[2]);
    let (od, oh, ow) = (out_shape[1], out_shape[2], out_shape[3]);
    let in_plane = h * w;
    let out_plane = oh * ow;
    let wd = weight.data();
    for o in 0..c_out {
        let obase = o * od * out_plane;
        for c in 0..c_in {
            let ibase = c * d * in_plane;
            let wbase = (o * c_in + c) * k * k * k;
            for kz in 0..k {
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wd[wbase + (kz * k + ky) * k + kx];
                        for z in 0..od {
                            let iz = (z * stride + kz) as isize - pad as isize;
                            if iz < 0 || iz >= d as isize {
                                continue;
                            }
                            let izb = ibase + iz as usize * in_plane;
                            let ozb = obase + z * out_plane;
                            for y in 0..oh {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let iyb = izb + iy as usize * w;
                                let oyb = ozb + y * ow;
                                for x in 0..ow {
                                    let ix = (x * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    di[iyb + ix as usize] += wv * g[oyb + x];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Corner weights for one query point against a `[C, D, H, W]` grid,
/// cell-center convention, coordinates clamped to the volume. Weights are
/// computed in f64 regardless of the tensor scalar type.
fn corner_weights(
    dims: (usize, usize, usize),
    p: &[f64; 3],
) -> ([usize; 3], [f64; 3]) {
    let (d, h, w) = dims;
    let clamp = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
    let gx = clamp(p[0], w);
    let gy = clamp(p[1], h);
    let gz = clamp(p[2], d);
    let x0 = (gx.floor() as usize).min(w.saturating_sub(2));
    let y0 = (gy.floor() as usize).min(h.saturating_sub(2));
    let z0 = (gz.floor() as usize).min(d.saturating_sub(2));
    ([x0, y0, z0], [gx - x0 as f64, gy - y0 as f64, gz - z0 as f64])
}

/// Shared by the graph op and the inference path.
pub fn gather_forward<S: Scalar>(grid: &Tensor<S>, points: &[[f64; 3]]) -> Tensor<S> {
    let gs = grid.shape();
    let (c, d, h, w) = (gs[0], gs[1], gs[2], gs[3]);
    let gd = grid.data();
    let plane = h * w;
    let vol = d * plane;
    let n = points.len();
    let mut out = vec![S::ZERO; n * c];
    for (pi, p) in points.iter().enumerate() {
        let ([x0, y0, z0], [fx, fy, fz]) = corner_weights((d, h, w), p);
        for ci in 0..c {
            let base = ci * vol;
            let mut acc = 0.0f64;
            for (dz, wz) in [(0usize, 1.0 - fz), (1, fz)] {
                let zb = base + (z0 + dz) * plane;
                for (dy, wy) in [(0usize, 1.0 - fy), (1, fy)] {
                    let yb = zb + (y0 + dy) * w;
                    let wzy = wz * wy;
                    for (dx, wx) in [(0usize, 1.0 - fx), (1, fx)] {
                        acc += wzy * wx * gd[yb + x0 + dx].to_f64();
                    }
                }
            }
            out[pi * c + ci] = S::from_f64(acc);
        }
    }
    Tensor::from_vec(vec![n, c], out)
}

fn gather_backward<S: Scalar>(
    grid_shape: &[usize],
    points: &[[f64; 3]],
    g: &[S],
    buf: &mut [S],
) {
    let (c, d, h, w) = (grid_shape[0], grid_shape[1], grid_shape[2], grid_shape[3]);
    let plane = h * w;
    let vol = d * plane;
    for ci in 0..c {
        let base = ci * vol;
        for (pi, p) in points.iter().enumerate() {
            let ([x0, y0, z0], [fx, fy, fz]) = corner_weights((d, h, w), p);
            let gi = g[pi * c + ci].to_f64();
            for (dz, wz) in [(0usize, 1.0 - fz), (1, fz)] {
                let zb = base + (z0 + dz) * plane;
                for (dy, wy) in [(0usize, 1.0 - fy), (1, fy)] {
                    let yb = zb + (y0 + dy) * w;
                    let wzy = wz * wy;
                    for (dx, wx) in [(0usize, 1.0 - fx), (1, fx)] {
                        buf[yb + x0 + dx] += S::from_f64(gi * wzy * wx);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(vec![rows, cols], v)
    }

    #[test]
    fn matmul_known_values() {
        let mut g = Graph::new();
        let a = g.constant(t2(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = g.constant(t2(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn shape_errors() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.constant(t2(2, 3, vec![0.0; 6]));
        let b = g.constant(t2(2, 2, vec![0.0; 4]));
        assert!(matches!(g.add(a, b), Err(crate::Error::ShapeMismatch { .. })));
        assert!(matches!(g.matmul(a, b), Err(crate::Error::ShapeMismatch { .. })));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.param(t2(2, 2, vec![1.0; 4]));
        assert!(matches!(
            g.backward(a),
            Err(crate::Error::NonScalarLoss { .. })
        ));
    }

    /// Independent per-cell convolution used as a forward oracle.
    fn conv_naive(
        input: &Tensor<f64>,
        weight: &Tensor<f64>,
        stride: usize,
        pad: usize,
    ) -> Vec<f64> {
        let is = input.shape();
        let ws = weight.shape();
        let (ci, d, h, w) = (is[0], is[1], is[2], is[3]);
        let (co, k) = (ws[0], ws[2]);
        let od = (d + 2 * pad - k) / stride + 1;
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; co * od * oh * ow];
        let idd = input.data();
        let wdd = weight.data();
        for o in 0..co {
            for z in 0..od {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = 0.0;
                        for c in 0..ci {
                            for kz in 0..k {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let iz = (z * stride + kz) as isize - pad as isize;
                                        let iy = (y * stride + ky) as isize - pad as isize;
                                        let ix = (x * stride + kx) as isize - pad as isize;
                                        if iz < 0
                                            || iy < 0
                                            || ix < 0
                                            || iz >= d as isize
                                            || iy >= h as isize
                                            || ix >= w as isize
                                        {
                                            continue;
                                        }
                                        let iv = idd[((c * d + iz as usize) * h
                                            + iy as usize)
                                            * w
                                            + ix as usize];
                                        let wv = wdd[(((o * ci + c) * k + kz) * k + ky) * k
                                            + kx];
                                        acc += iv * wv;
                                    }
                                }
                            }
                        }
                        out[((o * od + z) * oh + y) * ow + x] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv3d_matches_naive_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let input = Tensor::from_vec(
            vec![2, 6, 6, 6],
            (0..2 * 216).map(|_| rng.gen::<f64>() - 0.5).collect(),
        );
        let weight = Tensor::from_vec(
            vec![3, 2, 3, 3, 3],
            (0..3 * 2 * 27).map(|_| rng.gen::<f64>() - 0.5).collect(),
        );
        let mut g = Graph::new();
        let i = g.constant(input.clone());
        let w = g.constant(weight.clone());
        let out = g.conv3d(i, w, 2, 1).unwrap();
        assert_eq!(g.value(out).shape(), &[3, 3, 3, 3]);
        let oracle = conv_naive(&input, &weight, 2, 1);
        for (a, b) in g.value(out).data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv3d_halves_dims_along_the_stack() {
        let mut g: Graph<f32> = Graph::new();
        let mut x = g.constant(Tensor::zeros(vec![1, 64, 64, 64]));
        let chans = [8usize, 16, 32, 32, 32];
        let mut cin = 1;
        let mut dim = 64;
        for &c in &chans {
            let w = g.constant(Tensor::zeros(vec![c, cin, 3, 3, 3]));
            x = g.conv3d(x, w, 2, 1).unwrap();
            dim /= 2;
            assert_eq!(g.value(x).shape(), &[c, dim, dim, dim]);
            cin = c;
        }
        assert_eq!(dim, 2);
    }

    #[test]
    fn gather_at_cell_center_returns_cell_value() {
        let mut g: Graph<f64> = Graph::new();
        let mut data = vec![0.0; 4 * 4 * 4];
        data[(2 * 4 + 1) * 4 + 3] = 7.5; // z=2, y=1, x=3
        let grid = g.constant(Tensor::from_vec(vec![1, 4, 4, 4], data));
        let out = g
            .gather(grid, Arc::new(vec![[3.0, 1.0, 2.0]]))
            .unwrap();
        assert_eq!(g.value(out).data(), &[7.5]);
    }

    #[test]
    fn gather_interpolates_linearly() {
        let mut g: Graph<f64> = Graph::new();
        // Value equal to x-coordinate: interpolation must reproduce x.
        let mut data = vec![0.0; 64];
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..4 {
                    data[(z * 4 + y) * 4 + x] = x as f64;
                }
            }
        }
        let grid = g.constant(Tensor::from_vec(vec![1, 4, 4, 4], data));
        let out = g
            .gather(grid, Arc::new(vec![[1.25, 2.0, 2.0], [2.75, 0.5, 1.5]]))
            .unwrap();
        let v = g.value(out).data();
        assert!((v[0] - 1.25).abs() < 1e-12);
        assert!((v[1] - 2.75).abs() < 1e-12);
    }

    #[test]
    fn gather_clamps_outside_queries() {
        let mut g: Graph<f64> = Graph::new();
        let mut data = vec![0.0; 8];
        data[0] = 1.0; // z=0,y=0,x=0
        data[7] = 9.0; // z=1,y=1,x=1
        let grid = g.constant(Tensor::from_vec(vec![1, 2, 2, 2], data));
        let out = g
            .gather(
                grid,
                Arc::new(vec![[-3.0, -3.0, -3.0], [5.0, 5.0, 5.0]]),
            )
            .unwrap();
        assert_eq!(g.value(out).data(), &[1.0, 9.0]);
    }

    #[test]
    fn backward_is_bit_deterministic() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let run = |vals: &[f64]| -> Vec<f64> {
            let mut g = Graph::new();
            let a = g.param(t2(3, 3, vals.to_vec()));
            let b = g.param(t2(3, 3, vals.iter().map(|v| v * 0.5 + 0.1).collect()));
            let m = g.matmul(a, b).unwrap();
            let r = g.relu(m);
            let s = g.sigmoid(r);
            let l = g.mean(s);
            let grads = g.backward(l).unwrap();
            grads.get(a).unwrap().data().to_vec()
        };
        let vals: Vec<f64> = (0..9).map(|_| rng.gen::<f64>() - 0.5).collect();
        let g1 = run(&vals);
        let g2 = run(&vals);
        assert_eq!(g1, g2);
    }

    #[test]
    fn constant_paths_get_no_gradient() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.param(t2(1, 2, vec![1.0, 2.0]));
        let c = g.constant(t2(1, 2, vec![3.0, 4.0]));
        let m = g.mul(a, c).unwrap();
        let l = g.sum(m);
        let grads = g.backward(l).unwrap();
        assert!(grads.get(a).is_some());
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(a).unwrap().data(), &[3.0, 4.0]);
    }
}
