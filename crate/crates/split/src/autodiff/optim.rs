//! Named parameter collection and the Adam update rule.

use super::graph::{Graph, Gradients, NodeId};
use super::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// Ordered collection of named tensors. Order is insertion order and is the
/// order used for optimizer state and serialization, so it must be stable
/// across runs (it is: model construction inserts in a fixed sequence).
#[derive(Clone)]
pub struct ParamStore<S: Scalar> {
    entries: Vec<(String, Tensor<S>)>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn insert(&mut self, name: &str, t: Tensor<S>) -> Result<()> {
        if self.index_of(name).is_some() {
            return Err(Error::Config { what: format!("duplicate parameter name {name}") });
        }
        self.entries.push((name.to_string(), t));
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.index_of(name).map(|i| &self.entries[i].1)
    }

    /// Replaces a tensor, keeping its shape.
    pub fn set(&mut self, name: &str, t: Tensor<S>) -> Result<()> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::Config { what: format!("unknown parameter {name}") })?;
        if self.entries[i].1.shape() != t.shape() {
            return Err(Error::ShapeMismatch {
                op: "param set".into(),
                details: format!(
                    "{name}: {:?} -> {:?}",
                    self.entries[i].1.shape(),
                    t.shape()
                ),
            });
        }
        self.entries[i].1 = t;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Registers every parameter as a grad-requiring leaf of `g`, in store
    /// order. Returned ids are parallel to the store.
    pub fn leaves(&self, g: &mut Graph<S>) -> Vec<NodeId> {
        self.entries.iter().map(|(_, t)| g.param(t.clone())).collect()
    }

    /// Gradient tensors in store order, `None` where the loss did not touch
    /// the parameter.
    pub fn collect_grads<'a>(
        &self,
        ids: &[NodeId],
        grads: &'a Gradients<S>,
    ) -> Vec<Option<&'a Tensor<S>>> {
        ids.iter().map(|&id| grads.get(id)).collect()
    }
}

/// Adam with bias correction. Moment buffers are kept in the parameter
/// scalar type; the scale factors are computed in f64.
pub struct Adam<S: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(store: &ParamStore<S>, lr: f64) -> Self {
        let m = store.iter().map(|(_, t)| Tensor::zeros(t.shape().to_vec())).collect();
        let v = store.iter().map(|(_, t)| Tensor::zeros(t.shape().to_vec())).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over the whole store. `grads` must be parallel to the
    /// store; `None` leaves a parameter untouched.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &[Option<&Tensor<S>>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::ShapeMismatch {
                op: "adam step".into(),
                details: format!("{} grads for {} params", grads.len(), store.len()),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let b1 = S::from_f64(self.beta1);
        let b1c = S::from_f64(1.0 - self.beta1);
        let b2 = S::from_f64(self.beta2);
        let b2c = S::from_f64(1.0 - self.beta2);
        for i in 0..store.len() {
            let Some(gt) = grads[i] else { continue };
            let name = store.entries[i].0.clone();
            let p = &store.entries[i].1;
            if gt.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam step".into(),
                    details: format!("{name}: grad {:?} vs param {:?}", gt.shape(), p.shape()),
                });
            }
            let g = gt.data();
            let mut m = self.m[i].data().to_vec();
            let mut v = self.v[i].data().to_vec();
            let mut newp = p.data().to_vec();
            for j in 0..g.len() {
                m[j] = b1 * m[j] + b1c * g[j];
                v[j] = b2 * v[j] + b2c * g[j] * g[j];
                let mh = m[j].to_f64() / bc1;
                let vh = v[j].to_f64() / bc2;
                let upd = self.lr * mh / (vh.sqrt() + self.eps);
                newp[j] = newp[j] - S::from_f64(upd);
            }
            let shape = p.shape().to_vec();
            self.m[i] = Tensor::from_vec(shape.clone(), m);
            self.v[i] = Tensor::from_vec(shape.clone(), v);
            store.entries[i].1 = Tensor::from_vec(shape, newp);
        }
        Ok(())
    }

    /// Moment buffers for checkpointing, parallel to the store.
    pub fn state(&self) -> (u64, &[Tensor<S>], &[Tensor<S>]) {
        (self.t, &self.m, &self.v)
    }

    pub fn restore_state(&mut self, t: u64, m: Vec<Tensor<S>>, v: Vec<Tensor<S>>) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::Format {
                what: "optimizer state".into(),
                details: format!("{} moment tensors for {} params", m.len(), self.m.len()),
            });
        }
        for (old, new) in self.m.iter().zip(&m) {
            if old.shape() != new.shape() {
                return Err(Error::Format {
                    what: "optimizer state".into(),
                    details: format!("moment shape {:?} vs {:?}", new.shape(), old.shape()),
                });
            }
        }
        self.t = t;
        self.m = m;
        self.v = v;
        Ok(())
    }
}
