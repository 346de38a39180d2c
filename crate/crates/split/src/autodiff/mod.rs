//! Minimal reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] is an eager tape: building an op computes its value
//! immediately, and [`Graph::backward`] runs one reverse sweep from a scalar
//! loss. The op set is exactly what the models here need (dense affine maps,
//! strided 3d convolution, trilinear gathers, FiLM, pointwise nonlinearities
//! and reductions), generic over f32/f64 through [`Scalar`]. All
//! accumulations run in fixed order, so forward values, gradients and
//! checkpoint bytes are reproducible run to run.

mod checkpoint;
mod graph;
pub mod gradcheck;
mod optim;
mod tensor;

pub use checkpoint::{file_sha256, hex, Checkpoint};
pub use graph::{conv3d_forward, gather_forward, Gradients, Graph, NodeId};
pub use optim::{Adam, ParamStore};
pub use tensor::{Scalar, Tensor};
