//! Task-conditioned 6-DoF pose generation on desk-scale occupancy grids.
//!
//! The crate implements the full pipeline:
//!
//! * [`se3`]: poses, twists, tangent-space Gaussians and their scores.
//! * Synthetic data: primitive scenes, a simulated depth camera, point-cloud
//!   processing, voxelization, grasp and descriptor annotation.
//! * A small reverse-mode differentiation engine driving a multi-scale 3D
//!   convolutional feature pyramid and FiLM-conditioned prediction heads.
//! * Denoising score matching over pose perturbations and annealed Langevin
//!   sampling in the local frame of each moving pose hypothesis.
//! * Evaluation: pose-set coverage and precision, a geometric grasp oracle,
//!   and a sequential decluttering protocol.
//!
//! Start with the `examples/` directory; each example exercises one capability
//! end to end. The `split` binary exposes the same functionality behind
//! subcommands (`gen-data`, `train`, `sample`, `eval-poses`, `eval-declutter`,
//! `inspect`, `selftest`).

pub mod autodiff;
pub mod datagen;
pub mod diffusion;
pub mod encoder;
pub mod evalkit;
pub mod score_model;
pub mod scene;
pub mod se3;
pub mod trainer;

use thiserror::Error as ThisError;

/// Crate-wide error type. Validation failures map to exit code 1 in the CLI,
/// runtime failures to exit code 2.
#[derive(Debug, ThisError)]
pub enum Error {
    #[error("rotation too close to a half turn for the canonical log (trace = {trace})")]
    NearPiRotation { trace: f64 },

    #[error("domain error: {what}")]
    Domain { what: String },

    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: String, details: String },

    #[error("backward pass requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("depth camera saw no surface")]
    EmptyView,

    #[error("no feasible grasp found after {attempts} attempts")]
    NoGraspFound { attempts: usize },

    #[error("dataset contains no scenes")]
    DatasetEmpty,

    #[error("unsupported primitive: {what}")]
    UnsupportedPrimitive { what: String },

    #[error("training loss became non-finite at step {step}: {details}")]
    NonFiniteLoss { step: usize, details: String },

    #[error("evaluator metrics need both labels present (got single-class set)")]
    SingleClassSet,

    #[error("pose metrics need a non-empty ground-truth set")]
    EmptyGroundTruth,

    #[error("all sampling chains were rejected")]
    AllChainsRejected,

    #[error("config error: {what}")]
    Config { what: String },

    #[error("format error in {what}: {details}")]
    Format { what: String, details: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// CLI exit code class: 1 for validation errors, 2 for runtime errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Domain { .. } => 1,
            _ => 2,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Error {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}
