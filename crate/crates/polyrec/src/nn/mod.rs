//! Minimal dense neural toolkit: MLPs with manual backprop, AdamW,
//! plateau LR scheduling, and finite-difference gradient checking.

pub mod adamw;
pub mod checkpoint;
pub mod gradcheck;
pub mod matrix;
pub mod mlp;
pub mod scheduler;

pub use adamw::AdamW;
pub use gradcheck::gradient_check;
pub use matrix::Matrix;
pub use mlp::{Layer, LayerGrad, Mlp, MlpCache, MlpGrads, Mode};
pub use scheduler::PlateauScheduler;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid layer dims: {0}")]
    InvalidDims(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("dropout rate {0} is outside [0, 1)")]
    InvalidDropout(f64),
    #[error("train-mode dropout requires an rng")]
    MissingRng,
    #[error("forward cache does not match this network")]
    CacheMismatch,
    #[error("non-finite gradient")]
    NonFiniteGrad,
    #[error("corrupt checkpoint data: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
