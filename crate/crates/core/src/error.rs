use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("target of length {target_len} cannot be aligned in {steps} timesteps")]
    InfeasibleTarget { target_len: usize, steps: usize },

    #[error("character {0:?} is not in the charset")]
    UnknownCharacter(char),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("mask is empty; the attack would be vacuous")]
    VacuousMask,

    #[error("watermark of {needed_height}x{needed_width} does not fit in a {height}x{width} image")]
    WatermarkDoesNotFit {
        needed_height: usize,
        needed_width: usize,
        height: usize,
        width: usize,
    },

    #[error("weights file: {0}")]
    WeightsFormat(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
