use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The prefix has probability zero under the topic (or under every topic).
    #[error("zero evidence: {0}")]
    ZeroEvidence(String),

    /// `q_i = 0` while `p_i > 0`.
    #[error("absolute continuity violated at index {index}: p = {p}, q = 0")]
    AbsoluteContinuity { index: usize, p: f64 },

    #[error("incompatible architecture: {0}")]
    IncompatibleArchitecture(String),

    #[error("insufficient ensemble: need at least 2 runs per side, got {0}")]
    InsufficientEnsemble(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> LabError {
    LabError::InvalidArgument(msg.into())
}
