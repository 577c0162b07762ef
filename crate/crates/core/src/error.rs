use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("dense covariance violates the factorized sparsity pattern at ({row}, {col}): {value:e}")]
    PatternViolation { row: usize, col: usize, value: f64 },

    #[error("innovation covariance is numerically singular (condition number {0:e})")]
    SingularMatrix(f64),

    #[error("covariance is not positive semidefinite: {0}")]
    PsdViolation(String),

    #[error("latent state dimension {0} is odd")]
    OddLatentDim(usize),

    #[error("backward called on an empty tape")]
    EmptyTape,

    #[error("loss requested with an all-false prediction mask")]
    EmptyMask,

    #[error("integration diverged in trajectory {trajectory} at step {step}")]
    IntegrationDiverged { trajectory: usize, step: usize },

    #[error("trajectory of length {len} is too short for windows of length {window} (need at least {needed})")]
    TrajectoryTooShort { len: usize, window: usize, needed: usize },

    #[error("dataset manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("{path}: expected {expected} bytes, found {found}")]
    ShortFile { path: PathBuf, expected: u64, found: u64 },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
