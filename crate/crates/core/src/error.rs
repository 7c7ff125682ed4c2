use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value produced by `{op}` at tape node {node}")]
    NonFinite { op: &'static str, node: usize },

    #[error("spectral condition violated: Neumann iterate grew by {growth:.3e} (limit {limit:.1e}); ||I - kappa*G|| < 1 does not hold")]
    SpectralCondition { growth: f64, limit: f64 },

    #[error("spectral condition violated: ||I - kappa*G||_2 = {norm:.6} is not below 1")]
    ContractionViolated { norm: f64 },

    #[error("finite-difference step {0:e} is too small")]
    StepUnderflow(f64),

    #[error("training diverged at outer iteration {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },

    #[error("unroll length {0} exceeds the memory guard")]
    UnrollTooLong(usize),

    #[error("invalid SIC pattern: {0}")]
    InvalidPattern(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("{what} not found: {path}")]
    MissingFile { what: &'static str, path: PathBuf },

    #[error("unsupported file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
