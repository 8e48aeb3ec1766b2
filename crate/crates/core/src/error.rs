//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate iterate: {0}")]
    DegenerateIterate(String),

    #[error("no certificate for {node}: {reason}")]
    NoCertificate { node: String, reason: String },

    #[error("domain violation: {0}")]
    DomainViolation(String),

    #[error("cone violation: {0}")]
    ConeViolation(String),

    #[error("iteration diverged at step {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("uncertified layer: {detail} (requires {required})")]
    UncertifiedLayer { detail: String, required: String },

    #[error("ill-conditioned equilibrium: {0}")]
    IllConditioned(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("out of range: {0}")]
    Range(String),

    #[error("training failed at step {step}: {detail}")]
    TrainingFailure { step: usize, detail: String },

    #[error("probe failed at start {start}: {detail}")]
    ProbeFailure { start: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
