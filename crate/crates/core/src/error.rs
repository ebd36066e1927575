use thiserror::Error;

/// Errors produced by the numerics, simulator and experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid step distribution: {0}")]
    InvalidSpec(String),

    #[error("invalid offspring distribution: {0}")]
    InvalidOffspring(String),

    #[error("t = {t} is outside the open LMGF domain ({lo}, {hi})")]
    Domain { t: f64, lo: f64, hi: f64 },

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("mean offspring must exceed 1 (log mean offspring {0} is not positive)")]
    NonSupercritical(f64),

    #[error("tilt equation has no negative root: {reason}")]
    Unsolvable { reason: String },

    #[error("lattice step distribution (period {period}) is not supported here")]
    Lattice { period: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("resource guard tripped: {0}")]
    ResourceGuard(String),

    #[error("rejection sampler starved: acceptance {acceptance:.3e} after {attempts} attempts; use a Gaussian step or a smaller n")]
    RejectionStarvation { acceptance: f64, attempts: u64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
