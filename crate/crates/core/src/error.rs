use thiserror::Error;

/// Errors raised by the model, free-energy, sampling and diagnostic routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("(beta, h) = (1, 0) is the critical point and is not supported")]
    CriticalPoint,

    #[error("exhaustive enumeration refused for n = {n} (limit {limit})")]
    EnumerationTooLarge { n: usize, limit: usize },

    #[error("conditioning starvation: sweep acceptance {acceptance:.3e} below {threshold:.1e}")]
    ConditioningStarvation { acceptance: f64, threshold: f64 },

    #[error("regression matrix is singular (min |eigenvalue| = {min_abs_eig:.3e})")]
    SingularLambda { min_abs_eig: f64 },

    #[error("need at least {need} draws, got {got}")]
    TooFewDraws { got: usize, need: usize },

    #[error("smoothing parameter t = {0} outside (0, 1)")]
    SmoothingOutOfRange(f64),

    #[error("covariance matrix is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),

    #[error("density grid failed to capture the mass; widen the grid ({0})")]
    GridNormalization(String),

    #[error("rate fit needs positive distances; got {0}")]
    NonPositiveDistance(f64),

    #[error("rate fit needs at least {need} strictly increasing points, got {got}")]
    TooFewPoints { got: usize, need: usize },

    #[error("all points of the rate study are noise-dominated")]
    NoiseDominated,

    #[error("empty batch")]
    EmptyBatch,

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
