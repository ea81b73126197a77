use thiserror::Error;

/// Errors raised by the estimators, tests and data plumbing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },

    #[error("non-finite entry at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("matrix is singular")]
    Singular,

    #[error("eigen-solver did not converge")]
    NoConvergence,

    #[error("repeated eigenvalue {0} makes the shrinker undefined")]
    RepeatedEigenvalue(f64),

    #[error("zero denominator in shrinker at index {0}")]
    ZeroDenominator(usize),

    #[error("point {0} lies on the spectrum")]
    OnSpectrum(f64),

    #[error("point {x} is outside the support [{lower}, {upper}]")]
    OutsideSupport { x: f64, lower: f64, upper: f64 },

    #[error("dimension p={p} must be smaller than sample size n={n}")]
    DimensionTooLarge { p: usize, n: usize },

    #[error("csv parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
