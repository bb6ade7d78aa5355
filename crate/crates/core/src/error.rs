use thiserror::Error;

/// Errors raised by the estimation and simulation routines.
#[derive(Debug, Error)]
pub enum EsfError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("weights matrix is not symmetric: |w[{i}][{j}] - w[{j}][{i}]| = {diff:e}")]
    Asymmetric { i: usize, j: usize, diff: f64 },

    #[error("unit {0} has no neighbours (zero row sum)")]
    IsolatedUnit(usize),

    #[error("weights matrix is identically zero")]
    DegenerateWeights,

    #[error("weights matrix is already normalized")]
    AlreadyNormalized,

    #[error("failed to draw a weights matrix without isolated units after {attempts} attempts (n = {n}, mu = {mu})")]
    RedrawExhausted { n: usize, mu: f64, attempts: usize },

    #[error("eigendecomposition failed: {0}")]
    Decomposition(String),

    #[error("design matrix is rank deficient: column {column} is linearly dependent on earlier columns")]
    RankDeficient { column: usize },

    #[error("residual vector is identically zero")]
    ZeroResiduals,

    #[error("Moran Z is undefined: {0}")]
    UndefinedMoran(String),

    #[error("tuning parameter must be positive, got {0}")]
    NonPositiveTheta(f64),

    #[error("coordinate descent did not converge within {sweeps} sweeps (max change {max_change:e}, max KKT violation {max_violation:e})")]
    NotConverged {
        sweeps: usize,
        max_change: f64,
        max_violation: f64,
    },

    #[error("Chun rule requires m > -0.6, got {0}")]
    ChunDomain(f64),

    #[error("linear system is ill-conditioned (condition number {0:e})")]
    IllConditioned(f64),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EsfError>;
