use thiserror::Error;

/// Errors raised by the solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("gradient singularity: alpha = {alpha} < 0 with zero gradient and no regularization")]
    Singularity { alpha: f64 },

    #[error("radial evaluation at the pole r = 0; use the symmetry condition g'(0) = 0")]
    Pole,

    #[error("point {point:?} lies outside the domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("grid resolution too coarse: {interior} interior nodes (need at least 3)")]
    Resolution { interior: usize },

    #[error("no convergence after {steps} steps (residual {residual:e}, tolerance {tol:e})")]
    NonConvergence { steps: usize, residual: f64, tol: f64 },

    #[error("inner solve failed at iteration step {step}: {source}")]
    InnerSolve {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("eigenvalue bracket failure: {0}")]
    Bracket(String),

    #[error("iteration budget exhausted at lambda = {lambda}; feasibility undecided")]
    IndeterminateLambda { lambda: f64 },

    #[error("barrier certification failed at {point:?}: F = {value:e} is not negative")]
    BarrierFailure { point: Vec<f64>, value: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
