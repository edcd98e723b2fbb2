use thiserror::Error;

use crate::types::MixedVector;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("nonconvex sensor objective requires n_c == n_d (got n_c={n_c}, n_d={n_d})")]
    UnequalBlocks { n_c: usize, n_d: usize },

    #[error("discrete component {index} = {value} lies outside [0, 1]")]
    OutOfBox { index: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Newton iteration on a local subproblem ran out of steps.
    #[error("local solve did not converge: gradient norm {grad_norm:e} after {steps} steps")]
    NonConvergence {
        best: MixedVector,
        grad_norm: f64,
        steps: usize,
    },

    #[error("agent {agent} failed at stage I iteration {iteration}")]
    LocalSolve {
        agent: usize,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("box QP did not reach KKT tolerance: residual {residual:e}")]
    QpNonConvergence { best: MixedVector, residual: f64 },

    #[error("stage II exceeded {bumps} outer bumps; best gamma {gamma:e}")]
    MaxOuterExceeded {
        best: MixedVector,
        gamma: f64,
        bumps: usize,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
