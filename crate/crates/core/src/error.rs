use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// `I + gamma * F` cannot be inverted reliably.
    #[error(
        "resolvent is singular: I + {gamma}*F has reciprocal condition number {rcond:e}{}",
        step_suffix(*step)
    )]
    SingularResolvent {
        gamma: f64,
        rcond: f64,
        step: Option<usize>,
    },

    #[error("implicit step did not converge after {iterations} Newton iterations (residual {residual:e})")]
    ResolventNotConverged { iterations: usize, residual: f64 },

    /// A parameter lies outside the regime a result requires. The message names
    /// the violated inequality.
    #[error("regime violation: {0}")]
    Regime(String),

    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),

    #[error("a reference solution is required")]
    MissingReference,

    #[error("semidefinite solver: {0}")]
    Solver(String),

    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    /// A recorded trace does not satisfy its own update rule.
    #[error("inconsistent trace: {0}")]
    Inconsistent(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn step_suffix(step: Option<usize>) -> String {
    match step {
        Some(k) => format!(" at step {k}"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;
