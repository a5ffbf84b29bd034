use thiserror::Error;

use crate::fixedpoint::FixedPointTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// The grid does not reach far enough to evaluate `max_{|t|<=1/eps}` at the root.
    #[error("distance truncated by grid half-width {half_width}: value lies in [{lo}, {hi}]")]
    Truncated { lo: f64, hi: f64, half_width: f64 },

    #[error("inadmissible constants: {0}")]
    Inadmissible(String),

    #[error("coefficient audit failed: {0}")]
    Audit(String),

    #[error("coefficient evaluator failure: {0}")]
    Evaluator(String),

    #[error("non-finite state on path {path} at step {step}")]
    NonFinite { path: usize, step: usize },

    #[error("fixed-point iteration did not converge within {} iterations", .0.iterates.len())]
    NotConverged(Box<FixedPointTrace>),

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
