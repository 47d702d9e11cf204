use thiserror::Error;

use crate::stats::SkewNormalFit;

/// Errors produced by the token simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid angle: {0}")]
    InvalidAngle(String),

    #[error("invalid observable model: {0}")]
    InvalidModel(String),

    /// A caller-side precondition was violated (zero shots, empty grids, ...).
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    /// An iterative fit did not converge. Carries the moment-based estimate
    /// when one is available so callers can downgrade to a warning.
    #[error("fit failed: {reason}")]
    FitFailed {
        reason: String,
        moment_estimate: Option<SkewNormalFit>,
    },

    #[error("target acceptance {target} is unachievable for M = {tokens}")]
    UnachievableTarget { target: f64, tokens: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("data error at line {line}: {message}")]
    Data { line: usize, message: String },

    #[error("invalid profile document: {0}")]
    Profile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
