use thiserror::Error;

/// Errors raised by the imputation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("mode {mode} out of range for a {order}-way tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("invalid rank {rank}: {reason}")]
    InvalidRank { rank: usize, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("tensor has no observed entries")]
    EmptyObserved,

    #[error("matrix is not positive definite after jitter cap ({context})")]
    NotPositiveDefinite { context: String },

    #[error("conditional block of {size} entries exceeds the dense cap of {cap}; mark at least one mode as identity")]
    ConditionalTooLarge { size: usize, cap: usize },

    #[error("conditional covariance of block {block} is not positive definite")]
    ConditionalNotPd { block: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("need at least {needed} chains, got {got}")]
    TooFewChains { needed: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
