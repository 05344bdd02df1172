//! Error type shared across the engine.

use thiserror::Error;

/// Errors produced by the simulation engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or parameter shapes do not line up.
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    /// An argument failed a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A value that must be a probability distribution is not one.
    #[error("not a distribution: {0}")]
    NotADistribution(String),

    /// A NaN or infinity escaped a numeric operation.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// AUC is undefined because the labels contain a single class.
    #[error("AUC undefined: labels contain only one class")]
    UndefinedAuc,

    /// File or serialization problem.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// A persisted artifact could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
