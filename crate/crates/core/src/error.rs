use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("invalid weight {value} at sample {index}: weights must lie in [0, 1]")]
    InvalidWeight { index: usize, value: f64 },

    #[error("model is finalized; reopen it before applying further updates")]
    FrozenModel,

    #[error("model has not been finalized")]
    NotFinalized,

    #[error("model holds no classes")]
    EmptyModel,

    #[error("degenerate covariance scale: total weight {total_weight} must exceed 1")]
    DegenerateScale { total_weight: f64 },

    #[error("covariance is not positive definite after adding ridge {ridge}")]
    SingularCovariance { ridge: f64 },

    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    #[error("invalid probability vector: {0}")]
    InvalidProbability(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("config error on line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl fmt::Display, actual: impl fmt::Display) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidParameter(message.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::Protocol(_) | Error::Config { .. } => 1,
            Error::Format { .. } | Error::Io(_) | Error::Shape { .. } => 2,
            _ => 3,
        }
    }
}
