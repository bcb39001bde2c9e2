//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value does not fit the declared bit width / signedness.
    #[error("value {value} not representable in {bits}-bit {signedness}")]
    OutOfRange {
        value: i64,
        bits: u8,
        signedness: &'static str,
    },

    /// Bad argument to an operation (index out of range, dimension
    /// mismatch, empty input, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Operand / result dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Inconsistent or missing configuration (model parameters, file
    /// versions, missing error model, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Calibration could not be performed (empty traces, tuning failed).
    #[error("calibration error: {0}")]
    Calibration(String),

    /// The allocation problem has no feasible assignment.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Accumulator or result width exceeded.
    #[error("numeric overflow: {0}")]
    Overflow(String),

    /// Malformed container / trace / manifest contents.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
