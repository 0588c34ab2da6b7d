use thiserror::Error;

use crate::data::DataError;
use crate::protocol::message::DecodeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("value {value} out of range {range}")]
    Range { value: f64, range: &'static str },

    #[error("non-finite value at coordinate {coordinate}: {detail}")]
    Numeric { coordinate: usize, detail: String },

    #[error("solver failed after {iterations} iterations (residual {residual:e}): {detail}")]
    Solver {
        iterations: usize,
        residual: f64,
        detail: String,
    },

    #[error("data: {0}")]
    Data(#[from] DataError),

    #[error("decode: {0}")]
    Decode(#[from] DecodeError),

    #[error("protocol: {0}")]
    Protocol(String),

    #[error("round {round} aborted: {reason}")]
    RoundAbort { round: u32, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors raised while validating a configuration, before any
    /// computation started.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
