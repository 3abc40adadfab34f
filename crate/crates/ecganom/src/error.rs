//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or sequence dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input file or byte stream.
    #[error("parse error: {0}")]
    Parse(String),

    /// A caller-side contract was violated (preconditions, scalar loss, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// A value is outside its representable range.
    #[error("range error: {0}")]
    Range(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
