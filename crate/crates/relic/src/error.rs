use thiserror::Error;

/// Error type shared across the codec pipeline.
///
/// Variants map one-to-one onto the CLI exit codes, so every failure mode
/// stays distinguishable from the outside.
#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates a precondition (bad symbol, negative distance, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Internal consistency violated (broken permutation, bad offsets, count
    /// mismatch between bitstream and geometry).
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Model / sensor configuration does not match what the data requires.
    #[error("configuration error: {0}")]
    Config(String),

    /// Compressed payload ended before all symbols were decoded.
    #[error("truncation error: {0}")]
    Truncation(String),

    /// Non-finite value produced during model evaluation or training.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// File contents do not parse as the expected format.
    #[error("format error: {0}")]
    Format(String),

    /// Training diverged; the message names the last usable checkpoint.
    #[error("training error: {0}")]
    Training(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
    pub fn integrity(msg: impl Into<String>) -> Self {
        Error::Integrity(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn truncation(msg: impl Into<String>) -> Self {
        Error::Truncation(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
    pub fn training(msg: impl Into<String>) -> Self {
        Error::Training(msg.into())
    }

    /// Stable process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) => 2,
            Error::Integrity(_) => 3,
            Error::Config(_) => 4,
            Error::Truncation(_) => 5,
            Error::Numeric(_) => 6,
            Error::Format(_) => 7,
            Error::Training(_) => 8,
            Error::Io(_) => 9,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
