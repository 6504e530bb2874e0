//! Error type shared across the crate.

/// Errors raised by the operator library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or layer widths do not line up; the message carries both shapes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A request asks for more elements than the input can supply.
    #[error("capacity error: {0}")]
    Capacity(String),

    /// An index or label refers outside its valid range.
    #[error("index error: {0}")]
    Index(String),

    /// A configuration value violates a structural invariant.
    #[error("configuration error: {0}")]
    Config(String),

    /// A file does not match its declared format.
    #[error("format error: {0}")]
    Format(String),

    /// Training produced a non-finite value.
    #[error("training error: {0}")]
    Training(String),

    /// A verification check did not meet its tolerance.
    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
