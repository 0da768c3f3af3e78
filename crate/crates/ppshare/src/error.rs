use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by how the CLI maps them to exit codes:
/// everything except `Invariant` is a usage/config/input problem (exit 2),
/// `Invariant` is a broken runtime guarantee (exit 3).
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// File does not look like the expected format (bad magic, bad version).
    #[error("format error: {0}")]
    Format(String),

    /// File matches the format but its payload is inconsistent or truncated.
    #[error("corrupt data: {0}")]
    Corruption(String),

    /// Invalid argument, configuration value, or input data.
    #[error("validation error: {0}")]
    Validation(String),

    /// A guarantee the library maintains internally was observed broken.
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// A requested construction has no solution under the given parameters.
    #[error("infeasible: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn corruption(msg: impl Into<String>) -> Self {
        Error::Corruption(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }

    pub fn infeasible(msg: impl Into<String>) -> Self {
        Error::Infeasible(msg.into())
    }
}
