use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    /// Input shapes disagree (vector lengths, matrix dimensions, tree arity).
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An input violates a documented precondition or invariant.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A configured compute or memory budget would be exceeded.
    #[error("resource budget exceeded: {0}")]
    Resource(String),

    /// A numeric operation failed (non-finite values, failed decomposition).
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

/// Checks that every entry of a slice is finite.
pub(crate) fn ensure_finite(name: &str, xs: &[f64]) -> Result<()> {
    if let Some((i, v)) = xs.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::invalid(format!("{name}[{i}] is not finite: {v}")));
    }
    Ok(())
}
