use thiserror::Error;

/// Errors raised by the estimation, simulation and pricing routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on the inputs was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The inputs are valid but the computation has no meaningful answer
    /// (zero variance, empty conditioning set, singular scatter, ...).
    #[error("degenerate: {0}")]
    Degenerate(String),

    /// A numerical routine failed to find a solution.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed input data: {0}")]
    Format(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn degenerate(msg: impl Into<String>) -> Error {
    Error::Degenerate(msg.into())
}
