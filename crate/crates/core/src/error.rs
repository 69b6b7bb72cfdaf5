//! Crate-wide error type.

/// Failure classes surfaced by the library.
///
/// `InvalidInput` covers caller mistakes (bad shapes, bad arguments, malformed
/// files), `InvalidState` covers misuse of an otherwise fine object (e.g.
/// backward on a detached tensor), `Numeric` covers non-finite values detected
/// at runtime, and `AlignmentInfeasible` flags targets that no CTC alignment
/// can produce.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("alignment infeasible: {0}")]
    AlignmentInfeasible(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn invalid_state(msg: impl Into<String>) -> Self {
        Error::InvalidState(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
