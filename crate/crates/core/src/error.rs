use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument violates a documented precondition or invariant.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two models cannot be run through a monotone coupling.
    #[error("non-admissible model pair: {0}")]
    NonAdmissible(String),

    /// Unreachable state inside the engine (bookkeeping drift, count overflow).
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
