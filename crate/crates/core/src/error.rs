use thiserror::Error;

/// Errors raised by the numerical and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),
    /// A result or requested size would exceed a supported range.
    #[error("range error: {0}")]
    Range(String),
    /// A chain or law specification is malformed or lacks a required capability.
    #[error("spec error: {0}")]
    Spec(String),
    /// Reading or writing an external representation failed.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn range(msg: impl Into<String>) -> Error {
    Error::Range(msg.into())
}

pub(crate) fn spec(msg: impl Into<String>) -> Error {
    Error::Spec(msg.into())
}
