use thiserror::Error;

/// Errors raised by the reconstruction library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid exposure code: {0}")]
    InvalidCode(String),
    #[error("invalid sampling plan: {0}")]
    InvalidPlan(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
