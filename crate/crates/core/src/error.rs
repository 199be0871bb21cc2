use thiserror::Error;

/// Errors surfaced by graph, controller, environment and training operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dims(
        context: &'static str,
        expected: impl Into<String>,
        actual: impl Into<String>,
    ) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}
