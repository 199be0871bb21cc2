use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] flocknet_core::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    /// A verification command found errors above tolerance.
    #[error("check failed: {0}")]
    CheckFailed(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    /// Process exit code: 1 for validation/IO problems, 2 for failed checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::CheckFailed(_) => 2,
            _ => 1,
        }
    }
}
