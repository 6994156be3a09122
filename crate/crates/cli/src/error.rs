use air_core::Error as CoreError;

/// Failure of a command, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Dimension(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Dimension(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    pub fn internal(e: impl std::fmt::Display) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Shape { .. } | CoreError::IndexOutOfRange { .. } => CliError::Dimension(msg),
            CoreError::Npy { .. }
            | CoreError::Io(_)
            | CoreError::Empty(_)
            | CoreError::Domain(_) => CliError::Input(msg),
            CoreError::Parameter(_) | CoreError::Unsupported(_) => CliError::Usage(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
