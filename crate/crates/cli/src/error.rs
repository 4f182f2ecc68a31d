use ndgan_core::Error as CoreError;

/// Failure of a command, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration, flags or input files (exit 2).
    #[error("validation error: {0}")]
    Validation(String),
    /// Failure while running, including training divergence (exit 3).
    #[error("runtime error: {0}")]
    Runtime(String),
    /// An oracle check exceeded its tolerance (exit 4).
    #[error("tolerance exceeded: {0}")]
    Tolerance(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Tolerance(_) => 4,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    pub fn write(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Runtime(format!("cannot write {}: {e}", path.display()))
    }

    pub fn missing(path: &std::path::Path) -> Self {
        CliError::Validation(format!("{} does not exist", path.display()))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidArgument(_)
            | CoreError::LabelOutOfRange { .. }
            | CoreError::InsufficientData(_)
            | CoreError::Format { .. }
            | CoreError::Csv { .. }
            | CoreError::Schema { .. }
            | CoreError::ModelFormat(_)
            | CoreError::FingerprintMismatch { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ndgan_core::TensorError> for CliError {
    fn from(e: ndgan_core::TensorError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
