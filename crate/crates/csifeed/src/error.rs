use std::io;
use std::path::{Path, PathBuf};

use csifeed_core::Error as CoreError;

/// Everything a command can fail with, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("invalid arguments: {0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Core(CoreError),
}

impl CliError {
    pub fn data(path: &Path, message: impl Into<String>) -> Self {
        CliError::Data {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 configuration, 3 data, 4 numeric failure, 5 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Data { .. } => 3,
            CliError::Numeric(_) => 4,
            CliError::Io { .. } => 5,
            CliError::Core(e) => match e {
                CoreError::InvalidConfig(_) | CoreError::InvalidCount => 2,
                CoreError::DimensionMismatch { .. } | CoreError::ZeroReference | CoreError::ValueOutOfRange { .. } => 3,
                CoreError::NonFinite(_)
                | CoreError::InvalidScale(_)
                | CoreError::GeometryInvalid { .. }
                | CoreError::TapeMismatch => 4,
            },
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;
