use std::path::{Path, PathBuf};

/// Errors of the file, configuration and command layer.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] imbalance_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, message: impl ToString) -> Self {
        AppError::Format { path: path.to_path_buf(), message: message.to_string() }
    }

    /// 2 for configuration and validation errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) | AppError::Core(imbalance_core::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}
