use std::path::{Path, PathBuf};

use ctpnet_core::Error as CoreError;

pub type Result<T, E = AppError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },

    #[error("jpeg: {0}")]
    Jpeg(String),

    #[error("{path}:{line}: {message}")]
    Manifest { path: PathBuf, line: usize, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{failed} of {total} gradient checks failed")]
    GradientCheck { failed: usize, total: usize },
}

/// Coarse failure class, used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FailureClass {
    Config,
    Data,
    Numerical,
}

impl FailureClass {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureClass::Config => 1,
            FailureClass::Data => 2,
            FailureClass::Numerical => 3,
        }
    }
}

impl AppError {
    pub fn class(&self) -> FailureClass {
        match self {
            AppError::Config(_) | AppError::Core(CoreError::Config(_)) => FailureClass::Config,
            AppError::Core(CoreError::NonFinite { .. } | CoreError::Diverged { .. }) | AppError::GradientCheck { .. } => {
                FailureClass::Numerical
            }
            _ => FailureClass::Data,
        }
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> AppError + '_ {
        move |source| AppError::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn image(path: &Path) -> impl FnOnce(image::ImageError) -> AppError + '_ {
        move |source| AppError::Image { path: path.to_path_buf(), source }
    }
}
