use std::path::PathBuf;

use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("rain model constraint violated: {0}")]
    Constraint(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("non-finite loss {loss} at iteration {iteration}; last good checkpoint written to {}", checkpoint.display())]
    NonFiniteLoss {
        iteration: usize,
        loss: f64,
        checkpoint: PathBuf,
    },
    #[error("check failed: {0}")]
    CheckFailed(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code, distinct per error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::CheckFailed(_) => 1,
            Error::Config(_) => 2,
            Error::Io { .. } => 3,
            Error::Format { .. } | Error::Image { .. } => 4,
            Error::Constraint(_) => 5,
            Error::NonFiniteLoss { .. } => 6,
            Error::Tensor(_) => 7,
        }
    }
}
