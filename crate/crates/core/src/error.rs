use std::path::{Path, PathBuf};

use cvcp_numerics::NumericsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },

    #[error("{0}")]
    Geometry(String),

    #[error("incompatible checkpoint: {0}")]
    Mismatch(String),

    #[error("{0}")]
    Usage(String),

    #[error("check failed: {0}")]
    Check(String),
}

impl Error {
    /// Short machine-readable label printed by the CLI.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Numerics(NumericsError::Config { .. }) | Error::Config(_) => "config",
            Error::Numerics(NumericsError::ShapeMismatch { .. }) => "shape",
            Error::Numerics(NumericsError::NonFinite { .. }) => "numeric",
            Error::Numerics(NumericsError::Usage(_)) | Error::Usage(_) => "usage",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Geometry(_) => "geometry",
            Error::Mismatch(_) => "mismatch",
            Error::Check(_) => "check",
        }
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn parse(file: impl AsRef<Path>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { file: file.as_ref().display().to_string(), line, msg: msg.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
