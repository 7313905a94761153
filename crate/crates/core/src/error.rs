use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("autodiff error: {0}")]
    Autodiff(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("validation error in sample `{sample}`, field `{field}`: {message}")]
    Validation { sample: String, field: String, message: String },
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("non-finite {term} loss at epoch {epoch}, step {step}")]
    NonFinite { term: &'static str, epoch: usize, step: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
}

impl Error {
    /// Stable machine-readable code used by the command-line tool.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape(_) => "E_SHAPE",
            Error::Autodiff(_) => "E_AUTODIFF",
            Error::Config(_) => "E_CONFIG",
            Error::Validation { .. } => "E_VALIDATION",
            Error::Format { .. } => "E_FORMAT",
            Error::Io { .. } => "E_IO",
            Error::Undefined(_) => "E_UNDEFINED",
            Error::NonFinite { .. } => "E_NONFINITE",
            Error::Invalid(_) => "E_INVALID",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
