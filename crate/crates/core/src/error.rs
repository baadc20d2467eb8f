use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// A triplet or request referenced an item or worker that is not known.
    #[error("reference error: {0}")]
    Reference(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("checkpoint error in {field}: {message}")]
    Checkpoint { field: String, message: String },

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("sampling error: {0}")]
    Sampling(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn checkpoint(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Checkpoint {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable category, used by the command-line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::Numeric(_) => "numeric",
            Error::Reference(_) => "reference",
            Error::Argument(_) => "argument",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Parse { .. } => "parse",
            Error::Sampling(_) => "sampling",
            Error::Diverged { .. } => "diverged",
            Error::Io { .. } => "io",
            Error::Image(_) => "image",
        }
    }
}
