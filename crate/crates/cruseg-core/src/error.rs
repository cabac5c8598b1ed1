use std::path::{Path, PathBuf};

/// Unified error type for the whole engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tensor operation was given incompatible shapes. `detail` names the
    /// offending dimension.
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A configuration field failed validation.
    #[error("invalid {field}: {reason}")]
    Config { field: &'static str, reason: String },

    /// A manifest record could not be parsed. Line numbers are 1-based and
    /// include the header.
    #[error("{}:{line}: {reason}", path.display())]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    /// An image or weights file had valid I/O but malformed contents.
    #[error("{}: {reason}", path.display())]
    FileFormat { path: PathBuf, reason: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Training produced a NaN or infinite loss and stopped.
    #[error("training aborted: non-finite loss at epoch {epoch}, sample {sample_id}")]
    NonFiniteLoss { epoch: usize, sample_id: String },

    /// A precondition that is not a shape or config issue was violated.
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config {
            field,
            reason: reason.into(),
        }
    }

    pub fn file_format(path: impl AsRef<Path>, reason: impl Into<String>) -> Self {
        Error::FileFormat {
            path: path.as_ref().to_path_buf(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn invalid(reason: impl Into<String>) -> Self {
        Error::Invalid(reason.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
