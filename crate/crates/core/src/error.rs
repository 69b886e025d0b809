use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A hyperparameter or configuration value is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates its contract (class index out of range, missing file, ...).
    #[error("data error: {0}")]
    Data(String),

    /// An API was called in a state where it cannot proceed.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("training diverged: non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, loss: f64 },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}, expected \"ARTS\"")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after the last entry")]
    TrailingBytes(usize),
    #[error("duplicate entry name {0:?}")]
    DuplicateName(String),
    #[error("entry name is not valid UTF-8")]
    BadName,
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("entry {name:?}: {detail}")]
    Entry { name: String, detail: String },
    #[error("missing entry {0:?}")]
    Missing(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
