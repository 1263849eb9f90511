use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator and the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient sampling: {reason}; {guidance}")]
    Sampling { reason: String, guidance: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("coherence width unresolved: {0}")]
    Unresolved(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("truncation too coarse: {0}")]
    Truncation(String),

    #[error("corrupt frame stack {path}: {reason}")]
    CorruptStack { path: PathBuf, reason: String },

    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
