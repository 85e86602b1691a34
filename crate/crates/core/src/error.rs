use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Tensor(#[from] rccm_autograd::Error),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dataset directory {0} contains no samples")]
    EmptyDataset(PathBuf),

    #[error("no manifest.csv in {0}")]
    MissingManifest(PathBuf),

    #[error("manifest references missing file {0}")]
    MissingFile(PathBuf),

    #[error("corrupt image file {path}: {reason}")]
    CorruptImage { path: PathBuf, reason: String },

    #[error("manifest does not match files: {0}")]
    ManifestMismatch(String),

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("non-finite values: {0}")]
    NonFinite(String),

    #[error("non-finite loss at epoch {epoch}, batch samples {batch_ids:?}")]
    NonFiniteLoss { epoch: usize, batch_ids: Vec<String> },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
