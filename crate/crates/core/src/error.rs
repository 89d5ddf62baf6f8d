use std::path::PathBuf;

use mvkd_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported model kind {0:?}")]
    UnsupportedModel(String),
    #[error("checkpoint format error: {0}")]
    FormatError(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("label {label} out of range for {num_classes} classes")]
    InvalidLabel { label: usize, num_classes: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("cannot decode {path}: {reason}")]
    DecodeError { path: PathBuf, reason: String },
    #[error("stratification error: {0}")]
    StratificationError(String),
    #[error("invalid Grad-CAM target: {0}")]
    InvalidTarget(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
