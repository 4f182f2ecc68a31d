use std::path::PathBuf;

use crate::tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("layer {layer}: {message}")]
    Layer { layer: usize, message: String },

    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },

    #[error("training diverged at step {step}: {loss} loss is {value}")]
    Divergence {
        step: usize,
        loss: &'static str,
        value: f64,
    },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("undefined ratio at point {index}: both densities vanish")]
    UndefinedRatio { index: usize },

    #[error("{path}: {message} at byte offset {offset}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("{path}: row {row}, column {column}: {message}")]
    Csv {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("scorer `{scorer}` was trained on split {expected}, evaluated on {actual}")]
    FingerprintMismatch {
        scorer: String,
        expected: String,
        actual: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
