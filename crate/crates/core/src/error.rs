use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at layer {layer} ({kind}): expected {expected}, found {found}")]
    ShapeMismatch {
        layer: usize,
        kind: &'static str,
        expected: String,
        found: String,
    },

    #[error("tensor shape {shape:?} does not match payload length {len}")]
    BadTensor { shape: Vec<usize>, len: usize },

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("{}: {msg} (offset {offset})", file.display())]
    Format {
        file: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("sparsity {0} outside [0, 1)")]
    BadSparsity(f64),

    #[error("quantization: {0}")]
    Quantization(String),

    #[error("value {value} in `{name}` overflows binary16")]
    HalfOverflow { name: String, value: f32 },

    #[error("archive: {0}")]
    Archive(String),

    #[error("sizes must be positive (baseline {baseline}, model {model})")]
    BadSize { baseline: u64, model: u64 },

    #[error("report: {0}")]
    Report(String),

    #[error("unknown architecture `{0}`")]
    UnknownArch(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
