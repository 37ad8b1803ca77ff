use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid interval [{lower}, {upper}]")]
    InvalidInterval { lower: f64, upper: f64 },

    #[error("NaN encountered in {0}")]
    NotANumber(&'static str),

    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("backward requires a scalar root, got shape {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },

    #[error("variable does not belong to this tape (node {node}, tape has {len} nodes)")]
    UnknownVariable { node: usize, len: usize },

    #[error("network has per-task heads but no head id was given")]
    MissingHead,

    #[error("head {head} does not exist ({count} heads)")]
    UnknownHead { head: usize, count: usize },

    #[error("invalid architecture: {0}")]
    Architecture(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("data format error: {0}")]
    Format(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite value during training: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
