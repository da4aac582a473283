use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("numeric overflow: non-finite value produced by {op}")]
    NumericOverflow { op: &'static str },

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("tag index {index} out of range for {n_tags} tags")]
    InvalidTag { index: usize, n_tags: usize },

    #[error("label {label} out of range for {n_classes} classes")]
    InvalidLabel { label: usize, n_classes: usize },

    #[error("structural error: {0}")]
    Structural(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("checkpoint checksum mismatch (file is corrupted or truncated)")]
    Checksum,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unknown task id `{0}`")]
    UnknownTask(String),

    #[error("duplicate task id `{0}`")]
    DuplicateTask(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
