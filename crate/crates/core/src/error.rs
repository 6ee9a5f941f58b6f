use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("truncated payload: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },

    #[error("length mismatch: dims imply {expected} values, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid dims {0:?}")]
    InvalidDims(Vec<usize>),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("layer {0} is not quantizable")]
    NotQuantizable(String),

    #[error("invalid quantization scheme: {0}")]
    InvalidScheme(String),

    #[error("scaling factor must be positive and finite, got {0}")]
    InvalidAlpha(f64),

    #[error("value {0} is not a level of this level set")]
    UnknownLevel(f64),

    #[error("code {code:#b} is not valid for a {bits}-bit scheme")]
    InvalidCode { code: u32, bits: u32 },

    #[error("invalid scheme ratio: {0}")]
    InvalidRatio(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("accuracy undefined on an empty dataset")]
    EmptyDataset,

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("model is not finalized: {0}")]
    Unfinalized(String),

    #[error("accumulator may overflow: worst case needs {bits} bits")]
    AccumulatorOverflow { bits: u32 },

    #[error("infeasible plan: {0}")]
    Infeasible(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 validation, 3 numeric failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Csv(_) => 4,
            Error::Divergence { .. } | Error::NonFinite { .. } | Error::AccumulatorOverflow { .. } => 3,
            _ => 2,
        }
    }
}
