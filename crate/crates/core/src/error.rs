use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid LFSR spec: {0}")]
    InvalidSpec(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("sync word not found: correlation peak {peak:.3} below threshold {threshold:.3}")]
    SyncNotFound { peak: f64, threshold: f64 },

    #[error("stream too short: need {needed} samples, have {available}")]
    TooShort { needed: usize, available: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("need at least {needed} '{bit}' bits, found {found}")]
    InsufficientBits { bit: u8, needed: usize, found: usize },

    #[error("level {level}: captures hold {available} complete windows, {needed} required")]
    InsufficientCapture { level: u8, needed: usize, available: usize },

    #[error("feature dimension mismatch: model expects {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("parse error at {position}: {message}")]
    Parse { position: String, message: String },

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }

    pub(crate) fn parse(position: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            position: position.into(),
            message: message.into(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input parameters or data, as opposed to
    /// failures of the underlying file system.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::File { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
