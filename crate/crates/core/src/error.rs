use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CvfError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CvfError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("process time {0} outside [0, 1]")]
    TimeOutOfRange(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic, not a CVF container")]
    BadMagic { path: PathBuf },

    #[error("{path}: unsupported container version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("{path}: truncated container ({detail})")]
    Truncated { path: PathBuf, detail: String },

    #[error("{path}: malformed container ({detail})")]
    Malformed { path: PathBuf, detail: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("dataset exhausted: {0}")]
    DatasetExhausted(String),
}

impl CvfError {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        CvfError::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CvfError::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(CvfError::DimensionMismatch { expected, got })
    }
}
