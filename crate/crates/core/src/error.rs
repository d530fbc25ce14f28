use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate normalization stats: min {min} >= max {max}")]
    DegenerateStats { min: f64, max: f64 },

    #[error("instance too short: {len} samples, need at least {min}")]
    InstanceTooShort { len: usize, min: usize },

    #[error("training set must contain both classes")]
    SingleClass,

    #[error("checkpoint is {found}, expected {expected}")]
    ArchitectureMismatch { expected: String, found: String },

    #[error("checkpoint condition {checkpoint} does not match dataset condition {dataset}")]
    ConditionMismatch { checkpoint: String, dataset: String },

    #[error("evaluating on the {0} split leaks training data; pass allow_leakage to override")]
    LeakageGuard(String),

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },

    #[error("unsupported format version {found} in {path} (supported: {supported})")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        supported: u32,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::CorruptFile {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
