use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GcnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GcnError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad IDX magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },

    #[error("{path}: truncated file, expected {expected} bytes, found {found}")]
    Truncated { path: PathBuf, expected: u64, found: u64 },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("malformed record: {0}")]
    Format(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("verification failed: {0}")]
    Verification(String),
}

impl GcnError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GcnError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            GcnError::Config(_) | GcnError::Shape(_) => 2,
            GcnError::Verification(_) => 3,
            GcnError::Io { .. }
            | GcnError::BadMagic { .. }
            | GcnError::Truncated { .. }
            | GcnError::CountMismatch { .. }
            | GcnError::Format(_)
            | GcnError::EmptyDataset => 4,
        }
    }
}
