use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: row {row} has no unmasked entries")]
    DegenerateRow { op: &'static str, row: usize },

    #[error("index {index} out of range for {what} (size {size})")]
    Index { what: &'static str, index: usize, size: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },

    #[error("no usable embedding lines in {}", .0.display())]
    EmptyEmbeddings(PathBuf),

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("corrupt checkpoint at byte offset {offset}: {message}")]
    Corrupt { offset: usize, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn dims(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// Whether the failure comes from bad input data or files rather than from
    /// usage or numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Parse { .. } | Error::EmptyEmbeddings(_) | Error::Incompatible(_) | Error::Corrupt { .. }
        )
    }

    pub fn is_numeric_failure(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
