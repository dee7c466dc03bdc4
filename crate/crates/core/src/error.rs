use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("log of non-positive value {value} at index {index}")]
    LogDomain { index: usize, value: crate::Real },

    #[error("projected embedding row {row} has zero norm (collapsed representation)")]
    CollapsedEmbedding { row: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("backward called on a tensor that is not connected to any trainable leaf")]
    Detached,

    #[error("function under gradient check is not deterministic")]
    NonDeterministic,

    #[error("probe training set contains a single class")]
    SingleClass,

    #[error("evaluation index set is empty")]
    EmptyEvaluationSet,

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        dump: Box<serde_json::Value>,
    },

    #[error("io error on {path}: {source}")]
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

    /// True for failures that come from numerical breakdown rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::Diverged { .. }
                | Error::CollapsedEmbedding { .. }
                | Error::LogDomain { .. }
        )
    }
}
