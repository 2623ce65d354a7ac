use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape for {op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("no supervision in clip")]
    NoSupervision,
    #[error("no boundary")]
    NoBoundary,
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("input not normalized to [0, 1]: found value {0}")]
    Unnormalized(f64),
    #[error("training diverged at epoch {epoch}; last good checkpoint kept")]
    Diverged { epoch: usize },
    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
