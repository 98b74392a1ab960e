use std::io;
use std::path::PathBuf;

use adamatte_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("state error: {0}")]
    State(String),
    #[error("i/o error on {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed header in {}: {msg}", path.display())]
    MalformedHeader { path: PathBuf, msg: String },
    #[error("index gap in {}: expected {expected}", dir.display())]
    IndexGap { dir: PathBuf, expected: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("shape mismatch for parameter `{name}`: checkpoint {found:?}, model {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("non-finite loss at stage {stage} step {step}: {detail}")]
    NonFiniteLoss {
        stage: u8,
        step: usize,
        detail: String,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable short identifier, used for machine-readable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Tensor(TensorError::Dimension { .. }) | Error::Dimension(_) => {
                "dimension-mismatch"
            }
            Error::Tensor(TensorError::NonFinite { .. }) => "non-finite",
            Error::Tensor(_) | Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::State(_) => "state",
            Error::Io { .. } => "io",
            Error::MalformedHeader { .. } => "malformed-header",
            Error::IndexGap { .. } => "index-gap",
            Error::Checkpoint(_) => "checkpoint",
            Error::ParamShape { .. } => "checkpoint-shape",
            Error::NonFiniteLoss { .. } => "non-finite-loss",
            Error::Json(_) => "json",
        }
    }
}
