//! Error type shared by every module in the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// A caller violated an operation precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Text input (CSV trace, config) failed to parse. `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A binary container (volume, shard, checkpoint) is inconsistent.
    #[error("corrupt file {path}: {msg}")]
    CorruptFile { path: String, msg: String },

    /// Numerically degenerate input (e.g. constant volume for normalize).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Training hit a non-finite loss; parameters were rolled back.
    #[error("training aborted at epoch {epoch}: {msg}")]
    TrainAborted { epoch: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn corrupt(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::CorruptFile {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
