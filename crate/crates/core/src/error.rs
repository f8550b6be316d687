use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Object lies outside the radar's unambiguous range/velocity region.
    #[error("aliasing: {0}")]
    Aliasing(String),

    #[error("no object detected in the identification frame")]
    NoObject,

    #[error("track lost after {coasted} coasted frames")]
    TrackLost { coasted: usize },

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("malformed data: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 = configuration, 2 = I/O, 3 = numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) | Error::IndexOutOfRange { .. } => 1,
            Error::Io { .. } | Error::Format(_) => 2,
            Error::Shape(_)
            | Error::Degenerate(_)
            | Error::Aliasing(_)
            | Error::NoObject
            | Error::TrackLost { .. }
            | Error::Diverged { .. } => 3,
        }
    }
}
