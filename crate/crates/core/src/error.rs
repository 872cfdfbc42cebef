use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("bad magic")]
    BadMagic,

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(usize),

    #[error("unsupported tensor rank {0}")]
    Rank(u8),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("unsupported bit depth {0}")]
    UnsupportedBitDepth(u8),

    #[error("unsupported color type {0}")]
    UnsupportedColorType(String),

    #[error("png: {0}")]
    Png(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("no edit region located")]
    NoEditRegion,

    #[error("best Region-IoU {score} is below the minimum {min}")]
    LowRegionIou { score: f64, min: f64 },

    #[error("unknown layer {0:?}")]
    UnknownLayer(String),

    #[error("duplicate layer {0:?}")]
    DuplicateLayer(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tags an error with the pipeline stage that raised it.
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}
