//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed JSON or a JSON document that does not match the expected
    /// schema. `path` points at the offending field when known.
    #[error("schema error at `{path}`: {detail}")]
    Schema { path: String, detail: String },

    /// A tensor file with a bad magic, version, dtype code, or payload size.
    #[error("tensor format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    /// A domain-type invariant does not hold. The message names the invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid depth {0}: back-projection requires depth > 0")]
    InvalidDepth(f64),

    #[error("point is behind the camera (camera-frame depth {0})")]
    BehindCamera(f64),

    #[error("ill-conditioned camera: {0}")]
    IllConditionedCamera(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A contrastive batch that cannot produce a loss at all (no candidates).
    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    /// Skip signal: the sample has no positive objects, so the contrastive
    /// loss is undefined for it. Training drops such samples.
    #[error("sample has no positive objects; skip it")]
    EmptyPositives,

    #[error("cannot derive grid bounds from an empty scene")]
    EmptyScene,

    #[error("referenced object id {0} does not exist in the scene")]
    DanglingReference(u32),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wrap an [`std::io::Error`] with the path it occurred on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
