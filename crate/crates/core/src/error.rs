use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every stage of the personalization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid attribute: {0}")]
    InvalidAttribute(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown token {token:?} in prompt {prompt:?}")]
    Tokenization { token: String, prompt: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("non-finite loss at step {step} (lr {lr})")]
    NonFiniteLoss { step: usize, lr: f64 },
    #[error("format error: {0}")]
    Format(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("tensor {0} contains non-finite values")]
    NonFinite(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("transport error after {retries} retries: {message}")]
    Transport { retries: u32, message: String },
    #[error("empty set: {0}")]
    EmptySet(String),
    #[error("shortfall: {0}")]
    Shortfall(String),
    #[error("requires stage: {0}")]
    Stage(String),
    #[error("run is locked by a running service: {0}")]
    Locked(PathBuf),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("png error: {0}")]
    Png(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
