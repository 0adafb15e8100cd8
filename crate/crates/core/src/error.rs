use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("example {id}: rationale span [{start}, {end}) out of bounds for {len} tokens")]
    SpanOutOfBounds {
        id: String,
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("split {0} is empty after filtering")]
    EmptySplit(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("unknown aspect {aspect:?} for domain {domain}")]
    UnknownAspect { aspect: String, domain: String },

    #[error("embedding for token {token:?} has {found} values, expected {expected}")]
    EmbeddingDimension {
        token: String,
        expected: usize,
        found: usize,
    },

    #[error("{what}: expected length {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("token {0:?} is not in the vocabulary")]
    UnknownToken(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("pretraining accuracy never exceeded {threshold} within {epochs} epochs (best {best:.4})")]
    ThresholdUnreachable {
        threshold: f64,
        epochs: usize,
        best: f64,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
