use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {value} is outside [{lo}, {hi}]")]
    Range {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("{0} is not finite")]
    NonFinite(&'static str),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("encoder kind {0} requires auxiliary parameters (anchors or Fourier features)")]
    MissingAux(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index {index} out of bounds for length {len}")]
    Index { index: usize, len: usize },
    #[error("non-finite gradient in {0}")]
    NanGrad(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("line {line}: {source}")]
    AtLine {
        line: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("join error: {0}")]
    Join(String),
    #[error("too few points: need at least {need}, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("zero variance: all values are equal")]
    ZeroVariance,
    #[error("no low-performance observations")]
    NoLowPerf,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
