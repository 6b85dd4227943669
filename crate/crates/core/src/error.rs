use std::path::PathBuf;

use crate::ingest::ParseReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("too many malformed lines: {}", .0.summary())]
    TooManyMalformed(Box<ParseReport>),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("cannot split {blocks} distinct blocks into {splits} groups")]
    TooManySplits { splits: usize, blocks: usize },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("backward called before any forward computation")]
    BackwardBeforeForward,

    #[error("empty positive pair set")]
    EmptyPositives,

    #[error("empty overlap set")]
    EmptyOverlap,

    #[error("no phishing accounts present in split {0}")]
    NoPositiveLabels(usize),

    #[error("training set contains a single class")]
    SingleClass,

    #[error("protocol needs at least {needed} splits, got {got}")]
    InsufficientSplits { needed: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("infeasible synthetic configuration: {0}")]
    InfeasibleSynth(String),

    #[error("motif violation: {0}")]
    MotifViolation(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

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
