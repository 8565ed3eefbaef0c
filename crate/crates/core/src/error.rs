use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("zero-norm vector{}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    ZeroNorm { row: Option<usize> },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing visual token for modality {0}")]
    MissingToken(String),

    #[error("unknown modality code {0:?}")]
    UnknownModality(String),

    #[error("all source weights are zero")]
    ZeroWeights,

    #[error("source {source_id:?} has {available} examples but a sub-batch needs {needed}")]
    SourceTooSmall {
        source_id: String,
        available: usize,
        needed: usize,
    },

    #[error("query {query} has an empty negative set")]
    EmptyNegatives { query: usize },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("encoder has no adapter to merge")]
    NoAdapter,

    #[error("id {0:?} not found")]
    UnknownId(String),

    #[error("task {0:?} is not assigned to any category")]
    OrphanTask(String),

    #[error("bad magic bytes {0:?}, expected \"UEMB\"")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("unknown dtype code {0}")]
    UnknownDtype(u16),

    #[error("truncated file: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("invalid UTF-8 in id table at row {0}")]
    InvalidId(usize),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {cause}")]
    Io {
        path: PathBuf,
        cause: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
