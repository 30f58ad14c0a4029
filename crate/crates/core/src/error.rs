use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate pose: {0}")]
    DegeneratePose(String),

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("invalid motion: {0}")]
    InvalidMotion(String),

    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("empty sequence")]
    EmptySequence,

    #[error("query is empty after tokenization")]
    EmptyQuery,

    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    UnknownToken { id: u32, vocab_size: usize },

    #[error("degenerate embedding: {side} row {row} has norm {norm:e}")]
    DegenerateEmbedding {
        side: &'static str,
        row: usize,
        norm: f64,
    },

    #[error("batch item ({text}, {motion}): {source}")]
    BatchItem {
        text: usize,
        motion: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("duplicate gallery id `{0}`")]
    DuplicateId(String),

    #[error("gallery is empty")]
    EmptyGallery,

    #[error("query {0} has no relevant item")]
    NoRelevantItem(String),

    #[error("codebook does not match index: {0}")]
    CodebookMismatch(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    /// True for errors caused by bad input data rather than bugs or I/O.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
