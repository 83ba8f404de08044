use std::io;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] hpotts_core::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error(transparent)]
    Stream(#[from] io::Error),

    #[error("not a grid tensor file")]
    NotGridTensor,

    #[error("malformed grid tensor header: {0}")]
    Header(String),

    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },

    #[error("expected {expected} tensor, found {found}")]
    WrongKind { expected: &'static str, found: &'static str },

    #[error("malformed JSON document: {0}")]
    Json(String),

    /// Invalid experiment configuration; `pointer` locates the offending value.
    #[error("invalid config at {pointer}: {message}")]
    Config { pointer: String, message: String },

    #[error("{stage}: {source}")]
    Stage { stage: &'static str, source: hpotts_core::Error },

    #[error("phantom generation failed: {0}")]
    Phantom(String),

    #[error("{method}, repetition {repetition}: {source}")]
    Experiment { method: String, repetition: usize, source: Box<Error> },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn config(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { pointer: pointer.into(), message: message.into() }
    }
}
