use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Every failure the toolkit reports. Variant names mirror the error kinds
/// exposed through the CLI and bindings.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid UTF-8 at byte offset {offset}")]
    Ingest { offset: usize },

    #[error("malformed record at line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("document has no words")]
    EmptyDocument,

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("resource error: {0}")]
    Resource(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("signature mismatch: {0}")]
    SignatureMismatch(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("training error: {0}")]
    Train(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("document {0:?} has no pages")]
    NotPaginated(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Stable name of the error kind, for reporting across process and
    /// language boundaries.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Ingest { .. } => "IngestError",
            Error::Record { .. } => "RecordError",
            Error::EmptyDocument => "EmptyDocument",
            Error::EmptyCorpus => "EmptyCorpus",
            Error::Resource(_) => "ResourceError",
            Error::Config(_) => "ConfigError",
            Error::Calibration(_) => "CalibrationError",
            Error::SignatureMismatch(_) => "SignatureMismatch",
            Error::Consistency(_) => "ConsistencyError",
            Error::Train(_) => "TrainError",
            Error::Decode(_) => "DecodeError",
            Error::NotPaginated(_) => "NotPaginated",
            Error::Format(_) => "FormatError",
            Error::Path { .. } | Error::Io(_) => "IoError",
            Error::Stage { source, .. } => source.kind(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait PathContext<T> {
    fn at_path(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> PathContext<T> for io::Result<T> {
    fn at_path(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Path {
            path: path.into(),
            source,
        })
    }
}
