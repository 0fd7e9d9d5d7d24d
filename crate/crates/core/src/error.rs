use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification of an [`Error`], used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Divergence,
    Io,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Divergence => 4,
            ErrorKind::Io => 5,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("manifest schema error: column `{column}` {problem}")]
    Schema { column: String, problem: String },

    #[error("duplicate manifest key {0}")]
    Duplicate(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("sizing error: {0}")]
    Sizing(String),

    #[error("expected 3 channels, got {0}")]
    Channels(usize),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Divergence { epoch: usize, message: String },

    #[error("preprocessing fingerprint mismatch: model expects {expected}, input has {found}")]
    Fingerprint { expected: String, found: String },

    #[error("unknown image keys in predictions: {0:?}")]
    Join(Vec<String>),

    #[error("pretrained weights unavailable: {0}")]
    PretrainedUnavailable(String),

    #[error("impossible synthetic spec: {0}")]
    Spec(String),

    #[error("{stage} failed in run {run}: {source}")]
    Stage {
        run: usize,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_)
            | Error::Sizing(_)
            | Error::PretrainedUnavailable(_)
            | Error::Spec(_) => ErrorKind::Config,
            Error::Divergence { .. } => ErrorKind::Divergence,
            Error::Io { .. } | Error::Image { .. } => ErrorKind::Io,
            Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn in_stage(self, run: usize, stage: &'static str) -> Self {
        Error::Stage {
            run,
            stage,
            source: Box::new(self),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
