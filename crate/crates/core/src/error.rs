use std::path::PathBuf;

/// Errors produced anywhere in the chorus detection pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty waveform")]
    EmptyWaveform,

    #[error("audio too short: {samples} samples, need at least {needed}")]
    AudioTooShort { samples: usize, needed: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("annotation row {row}: {message}")]
    Annotation { row: usize, message: String },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("coverage gap at output index {0}")]
    CoverageGap(usize),

    #[error("AUC undefined: reference contains a single class")]
    AucUndefined,

    #[error("wrong model variant: {0}")]
    Variant(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("{0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
