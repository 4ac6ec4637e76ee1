use std::path::PathBuf;

/// Errors produced anywhere in the codec, training or rendering pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("value out of range at index {index}: {detail}")]
    Range { index: usize, detail: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("stream truncated inside the {0} chunk")]
    Truncated(String),
    #[error("checksum mismatch in the {0} chunk")]
    Checksum(String),
    #[error("model incompatible with stream: {0}")]
    Incompatible(String),
    #[error("level unavailable: {0}")]
    LevelUnavailable(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
