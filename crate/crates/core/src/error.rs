use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report. Each variant maps onto a stable
/// category name used in `error:<Category>: message` lines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt file {}: {reason}", path.display())]
    CorruptFile { path: PathBuf, reason: String },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend failure: {0}")]
    BackendFailure(String),
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("layer mismatch: {0}")]
    LayerMismatch(String),
    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),
    #[error("malformed config: {0}")]
    MalformedConfig(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
}

impl Error {
    /// Machine-parsable category, identical to the variant name.
    pub fn category(&self) -> &'static str {
        match self {
            Error::FileNotFound(_) => "FileNotFound",
            Error::UnsupportedFormat(_) => "UnsupportedFormat",
            Error::CorruptFile { .. } => "CorruptFile",
            Error::Io { .. } => "IoError",
            Error::InvalidDimensions(_) => "InvalidDimensions",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NonFinite(_) => "NonFinite",
            Error::OutOfRange(_) => "OutOfRange",
            Error::BackendUnavailable(_) => "BackendUnavailable",
            Error::BackendFailure(_) => "BackendFailure",
            Error::UnknownLayer(_) => "UnknownLayer",
            Error::LayerMismatch(_) => "LayerMismatch",
            Error::ChannelMismatch(_) => "ChannelMismatch",
            Error::MalformedConfig(_) => "MalformedConfig",
            Error::UnknownKey(_) => "UnknownKey",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Like [`Error::io`], but a missing file becomes `FileNotFound`.
    pub(crate) fn read(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path)
        } else {
            Error::Io { path, source }
        }
    }
}
