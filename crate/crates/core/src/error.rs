use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Error kinds shared by every module.
///
/// The variants line up with the CLI exit-code contract, see
/// [`Error::kind`].
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its invariant.
    #[error("config error: {0}")]
    Config(String),
    /// User-supplied input is unusable (empty prompt, shape mismatch, duplicates, ...).
    #[error("input error: {0}")]
    Input(String),
    /// Weights or adapters could not be resolved.
    #[error("load error: {0}")]
    Load(String),
    /// The model backend (or scorer) failed while running.
    #[error("backend error: {0}")]
    Backend(String),
    /// Analysis inputs are inconsistent (missing seed partner, unknown anchor, ...).
    #[error("data error: {0}")]
    Data(String),
    /// Numerically undefined operation (zero norm, constant series).
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A persisted document violates its schema.
    #[error("validation error: {0}")]
    Validation(String),
    /// External text-generation service failure.
    #[error("service error: {0}")]
    Service(String),
    /// A service response could not be parsed; the raw payload is attached.
    #[error("parse error: {message}")]
    Parse { message: String, raw: String },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Input,
    Load,
    Backend,
    Data,
    Numeric,
    Validation,
    Service,
    Parse,
    Io,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Config => "config",
            ErrorKind::Input => "input",
            ErrorKind::Load => "load",
            ErrorKind::Backend => "backend",
            ErrorKind::Data => "data",
            ErrorKind::Numeric => "numeric",
            ErrorKind::Validation => "validation",
            ErrorKind::Service => "service",
            ErrorKind::Parse => "parse",
            ErrorKind::Io => "io",
        }
    }
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Input(_) => ErrorKind::Input,
            Error::Load(_) => ErrorKind::Load,
            Error::Backend(_) => ErrorKind::Backend,
            Error::Data(_) => ErrorKind::Data,
            Error::Numeric(_) => ErrorKind::Numeric,
            Error::Validation(_) | Error::Json(_) => ErrorKind::Validation,
            Error::Service(_) => ErrorKind::Service,
            Error::Parse { .. } => ErrorKind::Parse,
            Error::Io { .. } => ErrorKind::Io,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
