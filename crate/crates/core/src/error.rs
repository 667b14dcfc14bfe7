use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
///
/// Each variant maps onto one CLI exit code, see [`Error::kind`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported format: {0}")]
    Format(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("empty waveform")]
    EmptyWaveform,

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("capacity exceeded: {requested} levels requested, cap is {cap}")]
    Capacity { requested: u64, cap: u64 },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse error classification, stable across releases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Format,
    Input,
    Config,
    Capacity,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Format(_) | Error::Parse { .. } => ErrorKind::Format,
            Error::Range(_) | Error::EmptyWaveform | Error::Estimation(_) | Error::Input(_) => {
                ErrorKind::Input
            }
            Error::Config(_) => ErrorKind::Config,
            Error::Capacity { .. } => ErrorKind::Capacity,
            Error::Context { source, .. } => source.kind(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
