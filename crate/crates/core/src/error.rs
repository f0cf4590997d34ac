use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library.
///
/// The variants are grouped so that callers (the CLI in particular) can map
/// them onto stable exit codes: bad arguments, bad data, and answerer
/// transport failures are kept apart.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record failed to parse or violated a data invariant.
    #[error("{0}")]
    Validation(String),

    /// A persisted artifact (index, weights) has the wrong version or shape.
    #[error("{0}")]
    Format(String),

    /// A caller-supplied argument is out of range.
    #[error("{0}")]
    InvalidArgument(String),

    /// The answerer could not be reached or returned garbage.
    #[error("transport error: {0}")]
    Transport(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Process exit status for this error: 1 usage, 2 data validation, 3 transport.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 1,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 1,
            Error::Io { .. } | Error::Validation(_) | Error::Format(_) => 2,
            Error::Transport(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
