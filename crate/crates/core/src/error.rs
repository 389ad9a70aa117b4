use std::fmt;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Position of a problem inside a file being parsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    /// 1-based line number (text headers and ASCII bodies).
    Line(usize),
    /// 0-based byte offset (binary payloads).
    Byte(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(n) => write!(f, "line {n}"),
            Location::Byte(n) => write!(f, "byte {n}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("no surface: {0}")]
    EmptyMesh(String),

    #[error("{format} parse error at {location}: {message}")]
    Parse {
        format: &'static str,
        location: Location,
        message: String,
    },

    #[error("{format} unsupported feature at {location}: {message}")]
    Unsupported {
        format: &'static str,
        location: Location,
        message: String,
    },

    #[error("{format} version mismatch: found {found}, expected {expected}")]
    Version {
        format: &'static str,
        found: String,
        expected: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Where in the input the error was detected, for format errors.
    pub fn location(&self) -> Option<Location> {
        match self {
            Error::Parse { location, .. } | Error::Unsupported { location, .. } => Some(*location),
            _ => None,
        }
    }
}
