use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("reference index {index} outside [1, {max}]")]
    ReferenceIndex { index: usize, max: usize },

    #[error("expected {expected} {what}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("chain needs at least 3 atoms, found {0}")]
    ChainTooShort(usize),

    #[error("atoms {index} and {next} are {distance} apart, expected {delta} (relative tolerance {tolerance:e})", next = .index + 1)]
    NotAChain {
        index: usize,
        distance: f64,
        delta: f64,
        tolerance: f64,
    },

    #[error("frame is not a rotation: {0}")]
    NotARotation(String),

    #[error("vertex {0} is isolated (zero degree)")]
    IsolatedVertex(usize),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("invalid {name}: {reason}")]
    Invalid { name: &'static str, reason: String },

    #[error("{path}: parse error at {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
