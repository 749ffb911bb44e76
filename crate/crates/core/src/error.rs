use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the contour estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parameter {t} outside the valid domain [{lo}, {hi}]")]
    Domain { t: f64, lo: f64, hi: f64 },

    #[error("no edge pixels found")]
    NoEdges,

    #[error("ambiguous topology: {0}")]
    AmbiguousTopology(String),

    #[error("underdetermined system: {observations} observations for {unknowns} unknowns")]
    Underdetermined {
        observations: usize,
        unknowns: usize,
    },

    #[error("singular least-squares system")]
    SingularSystem,

    #[error("sample is not a local maximum ({g_minus}, {g_0}, {g_plus})")]
    NotAMaximum { g_minus: f64, g_0: f64, g_plus: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed image: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
