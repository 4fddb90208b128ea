use std::path::PathBuf;

/// Errors produced by the engine.
///
/// The variants split into contract violations (bad input, conflicts, missing
/// ids, numeric failures) and I/O or parse failures; [`Error::is_io`] tells the
/// two apart for the CLI exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("mesh is not watertight: {inconsistent} of {total} rays had odd crossing parity")]
    NonWatertight { inconsistent: usize, total: usize },

    #[error("world construction failed: {0}")]
    Construction(String),

    #[error("invalid comparison: {0}")]
    InvalidComparison(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// True for I/O and parse failures, false for contract violations.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Parse { .. } | Error::Json(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
