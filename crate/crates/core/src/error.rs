use std::path::PathBuf;

/// Errors raised anywhere in the planning pipeline.
///
/// The variants map onto the CLI exit-code classes: configuration and
/// domain problems (2), infeasibility (3), numerical failure (4) and
/// exhausted search limits (5).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid scenario: {}", .0.join("; "))]
    Invariant(Vec<String>),

    #[error("coefficient fit failed: {0}")]
    Fit(String),

    #[error("model is infeasible: {0}")]
    Infeasible(String),

    #[error("model is unbounded: {0}")]
    Unbounded(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("search limit reached without an incumbent: {0}")]
    Limit(String),

    #[error("failed to parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Infeasible(_) | Error::Unbounded(_) => 3,
            Error::Numeric(_) => 4,
            Error::Limit(_) => 5,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
