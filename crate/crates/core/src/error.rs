use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid kernel spec: {0}")]
    InvalidSpec(String),

    #[error("kernel dimension {requested} exceeds the configured limit {limit}")]
    SizeLimit { requested: usize, limit: usize },

    #[error("matrix is not symmetric: max asymmetry {asymmetry:e} exceeds tolerance {tolerance:e}")]
    Symmetry { asymmetry: f64, tolerance: f64 },

    #[error("matrix is not positive semidefinite: smallest eigenvalue {min_eigenvalue:e}")]
    NotPsd { min_eigenvalue: f64 },

    #[error("cannot draw {requested} distinct entries from a grid of {capacity}")]
    Capacity { requested: usize, capacity: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no training data")]
    NoData,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index ({row}, {col}) out of bounds for a {n_rows}x{n_cols} grid")]
    IndexOutOfBounds {
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    },

    #[error("regularization must be positive, got {0}")]
    SingularityRisk(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::NotPsd { .. } | Error::SingularityRisk(_) => 3,
            Error::Config { .. } | Error::InvalidParameter(_) | Error::Precondition(_) => 1,
            _ => 2,
        }
    }
}
