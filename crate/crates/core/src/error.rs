use std::path::PathBuf;

/// Errors raised by fitting, ingestion and simulation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("covariance is not positive definite ({context})")]
    SingularCovariance { context: String },

    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    Validation(String),

    #[error("component {component} collapsed (effective size {mass:.3e} below {threshold:.3e})")]
    EmptyComponent {
        component: usize,
        mass: f64,
        threshold: f64,
    },

    #[error("row {row} has zero density under every component")]
    DegenerateRow { row: usize },

    #[error("all {} starts failed: {}", .diagnostics.len(), .diagnostics.join("; "))]
    FitFailure { diagnostics: Vec<String> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document: {0}")]
    Document(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the input data rather than by usage.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Validation(_) | Error::Document(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
