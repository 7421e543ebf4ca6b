use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// The CLI maps these to exit codes through [`DartError::exit_code`]:
/// user and configuration problems exit with 2, numeric failures with 3.
#[derive(Debug, Error)]
pub enum DartError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, found {found} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("replication {replication}: {source}")]
    Replication {
        replication: usize,
        #[source]
        source: Box<DartError>,
    },

    #[error("{path}: {message}")]
    Input { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = DartError> = std::result::Result<T, E>;

impl DartError {
    pub fn exit_code(&self) -> i32 {
        match self {
            DartError::Numeric(_) => 3,
            DartError::Replication { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
