use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the imputation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error at row {row}, column `{column}`: cannot read `{value}` as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("schema violation at row {row}, column `{column}`: categorical value {value} is not 0 or 1")]
    SchemaViolation { row: usize, column: String, value: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("complete subset is empty: every row has at least one missing cell")]
    EmptySubset,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("model output is missing cell ({row}, {col}) where the mask requires a value")]
    IncompleteOutput { row: usize, col: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("column `{0}` has no observed training values")]
    NoObservedValues(String),

    #[error("gradient cache is stale: network parameters changed since the forward pass")]
    StaleCache,

    #[error("unknown imputation method `{0}`")]
    UnknownMethod(String),

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with a description of what was being attempted.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
