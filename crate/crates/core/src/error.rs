use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive semidefinite (factorization failed at pivot {pivot})")]
    NotPositiveSemidefinite { pivot: usize },

    #[error("invalid correlation matrix: {0}")]
    InvalidMatrix(String),

    #[error("input too large: {0}")]
    TooLarge(String),

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("domain error: {0}")]
    Domain(String),

    /// Zero sample variance in the named column (0-based index).
    #[error("degenerate column {column}{}: zero sample variance", .name.as_ref().map(|n| format!(" ({n})")).unwrap_or_default())]
    DegenerateColumn { column: usize, name: Option<String> },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("target signal unachievable: {0}")]
    Unachievable(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
