//! Crate-wide error type.

/// Errors produced by design construction, solvers, and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input: at least one observation is required")]
    EmptyInput,

    #[error("feature length mismatch at observation {index}: expected {expected}, got {got}")]
    FeatureLengthMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },

    #[error("non-binary response {value} at observation {index}: y must be exactly 0 or 1")]
    NonBinaryResponse { index: usize, value: f64 },

    #[error("variance component must be positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("weight at observation {index} must be positive, got {value}")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("fitted mean at observation {0} is at the boundary; consider a weight floor")]
    MeanAtBoundary(usize),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("{context}: iteration limit {limit} reached")]
    IterationLimit { context: &'static str, limit: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("size guard exceeded: {0}")]
    SizeGuard(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
