use num_complex::Complex64;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid ensemble spec: {0}")]
    InvalidSpec(String),

    #[error("index {index} out of range for dimension {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("singular linear solve: {0}")]
    SingularSolve(String),

    #[error("self-consistent cubic has {count} roots with positive imaginary part at w={w}, z={z}; roots {roots:?}")]
    DegenerateRoots {
        w: Complex64,
        z: Complex64,
        count: usize,
        roots: [Complex64; 3],
    },

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("interlacing bound violated: |m_S - m_R| = {observed} > {bound}")]
    InterlacingViolation { observed: f64, bound: f64 },

    #[error("operation requires real matrix entries ({0})")]
    RealEntriesRequired(&'static str),

    #[error("insufficient trials: need at least {needed}, got {got}")]
    InsufficientTrials { needed: usize, got: usize },

    #[error("{failed} of {total} quadrature nodes failed (limit {limit})")]
    NodeFailures {
        failed: usize,
        total: usize,
        limit: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing table: {0}")]
    MissingTable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
