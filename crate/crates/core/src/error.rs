//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DpqrError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("the Gaussian mechanism requires delta > 0")]
    GaussianNeedsDelta,

    #[error("degenerate kernel weight: zero weight with density_floor = 0")]
    DegenerateWeight,

    #[error("shard sizes must be equal: {n} samples cannot be split into {m} machines")]
    UnevenPartition { n: usize, m: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("column {column} of the constrained l1 solve is infeasible at slack {gamma}")]
    InfeasibleColumn { column: usize, gamma: f64 },

    #[error("linear program is unbounded")]
    UnboundedProgram,

    #[error("estimation aborted: {0}")]
    EstimationAborted(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed file: {0}")]
    MalformedFile(String),
}

pub type Result<T> = std::result::Result<T, DpqrError>;
