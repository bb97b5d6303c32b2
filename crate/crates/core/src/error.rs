use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty profile")]
    EmptyProfile,

    #[error("negative EC: {0}")]
    NegativeEc(f64),

    #[error("quantile level {0} outside the open interval (0, 1)")]
    InvalidTau(f64),

    #[error("empty record set")]
    EmptyRecords,

    #[error("invalid quantile grid: {0}")]
    InvalidGrid(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("customer {0} has zero EC and cannot be fitted")]
    ZeroEnergy(String),

    #[error("malformed row {row}: {message}")]
    MalformedRow { row: u64, message: String },

    #[error("duplicate reading for customer {customer} at {timestamp}")]
    DuplicateTimestamp { customer: String, timestamp: String },

    #[error("solver did not converge after {iterations} iterations (relative gap {gap:.3e}, primal residual {primal_residual:.3e}, dual residual {dual_residual:.3e})")]
    NonConvergence {
        iterations: usize,
        gap: f64,
        primal_residual: f64,
        dual_residual: f64,
    },

    #[error("internal solver error: {0}")]
    Internal(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("zero optimal loss: the reference fit interpolates every record")]
    ZeroOptimalLoss,

    #[error("band {name} is empty")]
    EmptyBand { name: String },

    #[error("band [{lo}, {hi}] is empty after filtering {prefilter} samples")]
    EmptyFilteredBand { lo: f64, hi: f64, prefilter: usize },

    #[error("fold count {k} is invalid for {n} records")]
    FoldCount { k: usize, n: usize },

    #[error("aggregation level {level} exceeds population size {population}")]
    AggregationLevel { level: usize, population: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
