use thiserror::Error;

/// Errors raised by the estimators, solvers and file formats in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("partial order contains a cycle through node {0}")]
    Cyclic(usize),

    #[error("constraint system is infeasible")]
    Infeasible,

    #[error("objective is unbounded below: no nonnegative combination of the auxiliary rows cancels the linear term")]
    Unbounded,

    #[error("solver did not converge within {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("finite-difference probe kept crossing active-set boundaries after {0} retries")]
    UnstableActiveSet(usize),

    #[error("solver failed at grid point {index} (lambda = {lambda}): {source}")]
    GridPoint {
        index: usize,
        lambda: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
