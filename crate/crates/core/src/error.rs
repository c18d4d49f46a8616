//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error(
        "enumeration over d = {d} bits requires 2^{d} = {cost} state evaluations, \
         above the oracle cap of d = {cap}; raise the cap explicitly if that cost is acceptable"
    )]
    OracleCapExceeded { d: usize, cap: usize, cost: u128 },

    #[error("non-finite value at index {index} in {context}")]
    NonFinite { context: &'static str, index: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(
        "solver diverged at iteration {iteration}: sup-norm {sup_norm:.3} exceeded bound {bound}; \
         the target moments may be infeasible or the step schedule too aggressive"
    )]
    Diverged {
        iteration: usize,
        sup_norm: f64,
        bound: f64,
        /// Partial trace up to and including the diverging iteration.
        trace: Box<crate::solver::SolverTrace>,
    },

    #[error("chain diverged at step {iteration}: sup-norm {sup_norm:.3} exceeded bound {bound}")]
    ChainDiverged {
        iteration: usize,
        sup_norm: f64,
        bound: f64,
        /// Samples accumulated before divergence.
        samples: Box<Vec<crate::sgld::WeightedSample>>,
    },

    #[error("observation file: {0}")]
    ObservationFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("output parse: {0}")]
    OutputFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;
