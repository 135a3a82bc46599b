use thiserror::Error;

use crate::point::Point;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot construct problem: {0}")]
    Construction(String),

    #[error("order p = {0} needs derivative oracles the operator does not provide")]
    UnsupportedOrder(usize),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("shifted linear system is singular at r = {r:e}")]
    SingularSystem { r: f64 },

    #[error("secular bracket [{lo:e}, {hi:e}] does not change sign (phi = {phi_lo:e}, {phi_hi:e}); operator is not monotone")]
    InfeasibleBracket {
        lo: f64,
        hi: f64,
        phi_lo: f64,
        phi_hi: f64,
    },

    #[error("no convergence after {iterations} iterations (best residual {best_residual:e})")]
    NoConvergence {
        iterations: usize,
        best_residual: f64,
        best: Box<Point>,
    },

    #[error("internal inconsistency: {0}")]
    Inconsistent(String),

    #[error("iteration {index}: {source}")]
    AtIteration {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(self, index: usize) -> Self {
        Error::AtIteration {
            index,
            source: Box::new(self),
        }
    }
}
