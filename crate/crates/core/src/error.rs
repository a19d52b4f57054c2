use thiserror::Error;

/// Errors raised by grid, operator and solver routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: String, right: String },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("field has {got} entries, grid expects {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value at node {index}")]
    NonFinite { index: usize },

    #[error("ellipticity violated: diffusion coefficient {value:e} at node {node}")]
    NotElliptic { node: usize, value: f64 },

    #[error("reaction coefficient negative ({value:e}) at node {node}")]
    NegativeReaction { node: usize, value: f64 },

    #[error("operator is not an M-matrix: {0}")]
    NotMMatrix(String),

    #[error("zero pivot at row {row} in banded factorization")]
    SingularPivot { row: usize },

    #[error("linear solve did not reach tolerance: residual {residual:e} > {target:e}")]
    LinearSolve { residual: f64, target: f64 },

    #[error("eigenvalue iteration did not converge after {iterations} iterations")]
    EigenNonConvergence { iterations: usize },

    #[error(
        "Newton stagnated at delta = {delta:e} after {iterations} iterations \
         (residual {residual:e}); retry with a larger delta as warm start"
    )]
    NewtonStagnation {
        delta: f64,
        iterations: usize,
        residual: f64,
    },

    #[error("fixed-point iteration diverged at iteration {iteration} (|phi| = {norm:e})")]
    Divergence { iteration: usize, norm: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
