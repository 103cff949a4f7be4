use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("{what} contains a non-finite value at node {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("coefficient {coefficient} violates admissibility bounds [{lower}, {upper}] (observed min {min}, max {max})")]
    Admissibility {
        coefficient: &'static str,
        lower: f64,
        upper: f64,
        min: f64,
        max: f64,
    },

    #[error("reference field has zero norm")]
    ZeroReference,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sparse factorization failed: {0}")]
    Factorization(String),

    #[error("residual {residual:e} exceeds tolerance {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },

    #[error("boundary data norm {norm:e} exceeds the small-data cap {cap:e}")]
    DataTooLarge { norm: f64, cap: f64 },

    #[error("fixed-point iteration diverged after {} iterations: {reason}", history.len())]
    Diverged {
        reason: &'static str,
        history: Vec<f64>,
    },

    #[error("data condition violated: {0}")]
    Condition(String),

    #[error("transport problem has an empty inflow boundary")]
    DegenerateInflow,

    #[error("every node is masked")]
    AllMasked,

    #[error("gradient self-check failed: relative error {rel_error:e} exceeds {tolerance:e}")]
    GradientCheck { rel_error: f64, tolerance: f64 },
}
