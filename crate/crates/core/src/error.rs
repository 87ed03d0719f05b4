use crate::tensor::Shape4;
use thiserror::Error;

/// Errors raised by tensor ops, sparsifiers, planners and the training engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SwatError {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape4,
        right: Shape4,
    },
    #[error("invalid length in {op}: expected {expected}, got {actual}")]
    LengthMismatch {
        op: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("sparsity {0} outside [0, 1]")]
    InvalidSparsity(f64),
    #[error("threshold {0} is negative")]
    NegativeThreshold(f64),
    #[error("k = {k} out of range 1..={len}")]
    KOutOfRange { k: usize, len: usize },
    #[error("target class {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("reference vector has zero norm")]
    ZeroNorm,
    #[error("scope {scope} cannot be applied here: {reason}")]
    InvalidScope { scope: &'static str, reason: String },
    #[error("sparsity plan infeasible: {0}")]
    InfeasiblePlan(String),
    #[error("no plan entry for layer {0}")]
    MissingPlanEntry(usize),
    #[error("lifecycle violation: {0}")]
    Lifecycle(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = SwatError> = std::result::Result<T, E>;
