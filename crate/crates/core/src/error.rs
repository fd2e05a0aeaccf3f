use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid distribution: {field}: {reason}")]
    InvalidDistribution { field: String, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite state in sample {sample} at t = {time}")]
    BlowUp { sample: usize, time: f64 },

    #[error("state left the admissible domain in sample {sample} at t = {time}")]
    DomainViolation { sample: usize, time: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("line search failed at iteration {iteration}: step {step:e} below 1e-14")]
    LineSearchFailure { iteration: usize, step: f64 },

    #[error("second derivatives of {field} unavailable and finite-difference fallback disabled")]
    HessianUnavailable { field: String },

    #[error("singular formula degenerate at node {node}: denominator {denominator:e}")]
    DegenerateSingularFormula { node: usize, denominator: f64 },

    #[error("singular system degenerate at node {node}: condition estimate {condition:e}")]
    DegenerateSingularSystem { node: usize, condition: f64 },

    #[error("commutativity violated: |[f_{i},f_{j}]| = {norm:e} at node {node}")]
    CommutativityViolation {
        i: usize,
        j: usize,
        node: usize,
        norm: f64,
    },

    #[error("unknown problem '{0}'")]
    UnknownProblem(String),

    #[error("override {name} = {value} out of admissible range: {reason}")]
    InvalidOverride {
        name: String,
        value: f64,
        reason: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context: context.to_string(),
            expected,
            actual,
        })
    }
}
