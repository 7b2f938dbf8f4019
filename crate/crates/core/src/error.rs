//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error(
        "linear solver did not converge: {iterations} iterations, relative residual {residual:.3e}"
    )]
    LinearSolve { iterations: usize, residual: f64 },

    #[error("linear system is not positive definite (negative curvature at iteration {iteration})")]
    IndefiniteSystem { iteration: usize },

    #[error(
        "Newton iteration diverged after {iterations} iterations (residual history {history:?})"
    )]
    NewtonDiverged {
        iterations: usize,
        history: Vec<f64>,
    },

    #[error(
        "eigenvalue iteration hit its cap: best estimate {best_estimate:.6e}, residual {residual:.3e}"
    )]
    EigenIterationCap { best_estimate: f64, residual: f64 },

    #[error("time step {step} failed: {cause}")]
    StepFailed { step: usize, cause: Box<Error> },

    #[error("time grids do not match: {0}")]
    TimeGridMismatch(String),

    #[error("meshes are incompatible: {0}")]
    MeshMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
