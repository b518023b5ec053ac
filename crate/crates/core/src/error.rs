//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by grid construction, interpolation, the stochastic point
/// solver, the deterministic mesh/physics steppers and the run driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid too small: {nx}x{ny} (need at least 3 nodes per direction)")]
    GridTooSmall { nx: usize, ny: usize },

    #[error("invalid decomposition: {reason}")]
    InvalidDecomposition { reason: String },

    #[error("point ({0}, {1}) outside the computational domain")]
    OutOfDomain(f64, f64),

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("tangled mesh at t = {time}: non-positive cell Jacobian at cell ({i}, {j})")]
    TangledMesh { time: f64, i: usize, j: usize },

    #[error("stability sub-step count {required} exceeds cap {cap}")]
    SubstepCapExceeded { required: usize, cap: usize },

    #[error("nonlinear iteration did not converge: residual {residual:.3e} after {iters} iterations")]
    NonConvergence { residual: f64, iters: usize },

    #[error("boundary data missing for a non-periodic stochastic solve")]
    MissingBoundaryData,

    #[error("grid mismatch between meshes")]
    GridMismatch,

    #[error("non-positive water depth {value:.3e} at node ({i}, {j})")]
    NonPositiveDepth { value: f64, i: usize, j: usize },

    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
