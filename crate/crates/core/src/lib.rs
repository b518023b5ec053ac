//! Adaptive moving-mesh generation by non-iterative stochastic domain
//! decomposition.
//!
//! A linear parabolic mesh generator is coupled to a time-dependent physical
//! PDE and advanced by an alternating procedure: the mesh density is frozen
//! at the current solution, the mesh is moved one step, then the physical PDE
//! is integrated on the moving mesh. Subdomain interface values of the mesh
//! equation are computed point-wise from the stochastic representation of its
//! solution (Monte-Carlo over drift-diffusion walkers, with a Brownian-bridge
//! exit test on Dirichlet domains), after which every subdomain is solved
//! independently with deterministic finite differences. No interface
//! iteration is required, and runs are bit-reproducible for a fixed seed
//! under any thread count.

pub mod density;
pub mod driver;
pub mod error;
pub mod grid;
pub mod meshpde;
pub mod physics;
pub mod quality;
mod stencil;
pub mod stochastic;

pub use density::{build_arclength_density, AlphaMode, DensityConfig, DensityField};
pub use driver::{
    run_reference, run_sdd, Problem, SimulationConfig, StepRecord, DEFAULT_SEED,
};
pub use error::{Error, Result};
pub use grid::{ComputationalGrid, Decomposition, IndexBox, PhysicalDomain, PhysicalMesh, Side};
pub use meshpde::{BoundaryData, StepLimits};
pub use physics::{burgers_exact, PhysField, PhysState};
pub use quality::{cell_quality, linf_error, quality_ratio, QualityReport};
pub use stochastic::{McConfig, PointEstimate, RandomStream, WalkerState};
