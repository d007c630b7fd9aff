//! Grid/particle (FLIP) fluid solver: MAC grids, semi-Lagrangian transport,
//! level sets, ghost-fluid pressure projection and the reference time step.

pub mod advect;
pub mod error;
pub mod forces;
pub mod grid;
pub mod hydrostatic;
pub mod levelset;
pub mod particles;
pub mod pressure;
pub mod solver;

pub use error::{FluidError, Result};
pub use grid::{CellFlags, CellType, GridDims, MacGrid, ScalarGrid};
pub use hydrostatic::{hydrostatic_split, recombine};
pub use particles::ParticleSet;
pub use pressure::{boundary_alignment, divergence, solve_pressure, subtract_pressure_gradient, PressureSolve};
pub use solver::{
    finish_step, prepare_step, solve_prepared, step_reference, Inflow, PreparedStep, SceneKind, SimState,
    SolverConfig, StepReport, StepTimings,
};
