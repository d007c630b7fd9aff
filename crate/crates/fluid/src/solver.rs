//! Solver configuration, simulation state and the reference time step.
//!
//! A step is split into [`prepare_step`] (transport, forces, divergence) and
//! [`finish_step`] (gradient subtraction, velocity extension, particle
//! update) so a caller can supply the pressure from elsewhere.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::advect::{advect_mac, advect_scalar};
use crate::error::{FluidError, Result};
use crate::forces::{apply_body_force, apply_buoyancy, enforce_wall_bcs, extrapolate_velocity, fluid_face_mask};
use crate::grid::{CellFlags, CellType, GridDims, MacGrid, ScalarGrid};
use crate::levelset::{band_limit, levelset_rebuild, redistance};
use crate::particles::{advect_particles, flip_update, particles_to_grid, ParticleSet};
use crate::pressure::{divergence, solve_pressure, subtract_pressure_gradient, ProjectionParams, PressureSolve};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub gravity: [f64; 3],
    pub cg_tolerance: f64,
    pub cg_max_iters: usize,
    pub narrow_band: usize,
    pub jacobi_align_iters: usize,
    /// Kept for completeness; must be zero.
    pub viscosity: f64,
    /// 1 is pure FLIP, 0 pure PIC.
    pub flip_blend: f64,
    pub density: f64,
    /// Smoke buoyancy per unit density; `None` means `0.1 |g|`.
    pub buoyancy: Option<f64>,
    /// Sub-cell jitter of seeded particles, fraction of the sub-cell size.
    pub particle_jitter: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            gravity: [0.0, -0.01, 0.0],
            cg_tolerance: 5e-5,
            cg_max_iters: 2000,
            narrow_band: 3,
            jacobi_align_iters: 3,
            viscosity: 0.0,
            flip_blend: 0.97,
            density: 1.0,
            buoyancy: None,
            particle_jitter: 0.5,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(FluidError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.cg_tolerance > 0.0) {
            return Err(FluidError::Config("cg_tolerance must be positive".into()));
        }
        if self.cg_max_iters == 0 {
            return Err(FluidError::Config("cg_max_iters must be at least 1".into()));
        }
        if self.viscosity != 0.0 {
            return Err(FluidError::Config("viscosity is not supported and must be 0".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_blend) {
            return Err(FluidError::Config("flip_blend must lie in [0, 1]".into()));
        }
        if !(self.density > 0.0) {
            return Err(FluidError::Config("density must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.particle_jitter) {
            return Err(FluidError::Config("particle_jitter must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn gravity_magnitude(&self) -> f64 {
        self.gravity.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn buoyancy_coefficient(&self) -> f64 {
        self.buoyancy.unwrap_or(0.1 * self.gravity_magnitude())
    }

    pub fn projection(&self) -> ProjectionParams {
        ProjectionParams {
            dt: self.dt,
            density: self.density,
            tolerance: self.cg_tolerance,
            max_iters: self.cg_max_iters,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SceneKind {
    Liquid,
    Smoke,
}

/// Smoke source: sets density and velocity inside a sphere every step.
#[derive(Debug, Clone, PartialEq)]
pub struct Inflow {
    pub center: [f64; 3],
    pub radius: f64,
    pub velocity: [f64; 3],
    pub density: f64,
}

impl Inflow {
    fn contains(&self, p: [f64; 3], dim: usize) -> bool {
        let d2: f64 = (0..dim).map(|a| (p[a] - self.center[a]).powi(2)).sum();
        d2 <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub kind: SceneKind,
    pub velocity: MacGrid,
    pub pressure: ScalarGrid,
    pub levelset: ScalarGrid,
    pub particles: ParticleSet,
    pub flags: CellFlags,
    pub density: ScalarGrid,
    pub inflows: Vec<Inflow>,
    pub step_index: u64,
}

impl SimState {
    /// Liquid at rest described by `phi` (negative inside); particles are
    /// seeded deterministically from `seed`.
    pub fn liquid(phi: &ScalarGrid, cfg: &SolverConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let dims = phi.dims;
        let levelset = redistance(phi, cfg.narrow_band);
        let flags = CellFlags::from_levelset(&levelset);
        if flags.fluid_count() == 0 {
            return Err(FluidError::InvalidState("initial level set contains no liquid".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let particles = ParticleSet::seed_from_levelset(&levelset, cfg.particle_jitter, &mut rng);
        Ok(Self {
            kind: SceneKind::Liquid,
            velocity: MacGrid::new(dims, phi.dx),
            pressure: ScalarGrid::new(dims, phi.dx),
            levelset,
            particles,
            flags,
            density: ScalarGrid::new(dims, phi.dx),
            inflows: Vec::new(),
            step_index: 0,
        })
    }

    /// Smoke domain at rest with the given sources.
    pub fn smoke(dims: GridDims, dx: f64, inflows: Vec<Inflow>, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let flags = CellFlags::walled(dims, CellType::Fluid);
        if flags.fluid_count() == 0 {
            return Err(FluidError::InvalidState("smoke domain has no interior cells".into()));
        }
        Ok(Self {
            kind: SceneKind::Smoke,
            velocity: MacGrid::new(dims, dx),
            pressure: ScalarGrid::new(dims, dx),
            levelset: ScalarGrid::filled(dims, dx, -band_limit(dx, cfg.narrow_band)),
            particles: ParticleSet::default(),
            flags,
            density: ScalarGrid::new(dims, dx),
            inflows,
            step_index: 0,
        })
    }

    pub fn dims(&self) -> GridDims {
        self.velocity.dims
    }

    pub fn dx(&self) -> f64 {
        self.velocity.dx
    }

    /// Level set used for ghost-fluid conditions (liquids only).
    pub fn free_surface(&self) -> Option<&ScalarGrid> {
        match self.kind {
            SceneKind::Liquid => Some(&self.levelset),
            SceneKind::Smoke => None,
        }
    }

    /// max |u| dt / dx.
    pub fn cfl(&self, dt: f64) -> f64 {
        self.velocity.max_speed() * dt / self.dx()
    }

    pub fn is_finite(&self) -> bool {
        self.velocity.is_finite() && self.pressure.is_finite() && self.levelset.is_finite() && self.density.is_finite()
    }
}

/// Wall-clock seconds spent in each phase of a step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepTimings {
    pub advection: f64,
    pub forces: f64,
    pub solve: f64,
    pub projection: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step_index: u64,
    pub cfl: f64,
    pub cg_iters: usize,
    pub residual: f64,
    pub converged: bool,
    /// Infinity norm of the divergence on FLUID cells after the step.
    pub max_divergence: f64,
    pub timings: StepTimings,
}

/// State after transport and forces, waiting for a pressure.
#[derive(Debug, Clone)]
pub struct PreparedStep {
    pub state: SimState,
    /// Grid velocity before forces, the FLIP reference.
    pub u_before: MacGrid,
    pub divergence: ScalarGrid,
    pub timings: StepTimings,
}

fn transport_liquid(state: &mut SimState, cfg: &SolverConfig) -> Result<MacGrid> {
    let u = &state.velocity;
    advect_particles(&mut state.particles, u, cfg.dt);
    let phi = advect_scalar(&state.levelset, u, cfg.dt)?;
    let advected = advect_mac(u, u, cfg.dt)?;
    state.levelset = levelset_rebuild(Some(&phi), &state.particles, u.dims, u.dx, cfg.narrow_band)?;
    state.flags = CellFlags::from_levelset(&state.levelset);
    Ok(advected)
}

fn transport_smoke(state: &mut SimState, cfg: &SolverConfig) -> Result<MacGrid> {
    let u = &state.velocity;
    state.density = advect_scalar(&state.density, u, cfg.dt)?;
    let advected = advect_mac(u, u, cfg.dt)?;
    Ok(advected)
}

fn apply_inflows(state: &mut SimState, u: &mut MacGrid) {
    let dims = state.dims();
    for inflow in &state.inflows {
        for idx in 0..dims.cell_count() {
            let c = dims.coords(idx);
            if state.flags.cells[idx] == CellType::Fluid && inflow.contains(state.density.cell_center(c), dims.dim) {
                state.density.data[idx] = state.density.data[idx].max(inflow.density);
            }
        }
        for axis in 0..dims.dim {
            for idx in 0..u.comps[axis].len() {
                let f = u.face_coords(axis, idx);
                if inflow.contains(u.face_position(axis, f), dims.dim) {
                    u.comps[axis][idx] = inflow.velocity[axis];
                }
            }
        }
    }
}

/// Transport, particle transfer, forces and wall conditions; computes the
/// divergence the pressure has to remove.
pub fn prepare_step(mut state: SimState, cfg: &SolverConfig) -> Result<PreparedStep> {
    let mut timings = StepTimings::default();
    let t0 = Instant::now();
    let mut u = match state.kind {
        SceneKind::Liquid => transport_liquid(&mut state, cfg)?,
        SceneKind::Smoke => transport_smoke(&mut state, cfg)?,
    };
    timings.advection = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    if state.kind == SceneKind::Liquid && !state.particles.is_empty() {
        let transfer = particles_to_grid(&state.particles, u.dims, u.dx);
        for axis in 0..u.dims.dim {
            for idx in 0..u.comps[axis].len() {
                if transfer.covered(axis, idx) {
                    u.comps[axis][idx] = transfer.velocity.comps[axis][idx];
                }
            }
        }
    }
    if state.kind == SceneKind::Smoke {
        apply_inflows(&mut state, &mut u);
    }
    let u_before = u.clone();
    let mut u = apply_body_force(&u, &state.flags, cfg.gravity, cfg.dt);
    if state.kind == SceneKind::Smoke {
        apply_buoyancy(&mut u, &state.flags, &state.density, cfg.buoyancy_coefficient(), cfg.dt);
    }
    enforce_wall_bcs(&mut u, &state.flags);
    let div = divergence(&u, &state.flags)?;
    state.velocity = u;
    timings.forces = t1.elapsed().as_secs_f64();
    Ok(PreparedStep { state, u_before, divergence: div, timings })
}

/// Solves for the pressure of a prepared step.
pub fn solve_prepared(prep: &PreparedStep, cfg: &SolverConfig) -> Result<PressureSolve> {
    solve_pressure(&prep.divergence, &prep.state.flags, prep.state.free_surface(), &cfg.projection())
}

/// Applies `pressure` to a prepared step and completes it.
pub fn finish_step(prep: PreparedStep, pressure: ScalarGrid, cfg: &SolverConfig) -> Result<(SimState, StepTimings)> {
    let PreparedStep { mut state, u_before, mut timings, .. } = prep;
    let t0 = Instant::now();
    let params = cfg.projection();
    let mut u = subtract_pressure_gradient(&state.velocity, &pressure, &state.flags, state.free_surface(), &params)?;
    enforce_wall_bcs(&mut u, &state.flags);
    if state.kind == SceneKind::Liquid {
        let valid = fluid_face_mask(&u, &state.flags);
        extrapolate_velocity(&mut u, &valid, cfg.narrow_band + 2);
        flip_update(&mut state.particles, &u_before, &u, cfg.flip_blend)?;
    }
    state.velocity = u;
    state.pressure = pressure;
    state.step_index += 1;
    timings.projection = t0.elapsed().as_secs_f64();
    Ok((state, timings))
}

/// Infinity norm of the divergence over FLUID cells.
pub fn max_divergence(state: &SimState) -> Result<f64> {
    Ok(divergence(&state.velocity, &state.flags)?.max_abs())
}

/// One full solver step.
pub fn step_reference(state: SimState, cfg: &SolverConfig) -> Result<(SimState, StepReport)> {
    let prep = prepare_step(state, cfg)?;
    let t0 = Instant::now();
    let solve = solve_prepared(&prep, cfg)?;
    let solve_time = t0.elapsed().as_secs_f64();
    let (state, mut timings) = finish_step(prep, solve.pressure, cfg)?;
    timings.solve = solve_time;
    let report = StepReport {
        step_index: state.step_index,
        cfl: state.cfl(cfg.dt),
        cg_iters: solve.iterations,
        residual: solve.residual,
        converged: solve.converged,
        max_divergence: max_divergence(&state)?,
        timings,
    };
    Ok((state, report))
}

/// Advances transport of the surface (or smoke density) with the current
/// velocity and installs `u_new` as the next velocity, skipping velocity
/// advection and the pressure solve.
pub fn advance_with_velocity(mut state: SimState, u_new: &MacGrid, cfg: &SolverConfig) -> Result<SimState> {
    state.velocity.same_shape(u_new)?;
    match state.kind {
        SceneKind::Liquid => {
            transport_liquid(&mut state, cfg)?;
        }
        SceneKind::Smoke => {
            transport_smoke(&mut state, cfg)?;
            let mut scratch = u_new.clone();
            apply_inflows(&mut state, &mut scratch);
        }
    }
    let mut u = u_new.clone();
    enforce_wall_bcs(&mut u, &state.flags);
    if state.kind == SceneKind::Liquid {
        let valid = fluid_face_mask(&u, &state.flags);
        extrapolate_velocity(&mut u, &valid, cfg.narrow_band + 2);
        for (p, v) in state.particles.positions.iter().zip(state.particles.velocities.iter_mut()) {
            *v = u.velocity_at(*p);
        }
    }
    state.velocity = u;
    state.step_index += 1;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hydrostatic::hydrostatic_split;

    fn flat_phi(r: usize, h: f64) -> ScalarGrid {
        let dims = GridDims::new_2d(r, r);
        let dx = 1.0 / r as f64;
        let mut phi = ScalarGrid::new(dims, dx);
        for idx in 0..dims.cell_count() {
            let c = phi.cell_center(dims.coords(idx));
            phi.data[idx] = c[1] - h;
        }
        phi
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig { viscosity: 0.1, ..Default::default() };
        assert!(matches!(bad.validate(), Err(FluidError::Config(_))));
        let bad = SolverConfig { dt: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!((SolverConfig::default().buoyancy_coefficient() - 0.001).abs() < 1e-15);
    }

    #[test]
    fn flat_liquid_stays_at_rest() {
        let cfg = SolverConfig::default();
        let mut state = SimState::liquid(&flat_phi(32, 0.4), &cfg, 1).unwrap();
        let n = state.particles.len();
        for _ in 0..10 {
            let (s, report) = step_reference(state, &cfg).unwrap();
            state = s;
            assert!(report.converged);
            assert!(report.max_divergence <= cfg.cg_tolerance);
            assert_eq!(state.particles.len(), n);
        }
        assert!(state.velocity.max_speed() < 1e-3, "max |u| = {}", state.velocity.max_speed());
    }

    #[test]
    fn resting_pressure_is_hydrostatic() {
        let cfg = SolverConfig::default();
        let mut state = SimState::liquid(&flat_phi(32, 0.4), &cfg, 1).unwrap();
        for _ in 0..2 {
            state = step_reference(state, &cfg).unwrap().0;
        }
        let (_, p_d) =
            hydrostatic_split(&state.pressure, &state.levelset, &state.flags, cfg.density, cfg.gravity).unwrap();
        assert!(p_d.max_abs() < 10.0 * cfg.cg_tolerance, "max |p_d| = {}", p_d.max_abs());
    }

    #[test]
    fn falling_drop_keeps_divergence_bounded() {
        let cfg = SolverConfig::default();
        let r = 32;
        let mut phi = flat_phi(r, 0.25);
        for idx in 0..phi.data.len() {
            let c = phi.cell_center(phi.dims.coords(idx));
            let drop = ((c[0] - 0.5).powi(2) + (c[1] - 0.7).powi(2)).sqrt() - 0.12;
            phi.data[idx] = phi.data[idx].min(drop);
        }
        let mut state = SimState::liquid(&phi, &cfg, 3).unwrap();
        for _ in 0..15 {
            let (s, report) = step_reference(state, &cfg).unwrap();
            state = s;
            assert!(report.converged);
            assert!(report.max_divergence <= cfg.cg_tolerance, "{}", report.max_divergence);
        }
        assert!(state.velocity.max_speed() > 0.01);
        assert!(state.is_finite());
    }

    #[test]
    fn smoke_rises() {
        let cfg = SolverConfig::default();
        let dims = GridDims::new_2d(24, 24);
        let dx = 1.0 / 24.0;
        let inflow = Inflow { center: [0.5, 0.2, 0.0], radius: 0.08, velocity: [0.0, 0.05, 0.0], density: 1.0 };
        let mut state = SimState::smoke(dims, dx, vec![inflow], &cfg).unwrap();
        for _ in 0..10 {
            let (s, report) = step_reference(state, &cfg).unwrap();
            state = s;
            assert!(report.converged);
            assert!(report.max_divergence <= cfg.cg_tolerance);
        }
        assert!(state.density.max_abs() > 0.5);
        let above: f64 = (13..20).map(|j| state.density.get(12, j, 0)).sum();
        assert!(above > 0.0);
    }

    #[test]
    fn split_phases_match_full_step() {
        let cfg = SolverConfig::default();
        let state = SimState::liquid(&flat_phi(16, 0.3), &cfg, 9).unwrap();
        let (a, _) = step_reference(state.clone(), &cfg).unwrap();
        let prep = prepare_step(state, &cfg).unwrap();
        let p = solve_prepared(&prep, &cfg).unwrap().pressure;
        let (b, _) = finish_step(prep, p, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
