//! Semi-Lagrangian transport of cell-centred and staggered quantities.

use crate::error::{FluidError, Result};
use crate::grid::{GridDims, MacGrid, ScalarGrid};

/// Clamps a world position into the non-wall interior `[dx, (n-1)dx]`.
pub fn clamp_to_interior(dims: &GridDims, dx: f64, mut p: [f64; 3]) -> [f64; 3] {
    for a in 0..dims.dim {
        let lo = dx;
        let hi = (dims.extents[a] as f64 - 1.0) * dx;
        p[a] = if hi > lo { p[a].clamp(lo, hi) } else { p[a].clamp(0.0, dims.extents[a] as f64 * dx) };
    }
    p
}

/// Clamps a world position into the domain box `[0, n dx]`.
pub fn clamp_to_domain(dims: &GridDims, dx: f64, mut p: [f64; 3]) -> [f64; 3] {
    for a in 0..dims.dim {
        p[a] = p[a].clamp(0.0, dims.extents[a] as f64 * dx);
    }
    p
}

/// Departure point of a sample at `pos`, traced backwards with a midpoint
/// rule and clamped to the domain.
fn backtrace(u: &MacGrid, pos: [f64; 3], dt: f64) -> [f64; 3] {
    let dim = u.dims.dim;
    let v0 = u.velocity_at(pos);
    let mut mid = pos;
    for a in 0..dim {
        mid[a] -= 0.5 * dt * v0[a];
    }
    let mid = clamp_to_domain(&u.dims, u.dx, mid);
    let v1 = u.velocity_at(mid);
    let mut back = pos;
    for a in 0..dim {
        back[a] -= dt * v1[a];
    }
    clamp_to_domain(&u.dims, u.dx, back)
}

fn check(u: &MacGrid, dims: GridDims, dt: f64) -> Result<()> {
    if u.dims != dims {
        return Err(FluidError::Dimension(format!(
            "advected field {:?} vs velocity {:?}",
            dims.extents, u.dims.extents
        )));
    }
    if !(dt > 0.0) {
        return Err(FluidError::Config(format!("dt must be positive, got {dt}")));
    }
    Ok(())
}

pub fn advect_scalar(field: &ScalarGrid, u: &MacGrid, dt: f64) -> Result<ScalarGrid> {
    check(u, field.dims, dt)?;
    let mut out = field.clone();
    for idx in 0..field.dims.cell_count() {
        let c = field.dims.coords(idx);
        let back = backtrace(u, field.cell_center(c), dt);
        out.data[idx] = field.sample(back);
    }
    Ok(out)
}

/// Self-advection (or advection of any staggered field through `u`).
pub fn advect_mac(field: &MacGrid, u: &MacGrid, dt: f64) -> Result<MacGrid> {
    check(u, field.dims, dt)?;
    let mut out = field.clone();
    for axis in 0..field.dims.dim {
        for idx in 0..field.comps[axis].len() {
            let f = field.face_coords(axis, idx);
            let back = backtrace(u, field.face_position(axis, f), dt);
            out.comps[axis][idx] = field.sample_component(axis, back);
        }
    }
    Ok(out)
}
