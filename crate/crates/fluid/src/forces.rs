//! External forces and velocity boundary handling.

use crate::grid::{CellFlags, CellType, MacGrid, ScalarGrid};

fn touches_solid(lo: Option<CellType>, hi: Option<CellType>) -> bool {
    matches!(lo, None | Some(CellType::Solid)) || matches!(hi, None | Some(CellType::Solid))
}

fn touches_fluid(lo: Option<CellType>, hi: Option<CellType>) -> bool {
    lo == Some(CellType::Fluid) || hi == Some(CellType::Fluid)
}

/// Adds `gravity * dt` on every face bordering a FLUID cell; faces touching
/// a wall keep their no-flow value.
pub fn apply_body_force(u: &MacGrid, flags: &CellFlags, gravity: [f64; 3], dt: f64) -> MacGrid {
    let mut out = u.clone();
    for axis in 0..u.dims.dim {
        if gravity[axis] == 0.0 {
            continue;
        }
        let dv = gravity[axis] * dt;
        for idx in 0..out.comps[axis].len() {
            let f = u.face_coords(axis, idx);
            let (lo, hi) = flags.face_neighbors(axis, f);
            if touches_fluid(lo, hi) && !touches_solid(lo, hi) {
                out.comps[axis][idx] += dv;
            }
        }
    }
    out
}

/// Upward buoyancy `beta * density` on the vertical faces between two
/// non-solid cells (smoke scenes).
pub fn apply_buoyancy(u: &mut MacGrid, flags: &CellFlags, density: &ScalarGrid, beta: f64, dt: f64) {
    let axis = 1;
    for idx in 0..u.comps[axis].len() {
        let f = u.face_coords(axis, idx);
        let (lo, hi) = flags.face_neighbors(axis, f);
        if touches_solid(lo, hi) {
            continue;
        }
        let mut below = f;
        below[axis] -= 1;
        let rho = 0.5 * (density.at(below) + density.at(f));
        u.comps[axis][idx] += beta * rho * dt;
    }
}

/// Zeroes the normal velocity on every face that touches a wall.
pub fn enforce_wall_bcs(u: &mut MacGrid, flags: &CellFlags) {
    for axis in 0..u.dims.dim {
        for idx in 0..u.comps[axis].len() {
            let f = u.face_coords(axis, idx);
            let (lo, hi) = flags.face_neighbors(axis, f);
            if touches_solid(lo, hi) {
                u.comps[axis][idx] = 0.0;
            }
        }
    }
}

/// Faces bordering at least one FLUID cell.
pub fn fluid_face_mask(u: &MacGrid, flags: &CellFlags) -> [Vec<bool>; 3] {
    let mut masks: [Vec<bool>; 3] = Default::default();
    for axis in 0..u.dims.dim {
        masks[axis] = (0..u.comps[axis].len())
            .map(|idx| {
                let (lo, hi) = flags.face_neighbors(axis, u.face_coords(axis, idx));
                touches_fluid(lo, hi)
            })
            .collect();
    }
    masks
}

/// Extends velocities from valid faces into invalid ones, one layer per
/// pass, by averaging valid same-component neighbours.
pub fn extrapolate_velocity(u: &mut MacGrid, valid: &[Vec<bool>; 3], layers: usize) {
    let dims = u.dims;
    for axis in 0..dims.dim {
        let fe = dims.face_extents(axis);
        let mut known = valid[axis].clone();
        for _ in 0..layers {
            let mut updates = Vec::new();
            for idx in 0..u.comps[axis].len() {
                if known[idx] {
                    continue;
                }
                let f = u.face_coords(axis, idx);
                let mut sum = 0.0;
                let mut count = 0usize;
                for b in 0..dims.dim {
                    for delta in [-1isize, 1] {
                        let v = f[b] as isize + delta;
                        if v < 0 || v >= fe[b] as isize {
                            continue;
                        }
                        let mut g = f;
                        g[b] = v as usize;
                        let j = u.face_index(axis, g[0], g[1], g[2]);
                        if known[j] {
                            sum += u.comps[axis][j];
                            count += 1;
                        }
                    }
                }
                if count > 0 {
                    updates.push((idx, sum / count as f64));
                }
            }
            if updates.is_empty() {
                break;
            }
            for (idx, v) in updates {
                u.comps[axis][idx] = v;
                known[idx] = true;
            }
        }
    }
}
