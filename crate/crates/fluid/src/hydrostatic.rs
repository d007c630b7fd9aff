//! Split of the total pressure into a hydrostatic and a dynamic part.

use crate::error::{FluidError, Result};
use crate::grid::{CellFlags, CellType, ScalarGrid};

/// Vertical axis (gravity direction).
pub const UP: usize = 1;

/// Surface height of each vertical column: the highest sign change of `phi`
/// (inside below, outside above), linearly interpolated. `None` for columns
/// without a crossing. Indexed by the flat cell index of the column's j = 0.
pub fn surface_heights(phi: &ScalarGrid) -> Vec<Option<f64>> {
    let dims = phi.dims;
    let ny = dims.extents[UP];
    let mut out = vec![None; dims.cell_count()];
    for k in 0..dims.extents[2] {
        for i in 0..dims.extents[0] {
            for j in (0..ny.saturating_sub(1)).rev() {
                let lo = phi.get(i, j, k);
                let hi = phi.get(i, j + 1, k);
                if lo < 0.0 && hi >= 0.0 {
                    let z = phi.cell_center([i, j, k])[UP];
                    let t = lo / (lo - hi);
                    out[dims.index(i, 0, k)] = Some(z + t * phi.dx);
                    break;
                }
            }
        }
    }
    out
}

/// Returns `(p_s, p_d)` with `p_s = rho |g| (z_0 - z)` on FLUID cells below
/// their column's surface and `p_d = p_t - p_s`.
pub fn hydrostatic_split(
    p_t: &ScalarGrid,
    levelset: &ScalarGrid,
    flags: &CellFlags,
    density: f64,
    gravity: [f64; 3],
) -> Result<(ScalarGrid, ScalarGrid)> {
    p_t.same_shape(levelset)?;
    if flags.dims != p_t.dims {
        return Err(FluidError::Dimension("flags differ from pressure extents".into()));
    }
    let dims = p_t.dims;
    let g = gravity[..dims.dim].iter().map(|v| v * v).sum::<f64>().sqrt();
    let heights = surface_heights(levelset);
    let mut p_s = ScalarGrid::new(dims, p_t.dx);
    for idx in 0..dims.cell_count() {
        if flags.cells[idx] != CellType::Fluid {
            continue;
        }
        let c = dims.coords(idx);
        let Some(z0) = heights[dims.index(c[0], 0, c[2])] else { continue };
        let z = p_t.cell_center(c)[UP];
        if z < z0 {
            p_s.data[idx] = density * g * (z0 - z);
        }
    }
    let mut p_d = p_t.clone();
    for (d, s) in p_d.data.iter_mut().zip(&p_s.data) {
        *d -= *s;
    }
    Ok((p_s, p_d))
}

/// Inverse of the split: `p_s + p_d`.
pub fn recombine(p_s: &ScalarGrid, p_d: &ScalarGrid) -> Result<ScalarGrid> {
    p_s.same_shape(p_d)?;
    let mut out = p_s.clone();
    for (o, d) in out.data.iter_mut().zip(&p_d.data) {
        *o += *d;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridDims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat(dims: GridDims, dx: f64, h: f64) -> ScalarGrid {
        let mut phi = ScalarGrid::new(dims, dx);
        for idx in 0..dims.cell_count() {
            let c = phi.cell_center(dims.coords(idx));
            phi.data[idx] = c[UP] - h;
        }
        phi
    }

    #[test]
    fn resting_column_value_at_surface_depth() {
        // z_0 = 32 dx above z = 0 gives rho |g| 32 with dx = 1
        let dims = GridDims::new_2d(8, 40);
        let phi = flat(dims, 1.0, 32.0);
        let flags = CellFlags::from_levelset(&phi);
        let p_t = ScalarGrid::new(dims, 1.0);
        let (p_s, _) = hydrostatic_split(&p_t, &phi, &flags, 1.0, [0.0, -0.01, 0.0]).unwrap();
        let heights = surface_heights(&phi);
        assert!((heights[dims.index(3, 0, 0)].unwrap() - 32.0).abs() < 1e-12);
        // cell (3, 1) sits at z = 1.5
        assert!((p_s.get(3, 1, 0) - 0.01 * 30.5).abs() < 1e-12);
        let extrapolated = p_s.get(3, 1, 0) + 0.01 * 1.5;
        assert!((extrapolated - 0.32).abs() < 1e-12);
        // above the surface and in walls p_s is zero
        assert_eq!(p_s.get(3, 33, 0), 0.0);
        assert_eq!(p_s.get(0, 5, 0), 0.0);
    }

    #[test]
    fn empty_column_has_no_hydrostatic_part() {
        let dims = GridDims::new_2d(6, 6);
        let phi = ScalarGrid::filled(dims, 1.0, 2.0);
        let flags = CellFlags::from_levelset(&phi);
        let p_t = ScalarGrid::filled(dims, 1.0, 0.3);
        let (p_s, p_d) = hydrostatic_split(&p_t, &phi, &flags, 1.0, [0.0, -0.01, 0.0]).unwrap();
        assert!(p_s.data.iter().all(|v| *v == 0.0));
        assert_eq!(p_d, p_t);
    }

    #[test]
    fn split_recombines() {
        let dims = GridDims::new_2d(16, 16);
        let phi = flat(dims, 1.0, 9.3);
        let flags = CellFlags::from_levelset(&phi);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p_t = ScalarGrid::new(dims, 1.0);
        p_t.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let (p_s, p_d) = hydrostatic_split(&p_t, &phi, &flags, 1.0, [0.0, -0.01, 0.0]).unwrap();
        let back = recombine(&p_s, &p_d).unwrap();
        for (a, b) in back.data.iter().zip(&p_t.data) {
            assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs().max(1.0));
        }
    }
}
