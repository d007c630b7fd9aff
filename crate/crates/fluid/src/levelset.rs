//! Level-set construction from particles and narrow-band redistancing.
//!
//! Convention: `phi < 0` inside the liquid. Outside the narrow band values
//! are clamped to `±(band + 1) dx`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{FluidError, Result};
use crate::grid::{GridDims, ScalarGrid};
use crate::particles::ParticleSet;

/// Radius of the sphere attached to each particle: half a cell diagonal.
pub fn particle_radius(dx: f64, dim: usize) -> f64 {
    0.5 * dx * (dim as f64).sqrt()
}

/// Magnitude used for cells outside the narrow band.
pub fn band_limit(dx: f64, narrow_band: usize) -> f64 {
    (narrow_band as f64 + 1.0) * dx
}

/// Particle surface after Zhu and Bridson: distance to the kernel-weighted
/// mean particle position minus the particle radius. Smoother than a union
/// of spheres for jittered particles; a lone particle gives its exact
/// sphere. Cells without particles within the kernel get `+limit`.
pub fn particle_levelset(ps: &ParticleSet, dims: GridDims, dx: f64, limit: f64) -> ScalarGrid {
    let n = dims.cell_count();
    let support = 2.0 * dx;
    let reach = 2isize;
    let mut wsum = vec![0.0; n];
    let mut xsum = vec![[0.0; 3]; n];
    for p in &ps.positions {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..dims.dim {
            let c = (p[a] / dx - 0.5).round() as isize;
            lo[a] = (c - reach).max(0) as usize;
            hi[a] = ((c + reach).max(0) as usize).min(dims.extents[a] - 1);
        }
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    let cc = [(i as f64 + 0.5) * dx, (j as f64 + 0.5) * dx, (k as f64 + 0.5) * dx];
                    let mut d2 = 0.0;
                    for a in 0..dims.dim {
                        d2 += (cc[a] - p[a]) * (cc[a] - p[a]);
                    }
                    let s2 = d2 / (support * support);
                    if s2 >= 1.0 {
                        continue;
                    }
                    let w = (1.0 - s2).powi(3);
                    let idx = dims.index(i, j, k);
                    wsum[idx] += w;
                    for a in 0..dims.dim {
                        xsum[idx][a] += w * p[a];
                    }
                }
            }
        }
    }
    let r = particle_radius(dx, dims.dim);
    let mut phi = ScalarGrid::filled(dims, dx, limit);
    for idx in 0..n {
        if wsum[idx] <= 0.0 {
            continue;
        }
        let cc = phi.cell_center(dims.coords(idx));
        let mut d2 = 0.0;
        for a in 0..dims.dim {
            let m = xsum[idx][a] / wsum[idx];
            d2 += (cc[a] - m) * (cc[a] - m);
        }
        phi.data[idx] = (d2.sqrt() - r).min(limit);
    }
    phi
}

#[derive(PartialEq)]
struct HeapEntry(f64, usize);

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    // min-heap on distance, ties broken by index for determinism
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

/// Solves the first-order eikonal update from the smallest accepted
/// neighbour distance per axis.
fn eikonal(mut a: Vec<f64>, dx: f64) -> f64 {
    a.sort_by(|x, y| x.total_cmp(y));
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    let mut d = f64::INFINITY;
    for (n, &v) in a.iter().enumerate() {
        if v >= d {
            break;
        }
        sum += v;
        sum2 += v * v;
        let m = (n + 1) as f64;
        let disc = sum * sum - m * (sum2 - dx * dx);
        if disc < 0.0 {
            break;
        }
        d = (sum + disc.sqrt()) / m;
    }
    d
}

/// Rebuilds `phi` as a signed distance within `narrow_band` cells of its
/// zero crossing using fast marching; interface-adjacent cells keep their
/// values (bounded by the axis-crossing estimate).
pub fn redistance(phi: &ScalarGrid, narrow_band: usize) -> ScalarGrid {
    let dims = phi.dims;
    let dx = phi.dx;
    let limit = band_limit(dx, narrow_band);
    let n = dims.cell_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut accepted = vec![false; n];
    let inside: Vec<bool> = phi.data.iter().map(|v| *v < 0.0).collect();

    for idx in 0..n {
        let c = dims.coords(idx);
        let vi = phi.data[idx];
        let mut bound = f64::INFINITY;
        for a in 0..dims.dim {
            for delta in [-1isize, 1] {
                if let Some(nb) = dims.neighbor(c, a, delta) {
                    let j = dims.index(nb[0], nb[1], nb[2]);
                    if inside[j] != inside[idx] {
                        let vj = phi.data[j];
                        let t = vi.abs() / (vi.abs() + vj.abs()).max(f64::MIN_POSITIVE);
                        bound = bound.min(t * dx);
                    }
                }
            }
        }
        if bound.is_finite() {
            dist[idx] = vi.abs().min(bound);
            accepted[idx] = true;
        }
    }

    let mut heap = BinaryHeap::new();
    let push_neighbors = |idx: usize, dist: &Vec<f64>, accepted: &Vec<bool>, heap: &mut BinaryHeap<HeapEntry>| {
        let c = dims.coords(idx);
        for a in 0..dims.dim {
            for delta in [-1isize, 1] {
                let Some(nb) = dims.neighbor(c, a, delta) else { continue };
                let j = dims.index(nb[0], nb[1], nb[2]);
                if accepted[j] || inside[j] != inside[idx] {
                    continue;
                }
                let cj = nb;
                let mut per_axis = Vec::with_capacity(dims.dim);
                for b in 0..dims.dim {
                    let mut best = f64::INFINITY;
                    for d2 in [-1isize, 1] {
                        if let Some(m) = dims.neighbor(cj, b, d2) {
                            let k = dims.index(m[0], m[1], m[2]);
                            if accepted[k] && inside[k] == inside[j] {
                                best = best.min(dist[k]);
                            }
                        }
                    }
                    if best.is_finite() {
                        per_axis.push(best);
                    }
                }
                let d = eikonal(per_axis, dx);
                if d < limit {
                    heap.push(HeapEntry(d, j));
                }
            }
        }
    };
    for idx in 0..n {
        if accepted[idx] {
            push_neighbors(idx, &dist, &accepted, &mut heap);
        }
    }
    while let Some(HeapEntry(d, idx)) = heap.pop() {
        if accepted[idx] {
            continue;
        }
        accepted[idx] = true;
        dist[idx] = d;
        push_neighbors(idx, &dist, &accepted, &mut heap);
    }

    let mut out = phi.clone();
    for idx in 0..n {
        let d = if accepted[idx] { dist[idx].min(limit) } else { limit };
        out.data[idx] = if inside[idx] { -d } else { d };
    }
    out
}

/// Merges the advected level set with the particle surface (pointwise
/// minimum) and redistances the result within the narrow band.
pub fn levelset_rebuild(
    advected: Option<&ScalarGrid>,
    particles: &ParticleSet,
    dims: GridDims,
    dx: f64,
    narrow_band: usize,
) -> Result<ScalarGrid> {
    if advected.is_none() && particles.is_empty() {
        return Err(FluidError::InvalidState("no particles and no prior level set".into()));
    }
    let limit = band_limit(dx, narrow_band);
    let mut merged = particle_levelset(particles, dims, dx, limit);
    if let Some(adv) = advected {
        if adv.dims != dims {
            return Err(FluidError::Dimension("advected level set has wrong extents".into()));
        }
        for (m, a) in merged.data.iter_mut().zip(&adv.data) {
            *m = m.min(*a);
        }
    }
    Ok(redistance(&merged, narrow_band))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eikonal_one_sided_and_diagonal() {
        assert!((eikonal(vec![0.25], 1.0) - 1.25).abs() < 1e-15);
        let d = eikonal(vec![0.0, 0.0], 1.0);
        assert!((d - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn single_particle_sphere_distance() {
        let dims = GridDims::new_2d(12, 12);
        let mut ps = ParticleSet::default();
        let p = [5.5, 6.5, 0.0];
        ps.push(p, [0.0; 3]);
        let phi = levelset_rebuild(None, &ps, dims, 1.0, 3).unwrap();
        let r = particle_radius(1.0, 2);
        assert!(phi.get(5, 6, 0) < 0.0);
        assert!((phi.get(5, 6, 0) + r).abs() < 1e-12);
        for (i, j) in [(4, 6), (6, 6), (5, 5), (5, 7)] {
            let cc = phi.cell_center([i, j, 0]);
            let exact = ((cc[0] - p[0]).powi(2) + (cc[1] - p[1]).powi(2)).sqrt() - r;
            assert!((phi.get(i, j, 0) - exact).abs() < 1e-12);
        }
        // further cells come from first-order marching
        let cc = phi.cell_center([7, 6, 0]);
        let exact = (cc[0] - p[0]).abs() - r;
        assert!((phi.get(7, 6, 0) - exact).abs() < 0.2);
    }

    #[test]
    fn no_particles_keeps_advected_surface() {
        let dims = GridDims::new_2d(10, 10);
        let mut basin = ScalarGrid::new(dims, 1.0);
        for idx in 0..dims.cell_count() {
            let c = dims.coords(idx);
            basin.data[idx] = (c[1] as f64 + 0.5) - 4.3;
        }
        let before = redistance(&basin, 3);
        let out = levelset_rebuild(Some(&basin), &ParticleSet::default(), dims, 1.0, 3).unwrap();
        assert_eq!(out, before);
        for idx in 0..dims.cell_count() {
            let v = basin.data[idx];
            if v.abs() <= 3.0 {
                assert!((out.data[idx] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_inputs_are_invalid() {
        let dims = GridDims::new_2d(4, 4);
        let err = levelset_rebuild(None, &ParticleSet::default(), dims, 1.0, 3).unwrap_err();
        assert!(matches!(err, FluidError::InvalidState(_)));
    }

    #[test]
    fn band_values_are_finite_and_sign_correct() {
        let dims = GridDims::new_2d(24, 24);
        let mut blob = ScalarGrid::new(dims, 1.0);
        for idx in 0..dims.cell_count() {
            let c = blob.cell_center(dims.coords(idx));
            // deliberately not a distance function: scaled circle
            blob.data[idx] = 3.0 * (((c[0] - 12.0).powi(2) + (c[1] - 11.0).powi(2)).sqrt() - 6.0);
        }
        let out = redistance(&blob, 3);
        for idx in 0..dims.cell_count() {
            let c = blob.cell_center(dims.coords(idx));
            let exact = ((c[0] - 12.0).powi(2) + (c[1] - 11.0).powi(2)).sqrt() - 6.0;
            assert!(out.data[idx].is_finite());
            assert_eq!(out.data[idx] < 0.0, blob.data[idx] < 0.0);
            if exact.abs() <= 3.0 {
                assert!((out.data[idx] - exact).abs() < 0.35, "{} vs {exact}", out.data[idx]);
            } else {
                assert!(out.data[idx].abs() >= 3.0 - 0.35);
            }
        }
    }

    #[test]
    fn gradient_magnitude_near_one_inside_band() {
        let dims = GridDims::new_2d(32, 32);
        let mut blob = ScalarGrid::new(dims, 1.0);
        for idx in 0..dims.cell_count() {
            let c = blob.cell_center(dims.coords(idx));
            let d = ((c[0] - 16.0).powi(2) + (c[1] - 14.0).powi(2)).sqrt() - 9.0;
            // distance near the surface, badly scaled further out
            blob.data[idx] = if d.abs() < 1.0 { d } else { 3.0 * d };
        }
        let out = redistance(&blob, 3);
        let mut checked = 0;
        for j in 2..30 {
            for i in 2..30 {
                let v = out.get(i, j, 0);
                if v.abs() > 2.0 {
                    continue;
                }
                let gx = 0.5 * (out.get(i + 1, j, 0) - out.get(i - 1, j, 0));
                let gy = 0.5 * (out.get(i, j + 1, 0) - out.get(i, j - 1, 0));
                let g = (gx * gx + gy * gy).sqrt();
                assert!((g - 1.0).abs() < 0.2, "|grad phi| = {g} at ({i},{j})");
                checked += 1;
            }
        }
        assert!(checked > 50);
    }
}
