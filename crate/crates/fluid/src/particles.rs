//! FLIP marker particles and the particle/grid transfers.

use rand::Rng;

use crate::advect::clamp_to_interior;
use crate::error::Result;
use crate::grid::{GridDims, MacGrid, ScalarGrid};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParticleSet {
    pub positions: Vec<[f64; 3]>,
    pub velocities: Vec<[f64; 3]>,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, pos: [f64; 3], vel: [f64; 3]) {
        self.positions.push(pos);
        self.velocities.push(vel);
    }

    /// Seeds `2^dim` jittered particles per cell wherever `phi < 0`, skipping
    /// the wall layer. Samples are stratified on the sub-cell lattice.
    pub fn seed_from_levelset<R: Rng>(phi: &ScalarGrid, jitter: f64, rng: &mut R) -> Self {
        let dims = phi.dims;
        let dx = phi.dx;
        let per_axis = 2usize;
        let sub = dx / per_axis as f64;
        let count = per_axis.pow(dims.dim as u32);
        let mut ps = ParticleSet::default();
        for idx in 0..dims.cell_count() {
            let c = dims.coords(idx);
            if dims.is_boundary(c) {
                continue;
            }
            for s in 0..count {
                let mut p = [0.0; 3];
                for a in 0..dims.dim {
                    let slot = (s >> a) & 1;
                    let offset = (slot as f64 + 0.5) * sub + jitter * sub * (rng.gen::<f64>() - 0.5);
                    p[a] = c[a] as f64 * dx + offset;
                }
                if phi.sample(p) < 0.0 {
                    ps.push(p, [0.0; 3]);
                }
            }
        }
        ps
    }
}

/// Moves every particle through `u` with the midpoint rule, keeping it out
/// of the wall layer.
pub fn advect_particles(ps: &mut ParticleSet, u: &MacGrid, dt: f64) {
    let dims = u.dims;
    let margin = 1e-6 * u.dx;
    for p in ps.positions.iter_mut() {
        let v0 = u.velocity_at(*p);
        let mut mid = *p;
        for a in 0..dims.dim {
            mid[a] += 0.5 * dt * v0[a];
        }
        let mid = clamp_to_interior(&dims, u.dx, mid);
        let v1 = u.velocity_at(mid);
        let mut next = *p;
        for a in 0..dims.dim {
            next[a] += dt * v1[a];
        }
        let mut next = clamp_to_interior(&dims, u.dx, next);
        for a in 0..dims.dim {
            let hi = (dims.extents[a] as f64 - 1.0) * u.dx - margin;
            next[a] = next[a].clamp(u.dx + margin, hi.max(u.dx + margin));
        }
        *p = next;
    }
}

/// Result of a particle-to-grid transfer: averaged face values and the
/// accumulated kernel weights (zero weight marks an empty face).
#[derive(Debug, Clone)]
pub struct ParticleTransfer {
    pub velocity: MacGrid,
    pub weights: MacGrid,
}

impl ParticleTransfer {
    pub fn covered(&self, axis: usize, idx: usize) -> bool {
        self.weights.comps[axis][idx] > WEIGHT_EPS
    }
}

const WEIGHT_EPS: f64 = 1e-9;

/// Linear hat-kernel splat of particle velocities onto the faces.
pub fn particles_to_grid(ps: &ParticleSet, dims: GridDims, dx: f64) -> ParticleTransfer {
    let mut sum = MacGrid::new(dims, dx);
    let mut weights = MacGrid::new(dims, dx);
    for (p, v) in ps.positions.iter().zip(&ps.velocities) {
        for axis in 0..dims.dim {
            let fe = dims.face_extents(axis);
            let mut g = [0.0; 3];
            let mut base = [0isize; 3];
            for a in 0..dims.dim {
                g[a] = if a == axis { p[a] / dx } else { p[a] / dx - 0.5 };
                base[a] = g[a].floor() as isize;
            }
            let corners = 1usize << dims.dim;
            for corner in 0..corners {
                let mut f = [0usize; 3];
                let mut w = 1.0;
                let mut inside = true;
                for a in 0..dims.dim {
                    let fi = base[a] + ((corner >> a) & 1) as isize;
                    if fi < 0 || fi >= fe[a] as isize {
                        inside = false;
                        break;
                    }
                    f[a] = fi as usize;
                    w *= (1.0 - (g[a] - fi as f64).abs()).max(0.0);
                }
                if !inside || w <= 0.0 {
                    continue;
                }
                let idx = crate::grid::flat_index(fe, f[0], f[1], f[2]);
                sum.comps[axis][idx] += w * v[axis];
                weights.comps[axis][idx] += w;
            }
        }
    }
    for axis in 0..dims.dim {
        for (s, w) in sum.comps[axis].iter_mut().zip(&weights.comps[axis]) {
            *s = if *w > WEIGHT_EPS { *s / *w } else { 0.0 };
        }
    }
    ParticleTransfer { velocity: sum, weights }
}

/// Blends PIC (new grid velocity) and FLIP (old particle velocity plus the
/// grid change) updates. `flip_blend = 1` is pure FLIP.
pub fn flip_update(ps: &mut ParticleSet, u_before: &MacGrid, u_after: &MacGrid, flip_blend: f64) -> Result<()> {
    u_before.same_shape(u_after)?;
    let dim = u_after.dims.dim;
    for (p, v) in ps.positions.iter().zip(ps.velocities.iter_mut()) {
        let new = u_after.velocity_at(*p);
        let old = u_before.velocity_at(*p);
        for a in 0..dim {
            let flip = v[a] + (new[a] - old[a]);
            v[a] = flip_blend * flip + (1.0 - flip_blend) * new[a];
        }
    }
    Ok(())
}

/// Advects particles through `u_before`, then applies the FLIP/PIC
/// velocity update from the grid change `u_after - u_before`.
pub fn flip_particle_cycle(
    ps: &ParticleSet,
    u_before: &MacGrid,
    u_after: &MacGrid,
    dt: f64,
    flip_blend: f64,
) -> Result<ParticleSet> {
    u_before.same_shape(u_after)?;
    let mut out = ps.clone();
    advect_particles(&mut out, u_before, dt);
    flip_update(&mut out, u_before, u_after, flip_blend)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> GridDims {
        GridDims::new_2d(8, 8)
    }

    #[test]
    fn static_grids_leave_particles_alone() {
        let mut ps = ParticleSet::default();
        ps.push([3.3, 4.1, 0.0], [0.2, -0.1, 0.0]);
        let z = MacGrid::new(dims(), 1.0);
        let out = flip_particle_cycle(&ps, &z, &z, 0.1, 0.97).unwrap();
        assert_eq!(out.positions, ps.positions);
        // FLIP part keeps the old velocity; the PIC part pulls toward zero
        let pure = flip_particle_cycle(&ps, &z, &z, 0.1, 1.0).unwrap();
        assert_eq!(pure, ps);
    }

    #[test]
    fn uniform_flow_moves_particle_by_dt() {
        let mut ps = ParticleSet::default();
        ps.push([3.5, 4.5, 0.0], [1.0, 0.0, 0.0]);
        let u = MacGrid::uniform(dims(), 1.0, [1.0, 0.0, 0.0]);
        let out = flip_particle_cycle(&ps, &u, &u, 0.1, 0.97).unwrap();
        assert!((out.positions[0][0] - 3.6).abs() < 1e-12);
        assert_eq!(out.positions[0][1], 4.5);
    }

    #[test]
    fn pure_flip_keeps_velocity_when_grid_unchanged() {
        let mut ps = ParticleSet::default();
        ps.push([2.2, 5.1, 0.0], [0.3, 0.7, 0.0]);
        ps.push([4.9, 3.3, 0.0], [-0.5, 0.1, 0.0]);
        let u = MacGrid::uniform(dims(), 1.0, [0.4, -0.2, 0.0]);
        let mut out = ps.clone();
        flip_update(&mut out, &u, &u, 1.0).unwrap();
        assert_eq!(out.velocities, ps.velocities);
    }

    #[test]
    fn empty_set_is_valid() {
        let ps = ParticleSet::default();
        let u = MacGrid::new(dims(), 1.0);
        assert!(flip_particle_cycle(&ps, &u, &u, 0.1, 0.5).unwrap().is_empty());
    }

    #[test]
    fn constant_particle_velocity_fills_covered_faces() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParticleSet::default();
        for _ in 0..200 {
            let p = [1.0 + 6.0 * rng.gen::<f64>(), 1.0 + 6.0 * rng.gen::<f64>(), 0.0];
            ps.push(p, [1.0, 0.0, 0.0]);
        }
        let t = particles_to_grid(&ps, dims(), 1.0);
        let mut covered = 0;
        for idx in 0..t.velocity.comps[0].len() {
            if t.covered(0, idx) {
                covered += 1;
                assert!((t.velocity.comps[0][idx] - 1.0).abs() < 1e-12);
            } else {
                assert_eq!(t.velocity.comps[0][idx], 0.0);
            }
        }
        assert!(covered > 0);
        assert!(t.velocity.comps[1].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn particle_on_face_center_sets_that_face() {
        let mut ps = ParticleSet::default();
        // x-face (3, 4) sits at (3.0, 4.5)
        ps.push([3.0, 4.5, 0.0], [0.8, -0.6, 0.0]);
        let t = particles_to_grid(&ps, dims(), 1.0);
        let idx = t.velocity.face_index(0, 3, 4, 0);
        assert_eq!(t.velocity.comps[0][idx], 0.8);
        assert_eq!(t.weights.comps[0][idx], 1.0);
    }

    #[test]
    fn opposite_velocities_cancel() {
        let mut ps = ParticleSet::default();
        ps.push([2.75, 4.5, 0.0], [1.0, 0.0, 0.0]);
        ps.push([3.25, 4.5, 0.0], [-1.0, 0.0, 0.0]);
        let t = particles_to_grid(&ps, dims(), 1.0);
        let idx = t.velocity.face_index(0, 3, 4, 0);
        assert_eq!(t.velocity.comps[0][idx], 0.0);
        assert!(t.covered(0, idx));
    }

    #[test]
    fn seeding_places_four_particles_per_fluid_cell_in_2d() {
        let d = dims();
        let phi = ScalarGrid::filled(d, 1.0, -1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ps = ParticleSet::seed_from_levelset(&phi, 0.5, &mut rng);
        assert_eq!(ps.len(), 6 * 6 * 4);
    }
}
