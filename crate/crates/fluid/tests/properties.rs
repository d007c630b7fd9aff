use lsp_fluid::forces::{apply_body_force, enforce_wall_bcs};
use lsp_fluid::hydrostatic::surface_heights;
use lsp_fluid::pressure::{PoissonSystem, ProjectionParams};
use lsp_fluid::*;
use proptest::prelude::*;

fn params() -> ProjectionParams {
    ProjectionParams { dt: 0.1, density: 1.0, tolerance: 5e-5, max_iters: 2000 }
}

fn flat(dims: GridDims, dx: f64, h: f64) -> ScalarGrid {
    let mut phi = ScalarGrid::new(dims, dx);
    for idx in 0..dims.cell_count() {
        phi.data[idx] = phi.cell_center(dims.coords(idx))[1] - h;
    }
    phi
}

fn exact_hydrostatic(phi: &ScalarGrid, flags: &CellFlags, g: f64) -> ScalarGrid {
    let heights = surface_heights(phi);
    let dims = phi.dims;
    let mut p = ScalarGrid::new(dims, phi.dx);
    for idx in 0..dims.cell_count() {
        if flags.cells[idx] != CellType::Fluid {
            continue;
        }
        let c = dims.coords(idx);
        let z0 = heights[dims.index(c[0], 0, c[2])].unwrap();
        p.data[idx] = g * (z0 - p.cell_center(c)[1]);
    }
    p
}

fn gravity_divergence(flags: &CellFlags, dx: f64) -> ScalarGrid {
    let u = MacGrid::new(flags.dims, dx);
    let mut u = apply_body_force(&u, flags, [0.0, -0.01, 0.0], 0.1);
    enforce_wall_bcs(&mut u, flags);
    divergence(&u, flags).unwrap()
}

#[test]
fn hydrostatic_pressure_is_a_fixed_point_of_alignment() {
    for (r, h) in [(32usize, 0.41), (24, 0.55)] {
        let dims = GridDims::new_2d(r, r);
        let dx = 1.0 / r as f64;
        let phi = flat(dims, dx, h);
        let flags = CellFlags::from_levelset(&phi);
        let div = gravity_divergence(&flags, dx);
        let p = exact_hydrostatic(&phi, &flags, 0.01);
        let out = boundary_alignment(&p, &div, &phi, &flags, 3, 3, &params()).unwrap();
        let change = out.data.iter().zip(&p.data).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(change < 1e-6, "r={r}: {change}");
    }
}

#[test]
fn converged_solve_on_resting_column_is_hydrostatic() {
    // unit-height domain, surface 32 cells above the floor
    let dims = GridDims::new_2d(16, 40);
    let dx = 1.0 / 40.0;
    let phi = flat(dims, dx, 32.0 * dx);
    let flags = CellFlags::from_levelset(&phi);
    let div = gravity_divergence(&flags, dx);
    let s = solve_pressure(&div, &flags, Some(&phi), &params()).unwrap();
    assert!(s.converged);
    let (p_s, p_d) = hydrostatic_split(&s.pressure, &phi, &flags, 1.0, [0.0, -0.01, 0.0]).unwrap();
    assert!(p_d.max_abs() < 10.0 * 5e-5, "{}", p_d.max_abs());
    let expect = exact_hydrostatic(&phi, &flags, 0.01);
    for (a, b) in p_s.data.iter().zip(&expect.data) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn flags_from_bits(n: usize, bits: &[bool]) -> CellFlags {
    let dims = GridDims::new_2d(n, n);
    let mut flags = CellFlags::walled(dims, CellType::Air);
    for (idx, b) in bits.iter().enumerate() {
        if flags.cells[idx] != CellType::Solid && *b {
            flags.cells[idx] = CellType::Fluid;
        }
    }
    flags
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn interpolating_a_constant_is_exact(v in -1e3f64..1e3, x in -2.0f64..10.0, y in -2.0f64..10.0) {
        let g = ScalarGrid::filled(GridDims::new_2d(8, 8), 1.0, v);
        prop_assert_eq!(g.sample([x, y, 0.0]), v);
        let u = MacGrid::uniform(GridDims::new_2d(8, 8), 1.0, [v, -v, 0.0]);
        let s = u.velocity_at([x, y, 0.0]);
        prop_assert_eq!(s[0], v);
        prop_assert_eq!(s[1], -v);
    }

    #[test]
    fn poisson_matrix_is_symmetric(bits in prop::collection::vec(any::<bool>(), 256),
                                   phis in prop::collection::vec(-1.5f64..1.5, 256)) {
        let flags = flags_from_bits(16, &bits);
        let mut phi = ScalarGrid::new(flags.dims, 1.0);
        for idx in 0..256 {
            let v = phis[idx].abs().max(1e-3);
            phi.data[idx] = if flags.cells[idx] == CellType::Fluid { -v } else { v };
        }
        let sys = PoissonSystem::assemble(&flags, Some(&phi), 1.0).unwrap();
        let m = sys.to_dense();
        for i in 0..m.len() {
            for j in 0..i {
                prop_assert_eq!(m[i][j].to_bits(), m[j][i].to_bits());
            }
        }
    }

    #[test]
    fn divergence_and_gradient_are_adjoint(us in prop::collection::vec(-1.0f64..1.0, 144),
                                           ps in prop::collection::vec(-1.0f64..1.0, 64)) {
        let dims = GridDims::new_2d(8, 8);
        let flags = CellFlags::walled(dims, CellType::Fluid);
        let mut u = MacGrid::new(dims, 1.0);
        for a in 0..2 {
            for idx in 0..u.comps[a].len() {
                u.comps[a][idx] = us[idx % us.len()] * if a == 0 { 1.0 } else { -0.7 };
            }
        }
        enforce_wall_bcs(&mut u, &flags);
        let mut p = ScalarGrid::new(dims, 1.0);
        for idx in 0..64 {
            if flags.cells[idx] == CellType::Fluid {
                p.data[idx] = ps[idx];
            }
        }
        let unit = ProjectionParams { dt: 1.0, density: 1.0, ..params() };
        let neg_grad = subtract_pressure_gradient(&MacGrid::new(dims, 1.0), &p, &flags, None, &unit).unwrap();
        let lhs: f64 = (0..2).map(|a| neg_grad.comps[a].iter().zip(&u.comps[a]).map(|(g, v)| -g * v).sum::<f64>()).sum();
        let div = divergence(&u, &flags).unwrap();
        let rhs: f64 = p.data.iter().zip(&div.data).map(|(a, b)| a * b).sum();
        prop_assert!((lhs + rhs).abs() < 1e-11);
    }

    #[test]
    fn projection_is_idempotent(seed in 0u64..1000, h in 0.3f64..0.7) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dims = GridDims::new_2d(16, 16);
        let dx = 1.0 / 16.0;
        let mut phi = ScalarGrid::new(dims, dx);
        for idx in 0..dims.cell_count() {
            let c = phi.cell_center(dims.coords(idx));
            phi.data[idx] = c[1] - h - 0.05 * (9.0 * c[0]).sin();
        }
        let flags = CellFlags::from_levelset(&phi);
        let mut u = MacGrid::new(dims, dx);
        for a in 0..2 {
            u.comps[a].iter_mut().for_each(|v| *v = rng.gen_range(-0.05..0.05));
        }
        enforce_wall_bcs(&mut u, &flags);
        let pr = params();
        let s1 = solve_pressure(&divergence(&u, &flags).unwrap(), &flags, Some(&phi), &pr).unwrap();
        prop_assert!(s1.converged);
        let u1 = subtract_pressure_gradient(&u, &s1.pressure, &flags, Some(&phi), &pr).unwrap();
        let d1 = divergence(&u1, &flags).unwrap();
        prop_assert!(d1.max_abs() <= pr.tolerance);
        let s2 = solve_pressure(&d1, &flags, Some(&phi), &pr).unwrap();
        let u2 = subtract_pressure_gradient(&u1, &s2.pressure, &flags, Some(&phi), &pr).unwrap();
        prop_assert!(u2.minus(&u1).unwrap().max_abs() < 10.0 * pr.tolerance);
    }

    #[test]
    fn alignment_leaves_far_cells_bitwise(seed in 0u64..1000, h in 0.3f64..0.7) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dims = GridDims::new_2d(20, 20);
        let dx = 0.05;
        let phi = flat(dims, dx, h);
        let flags = CellFlags::from_levelset(&phi);
        let mut p = ScalarGrid::new(dims, dx);
        p.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let div = gravity_divergence(&flags, dx);
        let out = boundary_alignment(&p, &div, &phi, &flags, 3, 3, &params()).unwrap();
        for idx in 0..p.data.len() {
            if phi.data[idx].abs() > 3.0 * dx || flags.cells[idx] != CellType::Fluid {
                prop_assert_eq!(out.data[idx].to_bits(), p.data[idx].to_bits());
            }
        }
    }

    #[test]
    fn split_reconstructs_total(seed in 0u64..1000, h in 5.0f64..12.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dims = GridDims::new_2d(16, 16);
        let phi = flat(dims, 1.0, h);
        let flags = CellFlags::from_levelset(&phi);
        let mut p_t = ScalarGrid::new(dims, 1.0);
        p_t.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.2..0.2));
        let (p_s, p_d) = hydrostatic_split(&p_t, &phi, &flags, 1.0, [0.0, -0.01, 0.0]).unwrap();
        let back = recombine(&p_s, &p_d).unwrap();
        for (a, b) in back.data.iter().zip(&p_t.data) {
            prop_assert!((a - b).abs() <= 1e-15);
        }
    }
}

#[test]
fn reference_steps_are_deterministic() {
    let cfg = SolverConfig::default();
    let dims = GridDims::new_2d(24, 24);
    let mut phi = flat(dims, 1.0 / 24.0, 0.3);
    for idx in 0..phi.data.len() {
        let c = phi.cell_center(dims.coords(idx));
        let drop = ((c[0] - 0.4).powi(2) + (c[1] - 0.7).powi(2)).sqrt() - 0.1;
        phi.data[idx] = phi.data[idx].min(drop);
    }
    let run = || {
        let mut s = SimState::liquid(&phi, &cfg, 17).unwrap();
        for _ in 0..8 {
            s = step_reference(s, &cfg).unwrap().0;
        }
        s
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
}
