use proptest::prelude::*;

use lsp_core::config::{Interval, Quantity, Variant};
use lsp_core::dataset::{assign_splits, Split};
use lsp_core::eval::{psnr, schedule_speedup, surface_error};
use lsp_core::predictor::{Predictor, PredictorConfig};
use lsp_core::scene::{augment_mirror, grid_dims};
use lsp_fluid::ScalarGrid;

/// Level set of a tilted plane `y = h + s x`, negative below.
fn plane(r: usize, h: f64, s: f64) -> ScalarGrid {
    let dims = grid_dims(2, r);
    let dx = 1.0 / r as f64;
    let mut g = ScalarGrid::new(dims, dx);
    for j in 0..r {
        for i in 0..r {
            let (x, y) = ((i as f64 + 0.5) * dx, (j as f64 + 0.5) * dx);
            g.set(i, j, 0, (y - h - s * x) / (1.0 + s * s).sqrt());
        }
    }
    g
}

fn small_predictor(variant: Variant, o: usize, seed: u64) -> Predictor {
    let cfg = PredictorConfig { n: 2, o, m_s: 12, m_t: 8, m_td: 10, variant, dropout: 0.0, recurrent_dropout: 0.0 };
    Predictor::build(cfg, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psnr_is_symmetric_and_falls_with_error(
        a in prop::collection::vec(-1.0f32..1.0, 16..64),
        seed in any::<u64>(),
        scale in 1.5f32..8.0,
    ) {
        let noise: Vec<f32> = (0..a.len()).map(|i| (((seed >> (i % 60)) & 7) as f32 - 3.5) * 1e-3).collect();
        let b: Vec<f32> = a.iter().zip(&noise).map(|(x, n)| x + n).collect();
        let c: Vec<f32> = a.iter().zip(&noise).map(|(x, n)| x + scale * n).collect();
        let ab = psnr(&a, &b, 2.0).unwrap();
        prop_assert_eq!(ab, psnr(&b, &a, 2.0).unwrap());
        prop_assert!(psnr(&a, &c, 2.0).unwrap() < ab);
        prop_assert_eq!(psnr(&a, &a, 2.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn surface_error_is_a_symmetric_distance(
        h0 in 0.3f64..0.7,
        h1 in 0.3f64..0.7,
        s in -0.3f64..0.3,
    ) {
        let (p, q) = (plane(32, h0, s), plane(32, h1, s));
        prop_assert!(surface_error(&p, &p).unwrap() < 1e-12);
        let pq = surface_error(&p, &q).unwrap();
        prop_assert_eq!(pq, surface_error(&q, &p).unwrap());
        // Parallel planes: the distance is the normal offset, in cells.
        let expect = (h0 - h1).abs() / (1.0 + s * s).sqrt() * 32.0;
        prop_assert!((pq - expect).abs() < 1e-9, "{} vs {}", pq, expect);
    }

    #[test]
    fn mirroring_twice_is_the_identity(
        r in 2usize..9,
        quantity in prop_oneof![Just(Quantity::Total), Just(Quantity::Split), Just(Quantity::Velocity)],
        dim in 2usize..4,
        seed in any::<u64>(),
    ) {
        let dims = grid_dims(dim, r);
        let n = dims.cell_count() * quantity.channels(dim);
        let frame: Vec<f32> = (0..n).map(|i| ((seed.wrapping_mul(i as u64 + 1) >> 40) as f32) / 1e6 - 8.0).collect();
        let axes: Vec<usize> = if dim == 2 { vec![0] } else { vec![0, 2] };
        let once = augment_mirror(&frame, dims, quantity, &axes).unwrap();
        prop_assert_eq!(augment_mirror(&once, dims, quantity, &axes).unwrap(), frame.clone());
        prop_assert_eq!(augment_mirror(&frame, dims, quantity, &[]).unwrap(), frame);
    }

    #[test]
    fn splits_partition_every_scene(n in 1usize..200, seed in any::<u64>()) {
        let s = assign_splits(n, seed);
        prop_assert_eq!(s.len(), n);
        prop_assert_eq!(&s, &assign_splits(n, seed));
        let count = |k: Split| s.iter().filter(|v| **v == k).count();
        prop_assert_eq!(count(Split::Train), (0.8 * n as f64).round() as usize);
        prop_assert_eq!(count(Split::Train) + count(Split::Validation) + count(Split::Test), n);
    }

    #[test]
    fn schedule_speedup_bounds(
        solve in prop::collection::vec(1.0f64..10.0, 12),
        pred in 0.1f64..20.0,
        k in 1u32..6,
    ) {
        let predicted = vec![pred; 12];
        let corrective: Vec<f64> = solve.iter().map(|s| s + 0.5).collect();
        prop_assert_eq!(schedule_speedup(Interval::Finite(0), &solve, &predicted, &corrective), 1.0);
        let inf = schedule_speedup(Interval::Infinite, &solve, &predicted, &corrective);
        let fin = schedule_speedup(Interval::Finite(k), &solve, &predicted, &corrective);
        prop_assert!((inf - solve.iter().sum::<f64>() / (12.0 * pred)).abs() <= 1e-12 * inf);
        // Each step costs either its predicted or its corrective time.
        let lo: f64 = corrective.iter().map(|c| c.max(pred)).sum();
        let hi: f64 = corrective.iter().map(|c| c.min(pred)).sum();
        let reference: f64 = solve.iter().sum();
        prop_assert!(fin >= reference / lo - 1e-12 && fin <= reference / hi + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn predictions_have_o_codes_and_depend_on_history_order(
        variant in prop_oneof![Just(Variant::Hybrid), Just(Variant::FullyRecurrent), Just(Variant::HybridV2)],
        o in 1usize..4,
        seed in any::<u64>(),
    ) {
        let p = small_predictor(variant, o, seed);
        let codes: Vec<Vec<f32>> = (0..3).map(|t| (0..12).map(|i| ((i * 7 + t * 5) % 11) as f32 / 5.0 - 1.0).collect()).collect();
        let hist: Vec<&[f32]> = codes.iter().map(|c| c.as_slice()).collect();
        let out = p.predict(&hist).unwrap();
        prop_assert_eq!(out.len(), o);
        prop_assert!(out.iter().all(|c| c.len() == 12 && c.iter().all(|v| v.is_finite())));
        prop_assert_eq!(&out, &p.predict(&hist).unwrap());
        let reversed: Vec<&[f32]> = hist.iter().rev().copied().collect();
        prop_assert_ne!(out, p.predict(&reversed).unwrap());
    }
}

#[test]
fn predictor_rejects_wrong_history() {
    let p = small_predictor(Variant::Hybrid, 1, 3);
    let c = vec![0.0f32; 12];
    assert!(p.predict(&[&c, &c]).is_err());
    let short = vec![0.0f32; 11];
    assert!(p.predict(&[&c, &c, &short]).is_err());
}
