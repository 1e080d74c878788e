use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tpmvcc_core::geometry::SamplingGrid;
use tpmvcc_core::sampler::{bilinear_weight, warp, warp_backward};
use tpmvcc_core::Tensor;

/// Textbook bilinear interpolation coefficients of the four corners
/// around `p`, written with the far corner instead of the distance.
fn corner_weights(p: [f64; 2]) -> [([i64; 2], f64); 4] {
    let (x0, y0) = (p[0].floor(), p[1].floor());
    let (x1, y1) = (x0 + 1.0, y0 + 1.0);
    let (a, b) = (x0 as i64, y0 as i64);
    [
        ([a, b], (x1 - p[0]) * (y1 - p[1])),
        ([a + 1, b], (p[0] - x0) * (y1 - p[1])),
        ([a, b + 1], (x1 - p[0]) * (p[1] - y0)),
        ([a + 1, b + 1], (p[0] - x0) * (p[1] - y0)),
    ]
}

#[test]
fn kernel_matches_closed_form_on_random_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let p = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)];
        for (q, w) in corner_weights(p) {
            assert!((bilinear_weight(p, q) - w).abs() < 1e-15, "p {p:?} q {q:?}");
        }
        // Lattice points two or more steps away get nothing.
        let far = [p[0].floor() as i64 + 2, p[1].floor() as i64 - 1];
        assert_eq!(bilinear_weight(p, far), 0.0);
    }
}

fn random_grid(rng: &mut ChaCha8Rng, gh: usize, gw: usize, sh: usize, sw: usize, interior: bool) -> SamplingGrid {
    let (lo, hi_u, hi_v) = if interior {
        (0.0, (sw - 1) as f64, (sh - 1) as f64)
    } else {
        (-1.5, sw as f64 + 0.5, sh as f64 + 0.5)
    };
    let coords = (0..gh * gw)
        .map(|_| [rng.random_range(lo..hi_u), rng.random_range(lo..hi_v)])
        .collect();
    let mask = (0..gh * gw).map(|_| rng.random_bool(0.9)).collect();
    SamplingGrid { grid_h: gh, grid_w: gw, source_h: sh, source_w: sw, coords, mask }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_sum_to_one_inside_the_lattice(x in 0.0f64..30.0, y in 0.0f64..30.0) {
        let p = [x, y];
        let total: f64 = corner_weights(p).iter().map(|(q, _)| bilinear_weight(p, *q)).sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn constant_source_is_reproduced(seed in 0u64..10_000, c in 1usize..4, value in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = random_grid(&mut rng, 6, 5, 7, 8, true);
        let out = warp(&Tensor::full(&[c, 7, 8], value), &grid).unwrap();
        for ch in 0..c {
            for cell in 0..30 {
                let v = out.data()[ch * 30 + cell];
                let expect = if grid.mask[cell] { value } else { 0.0 };
                prop_assert!((v - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn warp_is_linear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = random_grid(&mut rng, 5, 6, 6, 7, false);
        let x = random(&mut rng, &[2, 6, 7]);
        let y = random(&mut rng, &[2, 6, 7]);
        let mut combo = x.scale(a);
        combo.add_assign(&y.scale(b));
        let lhs = warp(&combo, &grid).unwrap();
        let mut rhs = warp(&x, &grid).unwrap().scale(a);
        rhs.add_assign(&warp(&y, &grid).unwrap().scale(b));
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((l - r).abs() < 1e-10);
        }
    }

    #[test]
    fn backward_is_the_adjoint(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = random_grid(&mut rng, 7, 4, 5, 9, false);
        let x = random(&mut rng, &[3, 5, 9]);
        let g = random(&mut rng, &[3, 7, 4]);
        let lhs = warp(&x, &grid).unwrap().dot(&g);
        let rhs = x.dot(&warp_backward(&g, &grid, 3).unwrap());
        prop_assert!((lhs - rhs).abs() < 1e-10, "{} vs {}", lhs, rhs);
    }
}
