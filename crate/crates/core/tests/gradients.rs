use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tpmvcc_core::autodiff::{AlignAxis, Reduction, Tape};
use tpmvcc_core::geometry::SamplingGrid;
use tpmvcc_core::gradcheck::GradCheck;
use tpmvcc_core::Tensor;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Cross-correlation by direct summation.
fn conv_reference(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, dil: usize, pad: usize) -> Tensor {
    let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let oh = (h + 2 * pad - dil * (k - 1) - 1) / stride + 1;
    let ow = (wd + 2 * pad - dil * (k - 1) - 1) / stride + 1;
    let mut out = Tensor::zeros(&[co, oh, ow]);
    for o in 0..co {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = b.data()[o];
                for c in 0..ci {
                    for ki in 0..k {
                        for kj in 0..k {
                            let r = (i * stride + ki * dil) as isize - pad as isize;
                            let s = (j * stride + kj * dil) as isize - pad as isize;
                            if r >= 0 && s >= 0 && (r as usize) < h && (s as usize) < wd {
                                acc += w.data()[((o * ci + c) * k + ki) * k + kj] * x.at3(c, r as usize, s as usize);
                            }
                        }
                    }
                }
                out.data_mut()[(o * oh + i) * ow + j] = acc;
            }
        }
    }
    out
}

#[test]
fn conv_matches_loop_nest_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (stride, dil) in [(1, 1), (1, 2), (2, 1), (1, 3), (2, 2)] {
        let x = random(&mut rng, &[2, 5, 5]);
        let w = random(&mut rng, &[3, 2, 3, 3]);
        let b = random(&mut rng, &[3]);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
        let y = tape.conv2d(xv, wv, bv, stride, dil, dil).unwrap();
        let expect = conv_reference(&x, &w, &b, stride, dil, dil);
        let got = tape.value(y);
        assert_eq!(got.shape(), expect.shape());
        for (g, e) in got.data().iter().zip(expect.data()) {
            assert!((g - e).abs() < 1e-12, "stride {stride} dilation {dil}: {g} vs {e}");
        }
    }
}

#[test]
fn conv_gradcheck_over_dilations() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for dil in 1..=3 {
        for stride in [1, 2] {
            let inputs = [
                random(&mut rng, &[2, 7, 6]),
                random(&mut rng, &[3, 2, 3, 3]),
                random(&mut rng, &[3]),
                random(&mut rng, &[3, 7, 6]),
            ];
            let report = GradCheck::default()
                .run(&inputs[..3], |tape, v| {
                    let y = tape.conv2d(v[0], v[1], v[2], stride, dil, dil)?;
                    let (c, h, w) = tape.value(y).chw()?;
                    let t = Tensor::from_fn(&[c, h, w], |i| inputs[3].data()[i % inputs[3].numel()]);
                    let t = tape.constant(t);
                    tape.mse_loss(y, t)
                })
                .unwrap();
            assert!(report.max_rel_err() < 1e-4, "dilation {dil} stride {stride}: {:?}", report.per_input);
        }
    }
}

#[test]
fn relu_gradcheck_away_from_kink() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::from_fn(&[2, 4, 4], |_| {
        let v: f64 = rng.random_range(0.001..1.0);
        if rng.random_bool(0.5) { v } else { -v }
    });
    let w = random(&mut rng, &[2, 4, 4]);
    let report = GradCheck::default()
        .run(&[x], |tape, v| {
            let y = tape.relu(v[0])?;
            let t = tape.constant(w.clone());
            tape.mse_loss(y, t)
        })
        .unwrap();
    assert!(report.max_rel_err() < 1e-6, "{:?}", report.per_input);
}

#[test]
fn relu_of_negative_tensor_blocks_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full(&[3, 2], -0.5), true);
    let y = tape.relu(x).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 0.0));
}

#[test]
fn mse_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = random(&mut rng, &[1, 8, 8]);
    let t = random(&mut rng, &[1, 8, 8]);
    let report = GradCheck::default()
        .run(&[p], |tape, v| {
            let tv = tape.constant(t.clone());
            tape.mse_loss(v[0], tv)
        })
        .unwrap();
    assert!(report.max_rel_err() < 1e-6, "{:?}", report.per_input);
}

#[test]
fn mse_of_conv_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = vec![random(&mut rng, &[1, 6, 6]), random(&mut rng, &[2, 1, 3, 3])];
    let bias = Tensor::zeros(&[2]);
    let target = random(&mut rng, &[2, 6, 6]);
    let report = GradCheck::default()
        .run(&inputs, |tape, v| {
            let b = tape.constant(bias.clone());
            let y = tape.conv2d(v[0], v[1], b, 1, 1, 1)?;
            let t = tape.constant(target.clone());
            tape.mse_loss(y, t)
        })
        .unwrap();
    assert!(report.max_rel_err() < 1e-4, "{:?}", report.per_input);
}

#[test]
fn concat_gradcheck_and_sum_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let inputs = vec![random(&mut rng, &[1, 3, 4]), random(&mut rng, &[2, 3, 4]), random(&mut rng, &[3, 3, 4])];
    let mut tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let c = tape.concat_channels(&vars).unwrap();
    let s = tape.sum(c).unwrap();
    tape.backward(s).unwrap();
    for (v, t) in vars.iter().zip(&inputs) {
        let g = tape.grad(*v).unwrap();
        assert_eq!(g.shape(), t.shape());
        assert!(g.data().iter().all(|&x| x == 1.0));
    }
    let target = random(&mut rng, &[6, 3, 4]);
    let report = GradCheck::default()
        .run(&inputs, |tape, v| {
            let c = tape.concat_channels(v)?;
            let t = tape.constant(target.clone());
            tape.mse_loss(c, t)
        })
        .unwrap();
    assert!(report.max_rel_err() < 1e-6, "{:?}", report.per_input);
}

fn random_grid(rng: &mut ChaCha8Rng, gh: usize, gw: usize, sh: usize, sw: usize) -> SamplingGrid {
    let mut coords = Vec::new();
    let mut mask = Vec::new();
    for _ in 0..gh * gw {
        // Keep away from integer coordinates, where the tent kernel has a kink.
        let u = rng.random_range(0.0..(sw - 1) as f64).floor() + rng.random_range(0.05..0.95);
        let v = rng.random_range(0.0..(sh - 1) as f64).floor() + rng.random_range(0.05..0.95);
        let valid = rng.random_bool(0.85);
        coords.push([u, v]);
        mask.push(valid);
    }
    SamplingGrid { grid_h: gh, grid_w: gw, source_h: sh, source_w: sw, coords, mask }
}

#[test]
fn warp_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let grid = Arc::new(random_grid(&mut rng, 5, 6, 4, 7));
    let src = random(&mut rng, &[2, 4, 7]);
    let target = random(&mut rng, &[2, 5, 6]);
    let report = GradCheck::default()
        .run(&[src], |tape, v| {
            let y = tape.warp(v[0], grid.clone())?;
            let t = tape.constant(target.clone());
            tape.mse_loss(y, t)
        })
        .unwrap();
    assert!(report.max_rel_err() < 1e-6, "{:?}", report.per_input);
}

#[test]
fn align_scale_and_add_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random(&mut rng, &[2, 3, 5]);
    let b = random(&mut rng, &[2, 3, 5]);
    let factors = Arc::new((0..15).map(|i| 0.5 + i as f64 * 0.1).collect::<Vec<_>>());
    let target_cols = random(&mut rng, &[2, 4, 5]);
    let target_rows = random(&mut rng, &[2, 5, 4]);
    for axis in [AlignAxis::Columns, AlignAxis::Rows] {
        let target = if axis == AlignAxis::Columns { &target_cols } else { &target_rows };
        let (oh, ow) = (target.shape()[1], target.shape()[2]);
        let report = GradCheck::default()
            .run(&[a.clone(), b.clone()], |tape, v| {
                let s = tape.add_n(v)?;
                let s = tape.scale_cells(s, factors.clone())?;
                let y = tape.align_plane(s, axis, oh, ow, Reduction::Mean)?;
                let t = tape.constant(target.clone());
                tape.mse_loss(y, t)
            })
            .unwrap();
        assert!(report.max_rel_err() < 1e-6, "{axis:?}: {:?}", report.per_input);
    }
}

#[test]
fn forward_is_bitwise_repeatable() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&mut rng, &[2, 9, 9]);
    let w = random(&mut rng, &[4, 2, 3, 3]);
    let b = random(&mut rng, &[4]);
    let run = || {
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
        let y = tape.conv2d(xv, wv, bv, 1, 2, 2).unwrap();
        let y = tape.relu(y).unwrap();
        tape.value(y).clone()
    };
    assert!(run().bit_eq(&run()));
}

#[test]
fn impulse_response_matches_receptive_field() {
    for dil in 1..=3 {
        let n = 15;
        let mut x = Tensor::zeros(&[1, n, n]);
        x.data_mut()[(n / 2) * n + n / 2] = 1.0;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let w = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv2d(xv, w, b, 1, dil, dil).unwrap();
        let out = tape.value(y);
        let rows: Vec<usize> = (0..n).filter(|&i| (0..n).any(|j| out.at3(0, i, j) != 0.0)).collect();
        let extent = rows.last().unwrap() - rows.first().unwrap() + 1;
        assert_eq!(extent, dil * 2 + 1, "dilation {dil}");
    }
}
