use cvcp_numerics::{bilinear_taps, OneCycleSchedule, Padding, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f32]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn rel(a: f32, b: f32) -> f32 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[test]
fn matmul_identity_and_zero() {
    let tape = Tape::new();
    let i = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0])).unwrap();
    let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
    let out = tape.matmul(i, m).unwrap();
    assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = tape.constant(t(&[1, 2], &[1.0, 2.0])).unwrap();
    let z = tape.constant(t(&[2, 1], &[0.0, 0.0])).unwrap();
    assert_eq!(tape.value(tape.matmul(a, z).unwrap()).data(), &[0.0]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&[5, 4], &mut rng);
    let b = rand_tensor(&[4, 3], &mut rng);
    let tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()).unwrap(), tape.constant(b.clone()).unwrap());
    let out = tape.snapshot(tape.matmul(va, vb).unwrap());
    for i in 0..5 {
        for j in 0..3 {
            let mut acc = 0.0f32;
            for k in 0..4 {
                acc += a.at(&[i, k]) * b.at(&[k, j]);
            }
            assert!(rel(out.at(&[i, j]), acc) < 1e-6);
        }
    }
}

#[test]
fn matmul_shape_error_reports_both() {
    let tape = Tape::<f32>::new();
    let a = tape.constant(Tensor::zeros([2, 3])).unwrap();
    let b = tape.constant(Tensor::zeros([2, 3])).unwrap();
    let msg = tape.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn conv_identity_and_zero_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&[1, 4, 5], &mut rng);
    let tape = Tape::new();
    let vx = tape.constant(x.clone()).unwrap();
    let one = tape.constant(Tensor::full([1, 1, 1, 1], 1.0)).unwrap();
    assert_eq!(tape.snapshot(tape.conv2d(vx, one, 1, Padding::symmetric(0)).unwrap()), x);
    let zero = tape.constant(Tensor::zeros([2, 1, 3, 3])).unwrap();
    let out = tape.snapshot(tape.conv2d(vx, zero, 1, Padding::symmetric(1)).unwrap());
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_matches_six_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&[1, 5, 5], &mut rng);
    let w = rand_tensor(&[2, 1, 3, 3], &mut rng);
    let tape = Tape::new();
    let out = {
        let (vx, vw) = (tape.constant(x.clone()).unwrap(), tape.constant(w.clone()).unwrap());
        tape.snapshot(tape.conv2d(vx, vw, 1, Padding::symmetric(1)).unwrap())
    };
    for f in 0..2 {
        for oy in 0..5 {
            for ox in 0..5 {
                let mut acc = 0.0f32;
                for c in 0..1 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (iy, ix) = (oy as isize + ky as isize - 1, ox as isize + kx as isize - 1);
                            if (0..5).contains(&iy) && (0..5).contains(&ix) {
                                acc += w.at(&[f, c, ky, kx]) * x.at(&[c, iy as usize, ix as usize]);
                            }
                        }
                    }
                }
                assert!((out.at(&[f, oy, ox]) - acc).abs() <= 1e-6 * acc.abs().max(1.0));
            }
        }
    }
}

#[test]
fn conv_non_integral_output_is_config_error() {
    let tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros([1, 6, 6])).unwrap();
    let w = tape.constant(Tensor::zeros([1, 1, 3, 3])).unwrap();
    let err = tape.conv2d(x, w, 2, Padding::symmetric(1)).unwrap_err();
    assert!(matches!(err, cvcp_numerics::NumericsError::Config { .. }));
    assert_eq!(tape.shape(tape.conv2d(x, w, 2, Padding::same(3, 2)).unwrap()), vec![1, 3, 3]);
}

#[test]
fn softmax_examples() {
    let tape = Tape::<f64>::new();
    let u = tape.constant(Tensor::zeros([3])).unwrap();
    for v in tape.value(tape.softmax(u, 0).unwrap()).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let single = tape.constant(Tensor::full([4, 1], 7.0)).unwrap();
    assert!(tape.value(tape.softmax(single, 1).unwrap()).data().iter().all(|&v| v == 1.0));
    let big = tape.constant(Tensor::new([2], vec![1000.0, 0.0]).unwrap()).unwrap();
    let out = tape.snapshot(tape.softmax(big, 0).unwrap());
    assert!((out.data()[0] - 1.0).abs() < 1e-12 && out.data()[1].abs() < 1e-12);
}

#[test]
fn bilinear_examples() {
    let fmap = Tensor::from_fn([2, 4, 5], |i| i as f32);
    let tape = Tape::new();
    let v = tape.constant(fmap.clone()).unwrap();
    let out = tape.snapshot(tape.bilinear_sample(v, &[(2.0, 3.0)]).unwrap());
    assert_eq!(out.data(), &[fmap.at(&[0, 2, 3]), fmap.at(&[1, 2, 3])]);

    let two = tape.constant(t(&[1, 1, 2], &[0.0, 1.0])).unwrap();
    assert_eq!(tape.value(tape.bilinear_sample(two, &[(0.0, 0.5)]).unwrap()).data(), &[0.5]);

    let (r, c) = (1.3, 2.7);
    let out = tape.snapshot(tape.bilinear_sample(v, &[(r, c)]).unwrap());
    for ch in 0..2 {
        let f = |y: usize, x: usize| fmap.at(&[ch, y, x]) as f64;
        let (fr, fc) = (0.3, 0.7);
        let expect = (1.0 - fr) * (1.0 - fc) * f(1, 2) + (1.0 - fr) * fc * f(1, 3) + fr * (1.0 - fc) * f(2, 2) + fr * fc * f(2, 3);
        assert!((out.data()[ch] as f64 - expect).abs() < 1e-4);
    }
    let out = tape.snapshot(tape.bilinear_sample(v, &[(-3.0, 99.0)]).unwrap());
    assert_eq!(out.data()[0], fmap.at(&[0, 0, 4]));
    let w: f32 = bilinear_taps::<f32>(1.2, 0.4, 4, 5).iter().map(|&(_, w)| w).sum();
    assert!((w - 1.0).abs() < 1e-6);
}

fn focal_reference(pred: &[f64], target: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut pos = 0;
    for (&p, &y) in pred.iter().zip(target) {
        if y == 1.0 {
            pos += 1;
            total -= (1.0 - p).powi(2) * p.ln();
        } else {
            total -= (1.0 - y).powi(4) * p.powi(2) * (1.0 - p).ln();
        }
    }
    total / pos.max(1) as f64
}

#[test]
fn focal_examples() {
    let tape = Tape::<f64>::new();
    let mut target = Tensor::<f64>::zeros([1, 4, 4]);
    target.data_mut()[5] = 1.0;
    let pred = target.map(|v| if v == 1.0 { 1.0 - 1e-7 } else { 1e-7 });
    let p = tape.constant(pred).unwrap();
    assert!(tape.value(tape.focal_loss(p, &target).unwrap()).item() < 1e-5);

    let zero = Tensor::<f64>::zeros([1, 4, 4]);
    let p = tape.constant(Tensor::full([1, 4, 4], 1e-7)).unwrap();
    assert!(tape.value(tape.focal_loss(p, &zero).unwrap()).item() < 1e-4);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pred = Tensor::<f64>::from_fn([1, 4, 4], |_| rng.random_range(0.01..0.99));
    let target = Tensor::<f64>::from_fn([1, 4, 4], |i| if i % 7 == 0 { 1.0 } else { rng.random_range(0.0..0.9) });
    let p = tape.constant(pred.clone()).unwrap();
    let got = tape.value(tape.focal_loss(p, &target).unwrap()).item();
    assert!((got - focal_reference(pred.data(), target.data())).abs() < 1e-12);
}

#[test]
fn backward_examples() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::full([2, 3], 0.5), true).unwrap();
    let s = tape.sum(x).unwrap();
    assert!(tape.backward(s).unwrap().get(x).unwrap().data().iter().all(|&g| g == 1.0));

    let tape = Tape::new();
    let x = tape.leaf(t(&[2], &[1.0, 2.0]), true).unwrap();
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq).unwrap();
    assert_eq!(tape.backward(s).unwrap().get(x).unwrap().data(), &[2.0, 4.0]);
    assert!(tape.backward(sq).is_err());
}

#[test]
fn non_finite_output_is_rejected() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::full([2], f32::MAX)).unwrap();
    assert!(tape.add(x, x).is_err());
}

#[test]
fn backward_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tape = Tape::new();
        let x = tape.leaf(rand_tensor(&[3, 8, 8], &mut rng), true).unwrap();
        let w = tape.leaf(rand_tensor(&[4, 3, 3, 3], &mut rng), true).unwrap();
        let y = tape.conv2d(x, w, 2, Padding::same(3, 2)).unwrap();
        let y = tape.relu(y).unwrap();
        let y = tape.reshape(y, &[4, 16]).unwrap();
        let y = tape.softmax(y, 1).unwrap();
        let l = tape.mean(y).unwrap();
        let l = tape.mul(l, l).unwrap();
        let g = tape.backward(l).unwrap();
        (g.get(x).unwrap().clone(), g.get(w).unwrap().clone())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.0.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn gradients_accumulate_across_uses() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new([3], vec![1.0, -2.0, 3.0]).unwrap(), true).unwrap();
    let y = tape.add(x, x).unwrap();
    let y = tape.scale(y, 3.0).unwrap();
    let l = tape.sum(y).unwrap();
    assert_eq!(tape.backward(l).unwrap().get(x).unwrap().data(), &[6.0, 6.0, 6.0]);
}

#[test]
fn inference_tape_records_nothing() {
    let tape = Tape::inference();
    let x = tape.leaf(Tensor::full([2], 1.0), true).unwrap();
    let y = tape.relu(x).unwrap();
    assert!(!tape.requires_grad(y));
}

#[test]
fn masked_max_ignores_padding() {
    let tape = Tape::new();
    // 2 pillars × 3 slots × 1 channel; padded slots hold large values that must not win.
    let x = tape.constant(t(&[2, 3, 1], &[0.5, 0.2, 9.0, -1.0, 9.0, 9.0])).unwrap();
    let out = tape.snapshot(tape.masked_max(x, &[2, 1]).unwrap());
    assert_eq!(out.data(), &[0.5, -1.0]);
    assert!(tape.masked_max(x, &[0, 1]).is_err());
}

#[test]
fn scatter_conserves_and_rejects_duplicates() {
    let tape = Tape::new();
    let x = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
    let grid = tape.snapshot(tape.scatter_to_grid(x, &[3 * 8 + 7, 0], 8, 8).unwrap());
    assert_eq!(grid.sum(), 10.0);
    assert_eq!(grid.at(&[1, 3, 7]), 2.0);
    assert_eq!(grid.data().iter().filter(|&&v| v != 0.0).count(), 4);
    assert!(tape.scatter_to_grid(x, &[5, 5], 8, 8).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(data in prop::collection::vec(-50.0f32..50.0, 1..64), cols in 1usize..8) {
        let rows = data.len() / cols;
        prop_assume!(rows > 0);
        let x = Tensor::new([rows, cols], data[..rows * cols].to_vec()).unwrap();
        let tape = Tape::new();
        let v = tape.constant(x).unwrap();
        let out = tape.snapshot(tape.softmax(v, 1).unwrap());
        for r in 0..rows {
            let s: f32 = out.data()[r * cols..(r + 1) * cols].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn schedule_stays_in_bounds(total in 1usize..2000, frac in 0.0f64..1.0) {
        let s = OneCycleSchedule::new(total, 0.001);
        let step = ((total as f64) * frac) as usize;
        let m = s.momentum(step);
        let lr = s.lr(step);
        prop_assert!((0.85 - 1e-12..=0.95 + 1e-12).contains(&m));
        prop_assert!((0.0..=0.001 + 1e-15).contains(&lr));
    }

    #[test]
    fn masked_max_is_permutation_invariant(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 6;
        let mut rows: Vec<[f32; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let run = |rows: &[[f32; 3]]| {
            let tape = Tape::new();
            let x = tape.constant(Tensor::new([1, n, 3], rows.concat()).unwrap()).unwrap();
            tape.snapshot(tape.masked_max(x, &[n]).unwrap())
        };
        let a = run(&rows);
        rows.reverse();
        rows.swap(0, 2);
        prop_assert_eq!(a, run(&rows));
    }
}
