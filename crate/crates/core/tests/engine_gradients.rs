//! Finite-difference checks of every recorded backward rule on random
//! `1×8×8×C` inputs.

use adnet_core::engine::{
    grad_check, ActivationKind, BatchNormOptions, Conv2dOptions, Mode, Padding, PoolKind,
    RunningStats, Tape, Tensor, Var,
};
use adnet_core::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-3;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero by 0.1, for kinked activations.
fn off_kink(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// A random permutation of evenly spaced values, so no window maximum is
/// within a finite-difference step of a runner-up.
fn distinct(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.5).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(shape, vals).unwrap()
}

/// `Σ out ⊙ r` for a fixed random `r`, so every output element matters.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = tape.constant(random(tape.shape(out), &mut rng));
    let prod = tape.mul(out, r)?;
    tape.sum(prod)
}

fn check<F>(inputs: &[Tensor], f: F)
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let report = grad_check(inputs, STEP, TOL, f).unwrap();
    assert!(report.passed(), "relative errors {:?}", report.errors);
}

#[test]
fn conv2d_same_padding_all_dilations() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for dilation in [1, 2, 4] {
        let inputs = [random(&[1, 8, 8, 2], &mut rng), random(&[3, 3, 2, 3], &mut rng), random(&[3], &mut rng)];
        check(&inputs, |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), Conv2dOptions::same(dilation))?;
            project(t, y, 10)
        });
    }
}

#[test]
fn conv2d_valid_and_strided() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (stride, padding) in [(1, Padding::Valid), (2, Padding::Same), (2, Padding::Valid)] {
        let opts = Conv2dOptions {
            dilation: 1,
            stride,
            padding,
        };
        let inputs = [random(&[1, 8, 8, 2], &mut rng), random(&[3, 3, 2, 2], &mut rng)];
        check(&inputs, |t, v| {
            let y = t.conv2d(v[0], v[1], None, opts)?;
            project(t, y, 11)
        });
    }
}

#[test]
fn conv2d_pointwise_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = [random(&[1, 8, 8, 2], &mut rng), random(&[1, 1, 2, 4], &mut rng), random(&[4], &mut rng)];
    check(&inputs, |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), Conv2dOptions::same(1))?;
        project(t, y, 12)
    });
}

#[test]
fn conv_transpose2d() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inputs = [random(&[1, 8, 8, 2], &mut rng), random(&[2, 2, 3, 2], &mut rng), random(&[3], &mut rng)];
    check(&inputs, |t, v| {
        let y = t.conv_transpose2d(v[0], v[1], Some(v[2]))?;
        project(t, y, 13)
    });
}

#[test]
fn batch_norm_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let stats = RunningStats {
        mean: vec![0.2, -0.1],
        var: vec![0.5, 1.5],
    };
    for mode in [Mode::Train, Mode::Infer] {
        let inputs = [random(&[1, 8, 8, 2], &mut rng), random(&[2], &mut rng), random(&[2], &mut rng)];
        check(&inputs, |t, v| {
            let mut s = stats.clone();
            let y = t.batch_norm2d(v[0], v[1], v[2], &mut s, BatchNormOptions::new(mode))?;
            project(t, y, 14)
        });
    }
}

#[test]
fn activations() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for kind in [ActivationKind::Relu, ActivationKind::LeakyRelu(0.3), ActivationKind::Sigmoid] {
        let inputs = [off_kink(&[1, 8, 8, 2], &mut rng)];
        check(&inputs, |t, v| {
            let y = t.activation(v[0], kind)?;
            project(t, y, 15)
        });
    }
}

#[test]
fn windowed_pools() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for kind in [PoolKind::Max, PoolKind::Avg] {
        let inputs = [distinct(&[1, 8, 8, 2], &mut rng)];
        check(&inputs, |t, v| {
            let y = t.pool2d(v[0], kind, 3)?;
            project(t, y, 16)
        });
    }
}

#[test]
fn max_downsample_and_global_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inputs = [distinct(&[1, 8, 8, 2], &mut rng)];
    check(&inputs, |t, v| {
        let y = t.max_pool2x2(v[0])?;
        project(t, y, 17)
    });
    check(&inputs, |t, v| {
        let y = t.global_avg_pool(v[0])?;
        project(t, y, 18)
    });
}

#[test]
fn concat_add_mul() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let inputs = [random(&[1, 8, 8, 2], &mut rng), random(&[1, 8, 8, 2], &mut rng), random(&[1, 1, 1, 2], &mut rng)];
    check(&inputs, |t, v| {
        let y = t.concat_channels(v[0], v[1])?;
        project(t, y, 19)
    });
    check(&inputs, |t, v| {
        let s = t.add(v[0], v[1])?;
        let b = t.add(s, v[2])?;
        project(t, b, 20)
    });
    check(&inputs, |t, v| {
        let p = t.mul(v[0], v[1])?;
        let b = t.mul(p, v[2])?;
        project(t, b, 21)
    });
}

#[test]
fn upsample_and_weighted_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let inputs = [random(&[1, 2, 2, 2], &mut rng), random(&[1, 8, 8, 2], &mut rng)];
    check(&inputs, |t, v| {
        let u = t.upsample_nearest(v[0], 8, 8)?;
        let a = project(t, u, 22)?;
        let b = project(t, v[1], 23)?;
        t.weighted_sum(&[a, b], &[0.7, -1.3])
    });
}

#[test]
fn conv_bn_relu_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs = [random(&[2, 8, 8, 2], &mut rng), random(&[3, 3, 2, 3], &mut rng)];
    check(&inputs, |t, v| {
        let c = t.conv2d(v[0], v[1], None, Conv2dOptions::same(2))?;
        let g = t.constant(Tensor::ones(&[3]));
        let b = t.constant(Tensor::full(&[3], 0.5));
        let mut s = RunningStats::new(3);
        let n = t.batch_norm2d(c, g, b, &mut s, BatchNormOptions::new(Mode::Train))?;
        let r = t.activation(n, ActivationKind::Sigmoid)?;
        project(t, r, 24)
    });
}

fn bn_train(x: Tensor) -> Tensor {
    let c = x.shape()[3];
    let mut tape = Tape::no_grad();
    let xv = tape.constant(x);
    let g = tape.constant(Tensor::ones(&[c]));
    let b = tape.constant(Tensor::zeros(&[c]));
    let opts = BatchNormOptions {
        epsilon: 1e-9,
        ..BatchNormOptions::new(Mode::Train)
    };
    let y = tape.batch_norm2d(xv, g, b, &mut RunningStats::new(c), opts).unwrap();
    tape.value(y).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn batch_norm_standardizes_each_channel(seed in any::<u64>(), n in 4usize..7, scale in 0.5f64..20.0, shift in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[n, 3, 3, 2], &mut rng).map(|v| v * scale + shift);
        let y = bn_train(x);
        for ch in 0..2 {
            let vals: Vec<f64> = y.data().iter().skip(ch).step_by(2).copied().collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            prop_assert!(mean.abs() < 1e-6);
            prop_assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn conv_is_adjoint_to_its_input_gradient(seed in any::<u64>(), dilation in 1usize..4, cin in 1usize..4, cout in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[1, 7, 6, cin], &mut rng);
        let k = random(&[3, 3, cin, cout], &mut rng);
        let y = random(&[1, 7, 6, cout], &mut rng);
        let mut tape = Tape::new();
        let xv = tape.param(x.clone());
        let kv = tape.constant(k);
        let out = tape.conv2d(xv, kv, None, Conv2dOptions::same(dilation)).unwrap();
        let lhs = tape.value(out).dot(&y);
        let yv = tape.constant(y);
        let prod = tape.mul(out, yv).unwrap();
        let s = tape.sum(prod).unwrap();
        tape.backward(s).unwrap();
        let rhs = x.dot(&tape.grad(xv).unwrap());
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn repeated_max_pool_backward_is_identical(seed in any::<u64>(), levels in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(&[1, 6, 6, 2], |_| rng.random_range(0..levels) as f64);
        let run = || {
            let mut tape = Tape::new();
            let xv = tape.param(x.clone());
            let p = tape.max_pool3x3(xv).unwrap();
            let d = tape.max_pool2x2(p).unwrap();
            let s = tape.sum(d).unwrap();
            tape.backward(s).unwrap();
            tape.grad(xv).unwrap()
        };
        prop_assert_eq!(run(), run());
    }
}
