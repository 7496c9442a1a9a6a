use adnet_core::engine::{grad_check, Mode, Tape, Tensor, Var};
use adnet_core::losses::{
    bce_loss, dice_loss, dice_value, focal_tversky_loss, jaccard_loss, jaccard_value, total_loss,
    tversky_index, tversky_value, LossConfig, LossVariant,
};
use adnet_core::model::{AdNet, ModelConfig};
use adnet_core::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;

fn t(v: &[f64]) -> Tensor {
    Tensor::new(&[v.len()], v.to_vec()).unwrap()
}

fn eval(p: &[f64], y: &[f64], f: impl FnOnce(&mut Tape, Var, Var) -> Result<Var>) -> f64 {
    let mut tape = Tape::no_grad();
    let pv = tape.constant(t(p));
    let yv = tape.constant(t(y));
    let l = f(&mut tape, pv, yv).unwrap();
    tape.value(l).item()
}

fn random_probs(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.02..0.98)).collect()
}

fn random_mask(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect()
}

// Oracles written as explicit pixel counts, independent of the library's
// summation helpers.

fn oracle_jaccard_similarity(p: &[f64], y: &[f64]) -> f64 {
    let mut inter = 0.0;
    let mut union = 0.0;
    for i in 0..p.len() {
        inter += p[i] * y[i];
        union += p[i] + y[i] - p[i] * y[i];
    }
    inter / (union + EPS)
}

fn oracle_bce(p: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..p.len() {
        let q = p[i].max(EPS).min(1.0 - EPS);
        acc -= if y[i] == 1.0 { q.ln() } else { (1.0 - q).ln() };
    }
    acc / p.len() as f64
}

fn oracle_tversky(p: &[f64], y: &[f64], alpha: f64, beta: f64) -> f64 {
    let (mut tp, mut fn_, mut fp) = (0.0, 0.0, 0.0);
    for i in 0..p.len() {
        tp += y[i] * p[i];
        fn_ += y[i] * (1.0 - p[i]);
        fp += (1.0 - y[i]) * p[i];
    }
    tp / (tp + alpha * fn_ + beta * fp + EPS)
}

#[test]
fn hand_examples() {
    let bce = eval(&[0.9, 0.2], &[1.0, 0.0], |t, p, y| bce_loss(t, p, y, EPS));
    assert!((bce - 0.164_252_033_486_018_1).abs() < 1e-9, "{bce}");

    let ones = vec![1.0; 64];
    let half = vec![0.5; 64];
    let j = eval(&half, &ones, |t, p, y| jaccard_loss(t, p, y, EPS));
    assert!((j - 0.5).abs() < 1e-7, "{j}");
    let d = eval(&half, &ones, |t, p, y| dice_loss(t, p, y, EPS));
    assert!((d - 0.2).abs() < 1e-7, "{d}");

    let p = [1.0, 0.0, 1.0, 0.0];
    let y = [1.0, 1.0, 0.0, 0.0];
    let ti = eval(&p, &y, |t, p, y| tversky_index(t, p, y, 0.7, 0.3, 1e-12));
    assert!((ti - 0.5).abs() < 1e-9, "{ti}");
    let cfg = LossConfig {
        epsilon: 1e-12,
        ..LossConfig::default()
    };
    let ftl = eval(&p, &y, |t, p, y| focal_tversky_loss(t, p, y, &cfg));
    assert!((ftl - 0.594_603_557_501_360_5).abs() < 1e-9, "{ftl}");
}

#[test]
fn perfect_and_disjoint_predictions() {
    let y: Vec<f64> = (0..64).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
    let inv: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
    assert!(jaccard_value(&y, &y, EPS) < 10.0 * EPS);
    assert!(dice_value(&y, &y, EPS) < 10.0 * EPS);
    assert!((jaccard_value(&inv, &y, EPS) - 1.0).abs() < 10.0 * EPS);
    assert!((dice_value(&inv, &y, EPS) - 1.0).abs() < 10.0 * EPS);
}

#[test]
fn tversky_special_cases_on_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let n = rng.random_range(4..40);
        let p = random_probs(n, &mut rng);
        let y = random_mask(n, &mut rng);
        let ti = tversky_value(&p, &y, 1.0, 1.0, EPS);
        assert!((ti - oracle_jaccard_similarity(&p, &y)).abs() < 1e-12);
        assert!((ti - (1.0 - jaccard_value(&p, &y, EPS))).abs() < 1e-12);

        let cfg = LossConfig {
            gamma: 1.0,
            ..LossConfig::default()
        };
        let ftl = eval(&p, &y, |t, a, b| focal_tversky_loss(t, a, b, &cfg));
        let ti = tversky_value(&p, &y, cfg.alpha, cfg.beta, EPS);
        assert!((ftl - (1.0 - ti)).abs() < 1e-12);
        assert!((ti - oracle_tversky(&p, &y, cfg.alpha, cfg.beta)).abs() < 1e-12);

        let (mut s, mut sy, mut sp) = (0.0, 0.0, 0.0);
        for i in 0..n {
            s += p[i] * y[i];
            sy += y[i];
            sp += p[i];
        }
        let linear_dice = 2.0 * s / (sy + sp + 2.0 * EPS);
        assert!((tversky_value(&p, &y, 0.5, 0.5, EPS) - linear_dice).abs() < 1e-12);
    }
}

#[test]
fn loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = Tensor::new(&[1, 8, 8, 1], random_probs(64, &mut rng)).unwrap();
    let y = Tensor::new(&[1, 8, 8, 1], random_mask(64, &mut rng)).unwrap();
    type LossFn = fn(&mut Tape, Var, Var) -> Result<Var>;
    let cases: [(&str, LossFn); 6] = [
        ("bce", |t, p, y| bce_loss(t, p, y, EPS)),
        ("jaccard", |t, p, y| jaccard_loss(t, p, y, EPS)),
        ("dice", |t, p, y| dice_loss(t, p, y, EPS)),
        ("tversky", |t, p, y| tversky_index(t, p, y, 0.7, 0.3, EPS)),
        ("focal_tversky", |t, p, y| focal_tversky_loss(t, p, y, &LossConfig::default())),
        ("focal_tversky_g3", |t, p, y| {
            let cfg = LossConfig {
                gamma: 3.0,
                ..LossConfig::default()
            };
            focal_tversky_loss(t, p, y, &cfg)
        }),
    ];
    for (name, f) in cases {
        let report = grad_check(std::slice::from_ref(&p), 1e-5, 1e-4, |tape, v| {
            let yv = tape.constant(y.clone());
            f(tape, v[0], yv)
        })
        .unwrap();
        assert!(report.passed(), "{name}: {:?}", report.errors);
    }
}

struct Case {
    output: Tensor,
    heads: Vec<Tensor>,
    target: Tensor,
}

fn random_case(seed: u64, heads: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [1, 4, 4, 1];
    let mut probs = || Tensor::new(&shape, random_probs(16, &mut rng)).unwrap();
    let output = probs();
    let heads = (0..heads).map(|_| probs()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    Case {
        output,
        heads,
        target: Tensor::new(&shape, random_mask(16, &mut rng)).unwrap(),
    }
}

fn run_total(case: &Case, cfg: &LossConfig) -> adnet_core::losses::LossBreakdown {
    let mut tape = Tape::no_grad();
    let o = tape.constant(case.output.clone());
    let g: Vec<Var> = case.heads.iter().map(|h| tape.constant(h.clone())).collect();
    let y = tape.constant(case.target.clone());
    total_loss(&mut tape, o, &g, y, cfg).unwrap().breakdown
}

#[test]
fn total_matches_term_by_term_oracle() {
    for variant in [LossVariant::A, LossVariant::B] {
        let cfg = LossConfig {
            variant,
            guided_weight: 0.75,
            ..LossConfig::default()
        };
        let case = random_case(3, 4);
        let (p, y) = (case.output.data(), case.target.data());
        let region = match variant {
            LossVariant::A => (1.0 - oracle_tversky(p, y, 0.7, 0.3)).powf(0.75),
            LossVariant::B => {
                let (mut s, mut q, mut r) = (0.0, 0.0, 0.0);
                for i in 0..p.len() {
                    s += p[i] * y[i];
                    q += y[i] * y[i];
                    r += p[i] * p[i];
                }
                1.0 - 2.0 * s / (q + r + EPS)
            }
        };
        let heads: Vec<f64> = case
            .heads
            .iter()
            .map(|h| 1.0 - oracle_jaccard_similarity(h.data(), y))
            .collect();
        let expected = oracle_bce(p, y) + region + 0.75 * heads.iter().sum::<f64>();
        let got = run_total(&case, &cfg);
        assert!((got.total - expected).abs() < 1e-12, "{variant}: {} vs {expected}", got.total);
        assert!((got.region - region).abs() < 1e-12);
        for (a, b) in got.heads.iter().zip(&heads) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn unguided_total_is_the_final_output_pair_only() {
    let case = random_case(4, 0);
    let got = run_total(&case, &LossConfig::default());
    assert!(got.heads.is_empty());
    assert_eq!(got.total, got.bce + got.region);
}

#[test]
fn dropping_a_head_subtracts_its_jaccard_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut case = random_case(5, 4);
    let cfg = LossConfig::default();
    let full = run_total(&case, &cfg);
    let k = rng.random_range(0..4);
    let dropped = full.heads[k];
    let three: f64 = full.heads.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, v)| v).sum();
    assert!((full.total - (full.bce + full.region + three) - dropped).abs() < 1e-12);
    case.heads.truncate(3);
    let mut tape = Tape::no_grad();
    let o = tape.constant(case.output.clone());
    let g: Vec<Var> = case.heads.iter().map(|h| tape.constant(h.clone())).collect();
    let y = tape.constant(case.target.clone());
    assert!(total_loss(&mut tape, o, &g, y, &cfg).is_err(), "three heads must be rejected");
}

#[test]
fn perfect_prediction_on_every_head_is_near_zero() {
    let y: Vec<f64> = (0..256).map(|i| if (i / 16) % 2 == 0 && i % 16 < 8 { 1.0 } else { 0.0 }).collect();
    let target = Tensor::new(&[1, 16, 16, 1], y).unwrap();
    let case = Case {
        output: target.clone(),
        heads: vec![target.clone(); 4],
        target,
    };
    for variant in [LossVariant::A, LossVariant::B] {
        let cfg = LossConfig {
            variant,
            ..LossConfig::default()
        };
        let got = run_total(&case, &cfg);
        assert!(got.total >= 0.0 && got.total <= 5.0 * EPS, "{variant}: {}", got.total);
    }
}

#[test]
fn total_loss_gradient_reaches_every_output() {
    let case = random_case(6, 4);
    let mut inputs = vec![case.output.clone()];
    inputs.extend(case.heads.iter().cloned());
    for variant in [LossVariant::A, LossVariant::B] {
        let cfg = LossConfig {
            variant,
            ..LossConfig::default()
        };
        let report = grad_check(&inputs, 1e-5, 1e-4, |tape, v| {
            let y = tape.constant(case.target.clone());
            Ok(total_loss(tape, v[0], &v[1..], y, &cfg)?.loss)
        })
        .unwrap();
        assert!(report.passed(), "{variant}: {:?}", report.errors);
    }
}

/// Conv biases feeding a train-mode normalization: their gradient is zero
/// whatever the loss.
fn normalized_bias(name: &str) -> bool {
    [
        ".conv_a.bias",
        ".conv_res.bias",
        ".conv_in.bias",
        ".conv_fuse.bias",
        ".conv_gate.bias",
    ]
    .iter()
    .any(|s| name.ends_with(s))
}

#[test]
fn every_parameter_receives_gradient() {
    let cfg = ModelConfig {
        input_size: 64,
        width_multiplier: 0.25,
        seed: 3,
        ..ModelConfig::default()
    };
    let mut net = AdNet::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::from_fn(&[2, 64, 64, 3], |_| rng.random_range(0.0..1.0));
    let y = Tensor::from_fn(&[2, 64, 64, 1], |_| if rng.random_bool(0.4) { 1.0 } else { 0.0 });
    let mut tape = Tape::new();
    let vars = net.params().bind(&mut tape, true);
    let xv = tape.constant(x);
    let yv = tape.constant(y);
    let out = net.forward(&mut tape, &vars, xv, Mode::Train).unwrap();
    let loss = total_loss(&mut tape, out.output, &out.guided, yv, &LossConfig::default()).unwrap();
    tape.backward(loss.loss).unwrap();
    for (name, v) in net.params().names().iter().zip(&vars) {
        let g = tape.grad(*v).unwrap();
        let peak = g.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if normalized_bias(name) {
            assert!(peak < 1e-9, "{name} should be masked by normalization, peak {peak}");
        } else {
            assert!(peak > 1e-12, "{name} receives no gradient");
        }
    }
}

fn mask_with_foreground(bits: &[bool]) -> Vec<f64> {
    let mut y: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    y[..8].fill(1.0);
    y
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_are_non_negative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_probs(32, &mut rng);
        let y = random_mask(32, &mut rng);
        let cfg = LossConfig::default();
        prop_assert!(eval(&p, &y, |t, a, b| bce_loss(t, a, b, EPS)) >= 0.0);
        prop_assert!(jaccard_value(&p, &y, EPS) >= 0.0);
        prop_assert!(dice_value(&p, &y, EPS) >= 0.0);
        prop_assert!(eval(&p, &y, |t, a, b| focal_tversky_loss(t, a, b, &cfg)) >= 0.0);
    }

    #[test]
    fn exact_binary_prediction_is_near_zero(bits in prop::collection::vec(any::<bool>(), 64)) {
        let y = mask_with_foreground(&bits);
        let cfg = LossConfig::default();
        prop_assert!(eval(&y, &y, |t, a, b| bce_loss(t, a, b, EPS)) < 10.0 * EPS);
        prop_assert!(jaccard_value(&y, &y, EPS) < 10.0 * EPS);
        prop_assert!(dice_value(&y, &y, EPS) < 10.0 * EPS);
        prop_assert!(eval(&y, &y, |t, a, b| focal_tversky_loss(t, a, b, &cfg)) < 10.0 * EPS);
    }

    #[test]
    fn imperfect_prediction_is_not_near_zero(bits in prop::collection::vec(any::<bool>(), 64), flip in 0usize..64) {
        let y = mask_with_foreground(&bits);
        let mut p = y.clone();
        p[flip] = 1.0 - p[flip];
        prop_assert!(jaccard_value(&p, &y, EPS) > 10.0 * EPS);
        prop_assert!(dice_value(&p, &y, EPS) > 10.0 * EPS);
    }

    #[test]
    fn moving_toward_target_never_increases_overlap_losses(seed in any::<u64>(), step in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_probs(32, &mut rng);
        let y = random_mask(32, &mut rng);
        let moved: Vec<f64> = p.iter().zip(&y).map(|(&pi, &yi)| {
            let r: f64 = rng.random_range(0.0..1.0);
            pi + step * r * (yi - pi)
        }).collect();
        prop_assert!(jaccard_value(&moved, &y, EPS) <= jaccard_value(&p, &y, EPS) + 1e-15);
        prop_assert!(dice_value(&moved, &y, EPS) <= dice_value(&p, &y, EPS) + 1e-15);
    }
}
