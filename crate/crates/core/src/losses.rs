//! Segmentation losses and their combinations.
//!
//! Each loss has a plain value function over slices and a tape version that
//! records it for differentiation. Overlap losses are soft: predictions are
//! probabilities and nothing is thresholded.

use std::fmt;
use std::str::FromStr;

use crate::engine::{Tape, Var};
use crate::error::{contract, Error, Result};

/// Which region loss accompanies BCE on the final output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossVariant {
    /// BCE + focal Tversky.
    #[default]
    A,
    /// BCE + Dice.
    B,
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossVariant::A => "A",
            LossVariant::B => "B",
        })
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(LossVariant::A),
            "B" | "b" => Ok(LossVariant::B),
            other => Err(Error::Param(format!("loss variant must be A or B, got {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// Tversky weight on false negatives.
    pub alpha: f64,
    /// Tversky weight on false positives.
    pub beta: f64,
    /// Focal parameter; the Tversky complement is raised to `1/gamma`.
    pub gamma: f64,
    /// Smoothing added to ratio denominators and used as the BCE clamp.
    pub epsilon: f64,
    pub variant: LossVariant,
    /// Multiplier of each guided head's Jaccard loss.
    pub guided_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            beta: 0.3,
            gamma: 4.0 / 3.0,
            epsilon: 1e-6,
            variant: LossVariant::A,
            guided_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Param(format!(
                "tversky weights must be non-negative, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        check_gamma(self.gamma)?;
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::Param(format!("epsilon must lie in (0, 0.5), got {}", self.epsilon)));
        }
        if !(self.guided_weight >= 0.0 && self.guided_weight.is_finite()) {
            return Err(Error::Param(format!(
                "guided_weight must be non-negative, got {}",
                self.guided_weight
            )));
        }
        Ok(())
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (1.0..=3.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::Param(format!("gamma must lie in [1, 3], got {gamma}")))
    }
}

/// Sums `(Σ y·p, Σ y, Σ p)`.
fn overlap_sums(p: &[f64], y: &[f64]) -> (f64, f64, f64) {
    p.iter()
        .zip(y)
        .fold((0.0, 0.0, 0.0), |(s, sy, sp), (&p, &y)| (s + y * p, sy + y, sp + p))
}

/// Mean binary cross-entropy with `p` clamped to `[eps, 1 − eps]`.
pub fn bce_value(p: &[f64], y: &[f64], eps: f64) -> f64 {
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    total / p.len() as f64
}

/// `1 − Σyp / (Σ(y + p − yp) + eps)`.
pub fn jaccard_value(p: &[f64], y: &[f64], eps: f64) -> f64 {
    let (s, sy, sp) = overlap_sums(p, y);
    1.0 - s / (sy + sp - s + eps)
}

/// `1 − 2Σyp / (Σy² + Σp² + eps)`.
pub fn dice_value(p: &[f64], y: &[f64], eps: f64) -> f64 {
    let (s, q, r) = p
        .iter()
        .zip(y)
        .fold((0.0, 0.0, 0.0), |(s, q, r), (&p, &y)| (s + y * p, q + y * y, r + p * p));
    1.0 - 2.0 * s / (q + r + eps)
}

/// `Σyp / (Σyp + α·Σy(1−p) + β·Σ(1−y)p + eps)`.
pub fn tversky_value(p: &[f64], y: &[f64], alpha: f64, beta: f64, eps: f64) -> f64 {
    let (s, sy, sp) = overlap_sums(p, y);
    s / (s + alpha * (sy - s) + beta * (sp - s) + eps)
}

/// `(1 − TI)^(1/γ)`.
pub fn focal_tversky_value(p: &[f64], y: &[f64], cfg: &LossConfig) -> Result<f64> {
    check_gamma(cfg.gamma)?;
    let ti = tversky_value(p, y, cfg.alpha, cfg.beta, cfg.epsilon);
    Ok((1.0 - ti).max(0.0).powf(1.0 / cfg.gamma))
}

fn values<'a>(tape: &'a Tape, pred: Var, target: Var) -> Result<(&'a [f64], &'a [f64])> {
    contract!(
        tape.shape(pred) == tape.shape(target),
        "loss shape mismatch: prediction {:?}, target {:?}",
        tape.shape(pred),
        tape.shape(target)
    );
    Ok((tape.value(pred).data(), tape.value(target).data()))
}

pub fn bce_loss(tape: &mut Tape, pred: Var, target: Var, eps: f64) -> Result<Var> {
    tape.bce(pred, target, eps)
}

pub fn jaccard_loss(tape: &mut Tape, pred: Var, target: Var, eps: f64) -> Result<Var> {
    let (p, y) = values(tape, pred, target)?;
    let (s, sy, sp) = overlap_sums(p, y);
    let u = sy + sp - s + eps;
    let value = 1.0 - s / u;
    tape.overlap_loss(pred, target, value, -(u + s) / (u * u), s / (u * u), 0.0)
}

pub fn dice_loss(tape: &mut Tape, pred: Var, target: Var, eps: f64) -> Result<Var> {
    let (p, y) = values(tape, pred, target)?;
    let value = dice_value(p, y, eps);
    let (s, q, r) = p
        .iter()
        .zip(y)
        .fold((0.0, 0.0, 0.0), |(s, q, r), (&p, &y)| (s + y * p, q + y * y, r + p * p));
    let v = q + r + eps;
    tape.overlap_loss(pred, target, value, -2.0 / v, 0.0, 2.0 * s / (v * v))
}

/// Records `g(TI)` for the Tversky index TI, where `outer` returns the value
/// of `g` and its derivative at TI.
fn tversky_composed(
    tape: &mut Tape,
    pred: Var,
    target: Var,
    cfg: &LossConfig,
    outer: impl Fn(f64) -> (f64, f64),
) -> Result<Var> {
    let (p, y) = values(tape, pred, target)?;
    let (alpha, beta) = (cfg.alpha, cfg.beta);
    let (s, sy, sp) = overlap_sums(p, y);
    let d = s * (1.0 - alpha - beta) + alpha * sy + beta * sp + cfg.epsilon;
    let ti = s / d;
    // dTI/dp_i = y_i·(d − s(1 − α − β))/d² − sβ/d²
    let dt_target = (d - s * (1.0 - alpha - beta)) / (d * d);
    let dt_const = -s * beta / (d * d);
    let (value, slope) = outer(ti);
    tape.overlap_loss(pred, target, value, slope * dt_target, slope * dt_const, 0.0)
}

/// Differentiable Tversky index (a similarity, not a loss).
pub fn tversky_index(tape: &mut Tape, pred: Var, target: Var, alpha: f64, beta: f64, eps: f64) -> Result<Var> {
    let cfg = LossConfig {
        alpha,
        beta,
        epsilon: eps,
        ..LossConfig::default()
    };
    tversky_composed(tape, pred, target, &cfg, |ti| (ti, 1.0))
}

pub fn focal_tversky_loss(tape: &mut Tape, pred: Var, target: Var, cfg: &LossConfig) -> Result<Var> {
    check_gamma(cfg.gamma)?;
    let e = 1.0 / cfg.gamma;
    tversky_composed(tape, pred, target, cfg, |ti| {
        let c = (1.0 - ti).max(0.0);
        let slope = if c > 0.0 { -e * c.powf(e - 1.0) } else { 0.0 };
        (c.powf(e), slope)
    })
}

/// Per-term values of one [`total_loss`] evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub bce: f64,
    /// Focal Tversky (variant A) or Dice (variant B) on the final output.
    pub region: f64,
    /// Jaccard loss of each guided head, deepest first, before weighting.
    pub heads: Vec<f64>,
    pub total: f64,
}

pub struct TotalLoss {
    pub loss: Var,
    pub breakdown: LossBreakdown,
}

/// BCE plus the variant's region loss on `output`, plus the weighted
/// Jaccard loss of every guided head. `guided` is empty or holds all four
/// heads.
pub fn total_loss(tape: &mut Tape, output: Var, guided: &[Var], target: Var, cfg: &LossConfig) -> Result<TotalLoss> {
    cfg.validate()?;
    contract!(
        guided.is_empty() || guided.len() == 4,
        "expected 0 or 4 guided outputs, got {}",
        guided.len()
    );
    let bce = bce_loss(tape, output, target, cfg.epsilon)?;
    let region = match cfg.variant {
        LossVariant::A => focal_tversky_loss(tape, output, target, cfg)?,
        LossVariant::B => dice_loss(tape, output, target, cfg.epsilon)?,
    };
    let mut terms = vec![bce, region];
    let mut weights = vec![1.0, 1.0];
    for &g in guided {
        terms.push(jaccard_loss(tape, g, target, cfg.epsilon)?);
        weights.push(cfg.guided_weight);
    }
    let loss = tape.weighted_sum(&terms, &weights)?;
    let item = |v: Var| tape.value(v).item();
    let breakdown = LossBreakdown {
        bce: item(bce),
        region: item(region),
        heads: terms[2..].iter().map(|&v| item(v)).collect(),
        total: item(loss),
    };
    Ok(TotalLoss { loss, breakdown })
}
