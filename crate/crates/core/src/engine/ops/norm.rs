//! Per-channel batch normalization over `N×H×W`.

use crate::engine::tape::{Grads, Op, Tape, Var};
use crate::engine::tensor::Tensor;
use crate::error::{contract, Error, Result};

/// Whether normalization layers use batch statistics or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormOptions {
    pub mode: Mode,
    /// Weight of the old running value in the moving average.
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormOptions {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            momentum: 0.99,
            epsilon: 1e-3,
        }
    }
}

/// Running mean and (biased) variance, one entry per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

impl Tape {
    /// `out = gamma·(x − μ)/sqrt(σ² + ε) + beta`. In train mode μ, σ² are the
    /// batch statistics and `stats` is updated by exponential moving average;
    /// in infer mode `stats` supplies μ, σ² and is left untouched.
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        opts: BatchNormOptions,
    ) -> Result<Var> {
        let (n, h, w, c) = self.value(x).dims4()?;
        contract!(
            self.shape(gamma) == [c] && self.shape(beta) == [c],
            "batch_norm2d affine shapes {:?}/{:?} do not match {c} channels",
            self.shape(gamma),
            self.shape(beta)
        );
        contract!(
            stats.mean.len() == c && stats.var.len() == c,
            "batch_norm2d running statistics hold {} channels, input has {c}",
            stats.mean.len()
        );
        if !(opts.epsilon > 0.0) {
            return Err(Error::Param(format!(
                "batch_norm2d epsilon must be positive, got {}",
                opts.epsilon
            )));
        }
        let xs = self.value(x).data();
        let count = (n * h * w) as f64;
        let (mean, var) = match opts.mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                for px in xs.chunks_exact(c) {
                    mean.iter_mut().zip(px).for_each(|(m, v)| *m += v);
                }
                mean.iter_mut().for_each(|m| *m /= count);
                let mut var = vec![0.0; c];
                for px in xs.chunks_exact(c) {
                    for ((s, v), m) in var.iter_mut().zip(px).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= count);
                (mean, var)
            }
            Mode::Infer => (stats.mean.clone(), stats.var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + opts.epsilon).sqrt()).collect();
        let keep = self.is_recording()
            && (self.requires_grad(x) || self.requires_grad(gamma) || self.requires_grad(beta));
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = vec![0.0; xs.len()];
        let mut xhat = if keep { vec![0.0; xs.len()] } else { Vec::new() };
        for (p, (px, o)) in xs.chunks_exact(c).zip(out.chunks_exact_mut(c)).enumerate() {
            for (ch, (ov, &xv)) in o.iter_mut().zip(px).enumerate() {
                *ov = g[ch] * ((xv - mean[ch]) * inv_std[ch]) + b[ch];
            }
            if keep {
                let xh = &mut xhat[p * c..(p + 1) * c];
                for (ch, (hv, &xv)) in xh.iter_mut().zip(px).enumerate() {
                    *hv = (xv - mean[ch]) * inv_std[ch];
                }
            }
        }
        if opts.mode == Mode::Train {
            let m = opts.momentum;
            for ch in 0..c {
                stats.mean[ch] = m * stats.mean[ch] + (1.0 - m) * mean[ch];
                stats.var[ch] = m * stats.var[ch] + (1.0 - m) * var[ch];
            }
        }
        let value = Tensor::new(&[n, h, w, c], out)?;
        self.push_op(
            value,
            &[x.0, gamma.0, beta.0],
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
                batch_stats: opts.mode == Mode::Train,
            },
        )
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    x: usize,
    gamma: usize,
    beta: usize,
    xhat: &[f64],
    inv_std: &[f64],
    batch_stats: bool,
    gout: &[f64],
    values: &[Tensor],
    grads: &mut Grads,
) {
    let c = inv_std.len();
    let mut sum_g = vec![0.0; c];
    let mut sum_gx = vec![0.0; c];
    for (g, xh) in gout.chunks_exact(c).zip(xhat.chunks_exact(c)) {
        for ch in 0..c {
            sum_g[ch] += g[ch];
            sum_gx[ch] += g[ch] * xh[ch];
        }
    }
    if let Some(gg) = grads.slot(gamma) {
        gg.iter_mut().zip(&sum_gx).for_each(|(d, s)| *d += s);
    }
    if let Some(gb) = grads.slot(beta) {
        gb.iter_mut().zip(&sum_g).for_each(|(d, s)| *d += s);
    }
    let gam = values[gamma].data();
    if let Some(gx) = grads.slot(x) {
        let count = (gout.len() / c) as f64;
        for ((dx, g), xh) in gx
            .chunks_exact_mut(c)
            .zip(gout.chunks_exact(c))
            .zip(xhat.chunks_exact(c))
        {
            for ch in 0..c {
                let scale = gam[ch] * inv_std[ch];
                dx[ch] += if batch_stats {
                    scale * (g[ch] - sum_g[ch] / count - xh[ch] * sum_gx[ch] / count)
                } else {
                    scale * g[ch]
                };
            }
        }
    }
}
