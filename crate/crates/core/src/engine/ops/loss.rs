//! Scalar loss primitives recorded on the tape.
//!
//! Overlap losses (Jaccard, Dice, Tversky) are functions of a handful of
//! sums over the prediction `p` and target `y`; their gradient w.r.t. each
//! `p_i` is therefore `c_target·y_i + c_const + c_square·2p_i`, so a single
//! recorded op with three coefficients covers all of them.

use crate::engine::tape::{Grads, Op, Tape, Var};
use crate::engine::tensor::Tensor;
use crate::error::{contract, Result};

impl Tape {
    /// Records a scalar overlap loss with precomputed `value` and partials.
    pub(crate) fn overlap_loss(
        &mut self,
        pred: Var,
        target: Var,
        value: f64,
        c_target: f64,
        c_const: f64,
        c_square: f64,
    ) -> Result<Var> {
        same_shape(self, pred, target)?;
        self.push_op(
            Tensor::scalar(value),
            &[pred.0],
            Op::OverlapLoss {
                pred: pred.0,
                target: target.0,
                c_target,
                c_const,
                c_square,
            },
        )
    }

    /// Mean binary cross-entropy with predictions clamped to `[eps, 1 − eps]`.
    pub(crate) fn bce(&mut self, pred: Var, target: Var, eps: f64) -> Result<Var> {
        same_shape(self, pred, target)?;
        let p = self.value(pred).data();
        let y = self.value(target).data();
        let total: f64 = p
            .iter()
            .zip(y)
            .map(|(&p, &y)| {
                let p = p.clamp(eps, 1.0 - eps);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        let value = Tensor::scalar(total / p.len() as f64);
        self.push_op(
            value,
            &[pred.0],
            Op::Bce {
                pred: pred.0,
                target: target.0,
                eps,
            },
        )
    }
}

fn same_shape(tape: &Tape, pred: Var, target: Var) -> Result<()> {
    contract!(
        tape.shape(pred) == tape.shape(target),
        "loss shape mismatch: prediction {:?}, target {:?}",
        tape.shape(pred),
        tape.shape(target)
    );
    Ok(())
}

pub(crate) fn overlap_backward(
    pred: usize,
    target: usize,
    coeffs: (f64, f64, f64),
    gout: &[f64],
    values: &[Tensor],
    grads: &mut Grads,
) {
    let (c_target, c_const, c_square) = coeffs;
    let p = values[pred].data();
    let y = values[target].data();
    if let Some(gp) = grads.slot(pred) {
        for ((d, &pi), &yi) in gp.iter_mut().zip(p).zip(y) {
            *d += gout[0] * (c_target * yi + c_const + 2.0 * c_square * pi);
        }
    }
}

pub(crate) fn bce_backward(
    pred: usize,
    target: usize,
    eps: f64,
    gout: &[f64],
    values: &[Tensor],
    grads: &mut Grads,
) {
    let p = values[pred].data();
    let y = values[target].data();
    let scale = gout[0] / p.len() as f64;
    if let Some(gp) = grads.slot(pred) {
        for ((d, &pi), &yi) in gp.iter_mut().zip(p).zip(y) {
            // The clamp is flat outside [eps, 1 − eps].
            if pi > eps && pi < 1.0 - eps {
                *d += scale * (-yi / pi + (1.0 - yi) / (1.0 - pi));
            }
        }
    }
}
