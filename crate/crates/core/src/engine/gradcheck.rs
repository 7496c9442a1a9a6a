//! Central finite-difference verification of recorded backward rules.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Per-input relative errors `‖g_ad − g_fd‖∞ / (‖g_fd‖∞ + 1e-12)`.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub errors: Vec<f64>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.errors.iter().all(|&e| e < self.tolerance)
    }
}

/// Compares the tape gradient of the scalar `f(inputs)` with central
/// differences of step `step` for every element of every input.
///
/// `f` is re-evaluated on gradient-free tapes for the difference quotients,
/// so it must be a deterministic function of its inputs. Callers should
/// choose probe points further than `step` from activation kinks.
pub fn grad_check<F>(inputs: &[Tensor], step: f64, tolerance: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    if !tape.value(loss).is_scalar() {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            tape.shape(loss)
        )));
    }
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    drop(tape);

    let mut eval = |probe: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::no_grad();
        let vars: Vec<Var> = probe.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut probe: Vec<Tensor> = inputs.to_vec();
    let mut errors = Vec::with_capacity(inputs.len());
    for (k, grad) in analytic.iter().enumerate() {
        let mut worst_diff: f64 = 0.0;
        let mut fd_norm: f64 = 0.0;
        for idx in 0..inputs[k].numel() {
            let orig = inputs[k].data()[idx];
            probe[k].data_mut()[idx] = orig + step;
            let up = eval(&probe)?;
            probe[k].data_mut()[idx] = orig - step;
            let down = eval(&probe)?;
            probe[k].data_mut()[idx] = orig;
            let fd = (up - down) / (2.0 * step);
            worst_diff = worst_diff.max((grad.data()[idx] - fd).abs());
            fd_norm = fd_norm.max(fd.abs());
        }
        errors.push(worst_diff / (fd_norm + 1e-12));
    }
    Ok(GradCheckReport { errors, tolerance })
}
