use crate::engine::tape::{Grads, Op, Tape, Var};
use crate::engine::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActivationKind {
    Relu,
    /// Negative-side slope in (0, 1).
    LeakyRelu(f64),
    Sigmoid,
}

impl ActivationKind {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::LeakyRelu(_) => "leaky_relu",
            ActivationKind::Sigmoid => "sigmoid",
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::LeakyRelu(slope) => {
                if x < 0.0 {
                    slope * x
                } else {
                    x
                }
            }
            ActivationKind::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative from input `x` and output `y`. Kinks take the right branch.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if x < 0.0 {
                    0.0
                } else {
                    1.0
                }
            }
            ActivationKind::LeakyRelu(slope) => {
                if x < 0.0 {
                    slope
                } else {
                    1.0
                }
            }
            ActivationKind::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn activation(&mut self, x: Var, kind: ActivationKind) -> Result<Var> {
        if let ActivationKind::LeakyRelu(slope) = kind {
            if !(slope > 0.0 && slope < 1.0) {
                return Err(Error::Param(format!(
                    "leaky_relu slope must lie in (0, 1), got {slope}"
                )));
            }
        }
        let value = self.value(x).map(|v| kind.apply(v));
        self.push_op(value, &[x.0], Op::Activation { x: x.0, kind })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, ActivationKind::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, ActivationKind::Sigmoid)
    }
}

pub(crate) fn backward(
    x: usize,
    kind: ActivationKind,
    out: &Tensor,
    gout: &[f64],
    values: &[Tensor],
    grads: &mut Grads,
) {
    if let Some(gx) = grads.slot(x) {
        let xs = values[x].data();
        for (((g, &xi), &yi), &go) in gx.iter_mut().zip(xs).zip(out.data()).zip(gout) {
            *g += go * kind.derivative(xi, yi);
        }
    }
}
