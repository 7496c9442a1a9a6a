//! Differentiable operators. Forward passes are methods on [`Tape`]; each
//! submodule also provides the backward rule for the ops it records.
//!
//! [`Tape`]: crate::engine::Tape

mod activation;
mod conv;
mod direct;
mod loss;
mod norm;
mod pool;
mod shape;

pub use activation::{sigmoid, ActivationKind};
pub use conv::{Conv2dOptions, Padding};
pub use norm::{BatchNormOptions, Mode, RunningStats};
pub use pool::PoolKind;

pub(crate) use conv::ConvGeometry;

use super::tape::{Grads, Op};
use super::tensor::Tensor;

/// Dispatches the backward rule of `op`, whose output node is `out`.
pub(crate) fn backward(op: &Op, out: usize, gout: &[f64], values: &[Tensor], grads: &mut Grads) {
    match op {
        Op::Conv2d {
            x,
            kernel,
            bias,
            geom,
        } => conv::conv2d_backward(*x, *kernel, *bias, geom, gout, values, grads),
        Op::ConvTranspose2d { x, kernel, bias } => {
            conv::conv_transpose2d_backward(*x, *kernel, *bias, gout, values, grads)
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats,
        } => norm::backward(
            *x,
            *gamma,
            *beta,
            xhat,
            inv_std,
            *batch_stats,
            gout,
            values,
            grads,
        ),
        Op::Activation { x, kind } => {
            activation::backward(*x, *kind, &values[out], gout, values, grads)
        }
        Op::Pool {
            x,
            kind,
            window,
            argmax,
        } => pool::pool_backward(*x, *kind, *window, argmax, gout, values, grads),
        Op::MaxDown2 { x, argmax } => pool::max_down_backward(*x, argmax, gout, grads),
        Op::GlobalAvgPool { x } => pool::gap_backward(*x, gout, values, grads),
        Op::Concat { a, b } => shape::concat_backward(*a, *b, gout, values, grads),
        Op::Add { a, b, broadcast } => shape::add_backward(*a, *b, *broadcast, gout, values, grads),
        Op::Mul { a, b, broadcast } => shape::mul_backward(*a, *b, *broadcast, gout, values, grads),
        Op::Upsample { x, fy, fx } => shape::upsample_backward(*x, *fy, *fx, gout, values, grads),
        Op::Sum { x } => shape::sum_backward(*x, gout, grads),
        Op::WeightedSum { terms, weights } => {
            shape::weighted_sum_backward(terms, weights, gout, grads)
        }
        Op::OverlapLoss {
            pred,
            target,
            c_target,
            c_const,
            c_square,
        } => loss::overlap_backward(
            *pred,
            *target,
            (*c_target, *c_const, *c_square),
            gout,
            values,
            grads,
        ),
        Op::Bce { pred, target, eps } => loss::bce_backward(*pred, *target, *eps, gout, values, grads),
    }
}
