//! Tensor values, differentiable operators and reverse-mode gradients.

pub mod checkpoint;
mod gemm;
pub mod gradcheck;
pub mod ops;
mod tape;
mod tensor;
#[cfg(test)]
pub(crate) mod testing;

pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::{
    sigmoid, ActivationKind, BatchNormOptions, Conv2dOptions, Mode, Padding, PoolKind, RunningStats,
};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
