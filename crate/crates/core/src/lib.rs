//! Segmentation engine built around a dilated-convolution residual
//! encoder/decoder whose skip connections are refined by an attention block
//! and whose decoder stages are individually supervised.
//!
//! * [`engine`]: tensors, operators, reverse-mode gradients, checkpoints
//! * [`model`]: network assembly and parameter bookkeeping
//! * [`losses`]: BCE, Dice, Jaccard and (focal) Tversky losses and their totals
//! * [`train`]: Adam, plateau scheduling, early stopping, the epoch loop
//! * [`eval`]: confusion-count metrics, ROC/AUC, Wilcoxon signed-rank test
//! * [`data`]: PNG datasets, nearest-neighbour resizing, synthetic lesions, config files

pub mod engine;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod train;

pub use engine::{Tape, Tensor, Var};
pub use error::{Error, Result};
