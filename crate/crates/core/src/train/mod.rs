//! Adam, reduce-on-plateau scheduling with early stopping, seeded splits
//! and the epoch loop with checkpointing.

mod adam;
mod schedule;
mod split;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use schedule::{Plateau, PlateauConfig};
pub use split::{epoch_order, split_indices, split_train_val};
pub(crate) use split::rng;
pub use trainer::{EpochRecord, StopReason, TermMeans, TrainSummary, Trainer, BEST_FILE, LAST_FILE, LOG_FILE};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Share of the pool held out for validation by [`split_train_val`].
    pub val_fraction: f64,
    /// Seeds the split and the per-epoch shuffles.
    pub seed: u64,
    pub lr: f64,
    pub adam: AdamConfig,
    pub plateau: PlateauConfig,
    /// Binarization threshold of the validation Jaccard index.
    pub threshold: f64,
    /// Stop once the epoch's mean training soft-Jaccard loss falls below this.
    pub target_train_jaccard: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            max_epochs: 200,
            val_fraction: 0.2,
            seed: 0,
            lr: 1e-3,
            adam: AdamConfig::default(),
            plateau: PlateauConfig::default(),
            threshold: crate::eval::THRESHOLD,
            target_train_jaccard: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Param("batch_size and max_epochs must be at least 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Param(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Param(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Param(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        self.adam.validate()?;
        self.plateau.validate()
    }
}
