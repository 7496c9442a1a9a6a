use crate::engine::checkpoint::Checkpoint;
use crate::engine::Tensor;
use crate::error::{Error, Result};

use super::adam::scalar_entry;

/// Reduce-on-plateau and early-stopping constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlateauConfig {
    /// Multiplier applied to the learning rate after `patience` stagnant epochs.
    pub factor: f64,
    pub patience: usize,
    /// A value counts as an improvement only if it beats the best by more than this.
    pub min_delta: f64,
    pub min_lr: f64,
    /// Consecutive stagnant epochs that end training.
    pub es_patience: usize,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.25,
            patience: 4,
            min_delta: 1e-6,
            min_lr: 1e-6,
            es_patience: 10,
        }
    }
}

impl PlateauConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::Param(format!("plateau factor must lie in (0, 1), got {}", self.factor)));
        }
        if self.patience == 0 || self.es_patience == 0 {
            return Err(Error::Param("patience values must be at least 1".into()));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::Param(format!("min_delta must be non-negative, got {}", self.min_delta)));
        }
        if !(self.min_lr > 0.0) {
            return Err(Error::Param(format!("min_lr must be positive, got {}", self.min_lr)));
        }
        Ok(())
    }
}

/// Tracks the monitored value across epochs. The learning-rate counter
/// restarts after every reduction; the early-stop counter only restarts on
/// improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    cfg: PlateauConfig,
    best: f64,
    stagnant: usize,
    es_stagnant: usize,
    stop: bool,
}

impl Plateau {
    pub fn new(cfg: PlateauConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            best: f64::INFINITY,
            stagnant: 0,
            es_stagnant: 0,
            stop: false,
        })
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn stagnant_epochs(&self) -> usize {
        self.stagnant
    }

    pub fn should_stop(&self) -> bool {
        self.stop
    }

    /// Records one epoch's monitored value and returns the learning rate
    /// for the next epoch.
    pub fn observe(&mut self, value: f64, lr: f64) -> f64 {
        if value < self.best - self.cfg.min_delta {
            self.best = value;
            self.stagnant = 0;
            self.es_stagnant = 0;
            return lr;
        }
        self.stagnant += 1;
        self.es_stagnant += 1;
        if self.es_stagnant >= self.cfg.es_patience {
            self.stop = true;
        }
        if self.stagnant >= self.cfg.patience {
            self.stagnant = 0;
            return (lr * self.cfg.factor).max(self.cfg.min_lr);
        }
        lr
    }

    pub fn save(&self, ck: &mut Checkpoint) {
        ck.push("schedule.best", Tensor::scalar(self.best));
        ck.push("schedule.stagnant", Tensor::scalar(self.stagnant as f64));
        ck.push("schedule.es_stagnant", Tensor::scalar(self.es_stagnant as f64));
        ck.push("schedule.stop", Tensor::scalar(self.stop as u8 as f64));
    }

    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        self.best = scalar_entry(ck, "schedule.best")?;
        self.stagnant = scalar_entry(ck, "schedule.stagnant")? as usize;
        self.es_stagnant = scalar_entry(ck, "schedule.es_stagnant")? as usize;
        self.stop = scalar_entry(ck, "schedule.stop")? != 0.0;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decreasing_values_keep_the_rate() {
        let mut p = Plateau::new(PlateauConfig::default()).unwrap();
        let mut lr = 1e-3;
        for i in 0..30 {
            lr = p.observe(1.0 - i as f64 * 0.01, lr);
        }
        assert_eq!(lr, 1e-3);
        assert!(!p.should_stop());
    }

    #[test]
    fn counters_stay_bounded() {
        let cfg = PlateauConfig::default();
        let mut p = Plateau::new(cfg).unwrap();
        let mut lr = 1e-3;
        for _ in 0..40 {
            lr = p.observe(1.0, lr);
            assert!(p.stagnant_epochs() <= cfg.patience.max(cfg.es_patience));
        }
        assert_eq!(lr, cfg.min_lr);
    }

    #[test]
    fn improvement_must_exceed_delta() {
        let mut p = Plateau::new(PlateauConfig::default()).unwrap();
        p.observe(1.0, 1e-3);
        p.observe(1.0 - 5e-7, 1e-3);
        assert_eq!(p.stagnant_epochs(), 1);
        assert_eq!(p.best(), 1.0);
    }

    #[test]
    fn invalid_factor() {
        let cfg = PlateauConfig {
            factor: 1.0,
            ..PlateauConfig::default()
        };
        assert!(Plateau::new(cfg).is_err());
    }
}
