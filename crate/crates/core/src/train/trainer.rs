use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::adam::{scalar_entry, Adam};
use super::schedule::Plateau;
use super::split::{epoch_order, split_train_val};
use super::TrainConfig;
use crate::data::{stack_samples, Sample};
use crate::engine::checkpoint::Checkpoint;
use crate::engine::{Mode, Tape, Tensor};
use crate::error::{contract, Error, Result};
use crate::eval::{confusion, metrics_from_counts};
use crate::losses::{jaccard_value, total_loss, LossBreakdown, LossConfig, LossVariant};
use crate::model::AdNet;

/// Weights with the lowest validation loss so far.
pub const BEST_FILE: &str = "best.adn";
/// Full trainer state after the latest epoch; training resumes from it.
pub const LAST_FILE: &str = "last.adn";
pub const LOG_FILE: &str = "train_log.csv";

/// Sample-weighted epoch means of the loss terms.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TermMeans {
    pub bce: f64,
    /// Focal Tversky (variant A) or Dice (variant B) loss.
    pub region: f64,
    /// Soft Jaccard loss of the final output, monitored but not optimized
    /// directly.
    pub soft_jaccard: f64,
    /// Guided-head Jaccard losses, deepest first; empty without heads.
    pub heads: Vec<f64>,
    pub total: f64,
}

#[derive(Default)]
struct TermSums {
    n: usize,
    bce: f64,
    region: f64,
    soft_jaccard: f64,
    heads: Vec<f64>,
    total: f64,
}

impl TermSums {
    fn add(&mut self, b: &LossBreakdown, soft_jaccard: f64, n: usize) {
        let w = n as f64;
        self.n += n;
        self.bce += w * b.bce;
        self.region += w * b.region;
        self.soft_jaccard += w * soft_jaccard;
        self.total += w * b.total;
        self.heads.resize(b.heads.len(), 0.0);
        for (s, h) in self.heads.iter_mut().zip(&b.heads) {
            *s += w * h;
        }
    }

    fn mean(self) -> TermMeans {
        let n = self.n as f64;
        TermMeans {
            bce: self.bce / n,
            region: self.region / n,
            soft_jaccard: self.soft_jaccard / n,
            heads: self.heads.iter().map(|h| h / n).collect(),
            total: self.total / n,
        }
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub train: TermMeans,
    pub val: TermMeans,
    /// Mean per-image Jaccard index of the binarized validation predictions.
    pub val_jaccard: f64,
    pub wall_ms: u64,
}

impl EpochRecord {
    pub fn header(variant: LossVariant) -> Vec<String> {
        let region = match variant {
            LossVariant::A => "ftl",
            LossVariant::B => "dice",
        };
        let mut h = vec!["epoch".to_string(), "lr".to_string()];
        for split in ["train", "val"] {
            h.push(format!("{split}_bce"));
            h.push(format!("{split}_{region}"));
            h.push(format!("{split}_soft_jaccard"));
            for k in 1..=4 {
                h.push(format!("{split}_jaccard_head_{k}"));
            }
            h.push(format!("{split}_total"));
        }
        h.push("val_jaccard".into());
        h.push("wall_ms".into());
        h
    }

    pub fn to_row(&self) -> Vec<String> {
        let mut r = vec![self.epoch.to_string(), self.lr.to_string()];
        for t in [&self.train, &self.val] {
            r.push(t.bce.to_string());
            r.push(t.region.to_string());
            r.push(t.soft_jaccard.to_string());
            for k in 0..4 {
                r.push(t.heads.get(k).map_or(String::new(), |v| v.to_string()));
            }
            r.push(t.total.to_string());
        }
        r.push(self.val_jaccard.to_string());
        r.push(self.wall_ms.to_string());
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    TargetReached,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::MaxEpochs => "epoch cap reached",
            StopReason::EarlyStop => "early stop",
            StopReason::TargetReached => "training target reached",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    /// Epochs completed, including any before a resume.
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop: StopReason,
}

struct Output {
    dir: PathBuf,
    manifest: String,
}

/// Owns the model and optimizer state for one run.
pub struct Trainer {
    model: AdNet,
    loss: LossConfig,
    cfg: TrainConfig,
    adam: Adam,
    plateau: Plateau,
    epoch: usize,
    best_val: f64,
    best_epoch: usize,
    best: Option<Checkpoint>,
    log: Vec<EpochRecord>,
    output: Option<Output>,
}

impl Trainer {
    pub fn new(model: AdNet, loss: LossConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        loss.validate()?;
        let params = model.params();
        let adam = Adam::new(cfg.adam, cfg.lr, params.names(), params.values())?;
        let plateau = Plateau::new(cfg.plateau)?;
        Ok(Self {
            model,
            loss,
            cfg,
            adam,
            plateau,
            epoch: 0,
            best_val: f64::INFINITY,
            best_epoch: 0,
            best: None,
            log: Vec::new(),
            output: None,
        })
    }

    /// Continues a run from a [`Trainer::state_checkpoint`]. `best` holds
    /// the best weights saved so far, if any.
    pub fn resume(
        model: AdNet,
        loss: LossConfig,
        cfg: TrainConfig,
        state: &Checkpoint,
        best: Option<Checkpoint>,
    ) -> Result<Self> {
        let mut t = Self::new(model, loss, cfg)?;
        t.model.params_mut().load_checkpoint(state)?;
        t.adam.restore(state)?;
        t.plateau.restore(state)?;
        t.epoch = scalar_entry(state, "schedule.epoch")? as usize;
        t.best_val = scalar_entry(state, "schedule.best_val")?;
        t.best_epoch = scalar_entry(state, "schedule.best_epoch")? as usize;
        t.best = best;
        Ok(t)
    }

    /// Continues the run stored in `dir` and keeps writing there.
    pub fn resume_from_dir(
        model: AdNet,
        loss: LossConfig,
        cfg: TrainConfig,
        dir: &Path,
        manifest: String,
    ) -> Result<Self> {
        let state = Checkpoint::load(dir.join(LAST_FILE))?;
        let best_path = dir.join(BEST_FILE);
        let best = if best_path.exists() {
            Some(Checkpoint::load(best_path)?)
        } else {
            None
        };
        Self::resume(model, loss, cfg, &state, best)?.with_output(dir, manifest)
    }

    /// Writes checkpoints and the CSV log into `dir` after every epoch.
    /// `manifest` is stored next to each checkpoint.
    pub fn with_output(mut self, dir: &Path, manifest: String) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let log = dir.join(LOG_FILE);
        if self.epoch == 0 || !log.exists() {
            let mut w = csv::Writer::from_path(&log)?;
            w.write_record(EpochRecord::header(self.loss.variant))?;
            w.flush().map_err(|e| Error::io(&log, e))?;
        }
        self.output = Some(Output {
            dir: dir.to_path_buf(),
            manifest,
        });
        Ok(self)
    }

    pub fn model(&self) -> &AdNet {
        &self.model
    }

    pub fn into_model(self) -> AdNet {
        self.model
    }

    /// The model with the best validation weights loaded.
    pub fn best_model(&self) -> Result<AdNet> {
        let mut m = self.model.clone();
        if let Some(best) = &self.best {
            m.params_mut().load_checkpoint(best)?;
        }
        Ok(m)
    }

    pub fn best_checkpoint(&self) -> Option<&Checkpoint> {
        self.best.as_ref()
    }

    /// Records of the epochs run by this trainer instance.
    pub fn log(&self) -> &[EpochRecord] {
        &self.log
    }

    pub fn epochs_completed(&self) -> usize {
        self.epoch
    }

    pub fn lr(&self) -> f64 {
        self.adam.lr()
    }

    pub fn plateau(&self) -> &Plateau {
        &self.plateau
    }

    /// Model weights, optimizer moments and schedule counters.
    pub fn state_checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.params().to_checkpoint();
        self.adam.save(&mut ck);
        self.plateau.save(&mut ck);
        ck.push("schedule.epoch", Tensor::scalar(self.epoch as f64));
        ck.push("schedule.best_val", Tensor::scalar(self.best_val));
        ck.push("schedule.best_epoch", Tensor::scalar(self.best_epoch as f64));
        ck
    }

    fn train_batch(&mut self, batch: &[&Sample], sums: &mut TermSums) -> Result<()> {
        let (x, y) = stack_samples(batch.iter().copied())?;
        let mut tape = Tape::new();
        tape.set_check_finite(true);
        let vars = self.model.params().bind(&mut tape, true);
        let xv = tape.constant(x);
        let yv = tape.constant(y);
        let out = self.model.forward(&mut tape, &vars, xv, Mode::Train)?;
        let total = total_loss(&mut tape, out.output, &out.guided, yv, &self.loss)?;
        let soft = jaccard_value(tape.value(out.output).data(), tape.value(yv).data(), self.loss.epsilon);
        tape.backward(total.loss)?;
        let mut grads = Vec::with_capacity(vars.len());
        for &v in &vars {
            let g = tape.grad(v);
            if let Some(g) = &g {
                if !g.all_finite() {
                    return Err(Error::NonFinite {
                        node: v.id(),
                        op: "gradient",
                    });
                }
            }
            grads.push(g);
        }
        self.adam.step(self.model.params_mut().values_mut(), &grads)?;
        sums.add(&total.breakdown, soft, batch.len());
        Ok(())
    }

    /// Validation loss terms and mean per-image Jaccard index.
    fn validate(&mut self, val: &[Sample]) -> Result<(TermMeans, f64)> {
        let mut sums = TermSums::default();
        let mut jaccard = 0.0;
        for chunk in val.chunks(self.cfg.batch_size) {
            let (x, y) = stack_samples(chunk)?;
            let mut tape = Tape::no_grad();
            tape.set_check_finite(true);
            let vars = self.model.params().bind(&mut tape, false);
            let xv = tape.constant(x);
            let yv = tape.constant(y);
            let out = self.model.forward(&mut tape, &vars, xv, Mode::Infer)?;
            let total = total_loss(&mut tape, out.output, &out.guided, yv, &self.loss)?;
            let (p, t) = (tape.value(out.output).data(), tape.value(yv).data());
            sums.add(&total.breakdown, jaccard_value(p, t, self.loss.epsilon), chunk.len());
            let per = p.len() / chunk.len();
            for (pi, ti) in p.chunks(per).zip(t.chunks(per)) {
                jaccard += metrics_from_counts(&confusion(pi, ti, self.cfg.threshold)?).jaccard;
            }
        }
        Ok((sums.mean(), jaccard / val.len() as f64))
    }

    /// One pass over `train` in seeded random order, then validation,
    /// schedule update and checkpointing.
    pub fn run_epoch(&mut self, train: &[Sample], val: &[Sample]) -> Result<EpochRecord> {
        contract!(!train.is_empty() && !val.is_empty(), "training and validation sets must be non-empty");
        contract!(
            self.cfg.batch_size <= train.len(),
            "batch size {} exceeds the {} training samples",
            self.cfg.batch_size,
            train.len()
        );
        let start = Instant::now();
        let epoch = self.epoch + 1;
        let lr = self.adam.lr();
        let order = epoch_order(train.len(), self.cfg.seed, epoch);
        let mut sums = TermSums::default();
        for idx in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
            self.train_batch(&batch, &mut sums)?;
        }
        let train_terms = sums.mean();
        let (val_terms, val_jaccard) = self.validate(val)?;

        let next_lr = self.plateau.observe(val_terms.total, lr);
        self.adam.set_lr(next_lr)?;
        self.epoch = epoch;
        let improved = val_terms.total < self.best_val;
        if improved {
            self.best_val = val_terms.total;
            self.best_epoch = epoch;
            self.best = Some(self.model.params().to_checkpoint());
        }
        let record = EpochRecord {
            epoch,
            lr,
            train: train_terms,
            val: val_terms,
            val_jaccard,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        if let Some(out) = &self.output {
            if improved {
                let best = self.best.as_ref().expect("just stored");
                save_with_manifest(best, &out.dir.join(BEST_FILE), &out.manifest, epoch)?;
            }
            save_with_manifest(&self.state_checkpoint(), &out.dir.join(LAST_FILE), &out.manifest, epoch)?;
            let path = out.dir.join(LOG_FILE);
            let file = OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = csv::Writer::from_writer(file);
            w.write_record(record.to_row())?;
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        self.log.push(record.clone());
        Ok(record)
    }

    /// Runs epochs until early stopping, the training target, or the epoch
    /// cap. The model keeps the final weights; see [`Trainer::best_model`].
    pub fn fit(&mut self, train: &[Sample], val: &[Sample]) -> Result<TrainSummary> {
        self.fit_with(train, val, |_| {})
    }

    /// [`Trainer::fit`] calling `on_epoch` after every epoch.
    pub fn fit_with(
        &mut self,
        train: &[Sample],
        val: &[Sample],
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<TrainSummary> {
        let stop = loop {
            if self.plateau.should_stop() {
                break StopReason::EarlyStop;
            }
            let target = self.cfg.target_train_jaccard;
            if let (Some(goal), Some(last)) = (target, self.log.last()) {
                if last.train.soft_jaccard < goal {
                    break StopReason::TargetReached;
                }
            }
            if self.epoch >= self.cfg.max_epochs {
                break StopReason::MaxEpochs;
            }
            let record = self.run_epoch(train, val)?;
            on_epoch(&record);
        };
        Ok(TrainSummary {
            epochs: self.epoch,
            best_epoch: self.best_epoch,
            best_val_loss: self.best_val,
            stop,
        })
    }

    /// Splits `pool` with the configured fraction and seed, then fits.
    pub fn fit_pool(&mut self, pool: &[Sample]) -> Result<TrainSummary> {
        let (train, val) = split_train_val(pool, self.cfg.val_fraction, self.cfg.seed)?;
        self.fit(&train, &val)
    }
}

fn save_with_manifest(ck: &Checkpoint, path: &Path, manifest: &str, epoch: usize) -> Result<()> {
    ck.save(path)?;
    let mut side = path.as_os_str().to_owned();
    side.push(".txt");
    let side = PathBuf::from(side);
    let text = format!("# epoch {epoch}\n{manifest}");
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
}
