//! Named learnable tensors and batch-norm buffers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::checkpoint::Checkpoint;
use crate::engine::{RunningStats, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BufferId(pub(crate) usize);

/// Learnables in creation order plus running statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    buffer_names: Vec<String>,
    buffers: Vec<RunningStats>,
}

/// Checkpoint entries with these prefixes belong to the trainer.
const FOREIGN_PREFIXES: [&str; 2] = ["optimizer.", "schedule."];

impl ParamSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar learnables.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.values[i])
    }

    pub fn buffer_names(&self) -> &[String] {
        &self.buffer_names
    }

    pub fn buffers(&self) -> &[RunningStats] {
        &self.buffers
    }

    pub(crate) fn buffers_mut(&mut self) -> &mut [RunningStats] {
        &mut self.buffers
    }

    /// Places every learnable on `tape` in creation order.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
        self.values.iter().map(|v| tape.leaf(v.clone(), requires_grad)).collect()
    }

    /// Concatenation of all learnables in creation order.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for (name, value) in self.names.iter().zip(&self.values) {
            ck.push(name.clone(), value.clone());
        }
        for (name, stats) in self.buffer_names.iter().zip(&self.buffers) {
            let c = stats.mean.len();
            ck.push(
                format!("{name}.running_mean"),
                Tensor::new(&[c], stats.mean.clone()).expect("buffer shape"),
            );
            ck.push(
                format!("{name}.running_var"),
                Tensor::new(&[c], stats.var.clone()).expect("buffer shape"),
            );
        }
        ck
    }

    /// Overwrites every learnable and buffer from `ck`. Names and shapes must
    /// match exactly; trainer state entries are skipped.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        let mut expected: Vec<(String, Vec<usize>)> = self
            .names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| (n.clone(), v.shape().to_vec()))
            .collect();
        for (name, stats) in self.buffer_names.iter().zip(&self.buffers) {
            let c = vec![stats.mean.len()];
            expected.push((format!("{name}.running_mean"), c.clone()));
            expected.push((format!("{name}.running_var"), c));
        }
        for (name, _) in &ck.entries {
            if FOREIGN_PREFIXES.iter().any(|p| name.starts_with(p)) {
                continue;
            }
            if !expected.iter().any(|(n, _)| n == name) {
                return Err(Error::Format(format!("unexpected entry `{name}`")));
            }
        }
        for (name, shape) in &expected {
            let t = ck
                .get(name)
                .ok_or_else(|| Error::Format(format!("missing entry `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "`{name}` has shape {:?}, model expects {shape:?}",
                    t.shape()
                )));
            }
        }
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            *value = ck.get(name).expect("checked above").clone();
        }
        for (name, stats) in self.buffer_names.iter().zip(self.buffers.iter_mut()) {
            stats.mean = ck.get(&format!("{name}.running_mean")).expect("checked").data().to_vec();
            stats.var = ck.get(&format!("{name}.running_var")).expect("checked").data().to_vec();
        }
        Ok(())
    }
}

/// Allocates and initializes parameters in a fixed order from one seeded stream.
pub struct ParamBuilder {
    set: ParamSet,
    rng: ChaCha8Rng,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        Self {
            set: ParamSet::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// He-uniform draw `U(−√(6/fan_in), √(6/fan_in))`, variance `2/fan_in`.
    pub fn uniform_fan_in(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = (6.0 / fan_in as f64).sqrt();
        let rng = &mut self.rng;
        let value = Tensor::from_fn(shape, |_| rng.random_range(-bound..bound));
        self.push(name.into(), value)
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> ParamId {
        self.push(name.into(), Tensor::full(shape, value))
    }

    pub fn buffer(&mut self, name: impl Into<String>, channels: usize) -> BufferId {
        self.set.buffer_names.push(name.into());
        self.set.buffers.push(RunningStats::new(channels));
        BufferId(self.set.buffers.len() - 1)
    }

    fn push(&mut self, name: String, value: Tensor) -> ParamId {
        debug_assert!(!self.set.names.contains(&name), "duplicate parameter {name}");
        self.set.names.push(name);
        self.set.values.push(value);
        ParamId(self.set.values.len() - 1)
    }

    pub fn finish(self) -> ParamSet {
        self.set
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(seed: u64) -> ParamSet {
        let mut b = ParamBuilder::new(seed);
        b.uniform_fan_in("conv.kernel", &[3, 3, 4, 8], 36);
        b.constant("conv.bias", &[8], 0.0);
        b.buffer("bn", 8);
        b.finish()
    }

    #[test]
    fn seeding_is_deterministic() {
        assert_eq!(build(5), build(5));
        assert_ne!(build(5).values()[0], build(6).values()[0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let src = build(1);
        let mut dst = build(2);
        dst.load_checkpoint(&src.to_checkpoint()).unwrap();
        assert_eq!(src, dst);
    }

    #[test]
    fn missing_or_foreign_entries_are_rejected() {
        let mut ck = build(1).to_checkpoint();
        ck.entries.pop();
        assert!(build(1).load_checkpoint(&ck).is_err());
        let mut ck = build(1).to_checkpoint();
        ck.push("stray", Tensor::scalar(0.0));
        assert!(build(1).load_checkpoint(&ck).is_err());
        let mut ck = build(1).to_checkpoint();
        ck.push("optimizer.step", Tensor::scalar(3.0));
        assert!(build(1).load_checkpoint(&ck).is_ok());
    }
}
