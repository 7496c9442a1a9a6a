use crate::engine::checkpoint::Checkpoint;
use crate::engine::Tensor;
use crate::error::{contract, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Param(format!("adam {name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Param(format!("adam epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments. Moments are kept per parameter in the
/// order the parameters were registered.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    step: u64,
    names: Vec<String>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, lr: f64, names: &[String], params: &[Tensor]) -> Result<Self> {
        cfg.validate()?;
        check_lr(lr)?;
        contract!(names.len() == params.len(), "{} names for {} parameters", names.len(), params.len());
        Ok(Self {
            cfg,
            lr,
            step: 0,
            names: names.to_vec(),
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        check_lr(lr)?;
        self.lr = lr;
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter. Each parameter needs a
    /// gradient of its own shape.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Tensor>]) -> Result<()> {
        contract!(
            params.len() == self.m.len() && grads.len() == self.m.len(),
            "optimizer tracks {} parameters, got {} values and {} gradients",
            self.m.len(),
            params.len(),
            grads.len()
        );
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let Some(g) = g else {
                return Err(Error::Contract(format!("missing gradient for `{}`", self.names[i])));
            };
            contract!(
                g.shape() == p.shape(),
                "gradient of `{}` has shape {:?}, parameter {:?}",
                self.names[i],
                g.shape(),
                p.shape()
            );
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig { beta1, beta2, epsilon } = self.cfg;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let g = g.as_ref().expect("checked above").data();
            let data = p.data_mut();
            for i in 0..data.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    pub fn save(&self, ck: &mut Checkpoint) {
        ck.push("optimizer.step", Tensor::scalar(self.step as f64));
        ck.push("optimizer.lr", Tensor::scalar(self.lr));
        for (name, (m, v)) in self.names.iter().zip(self.m.iter().zip(&self.v)) {
            ck.push(format!("optimizer.m.{name}"), vector(m));
            ck.push(format!("optimizer.v.{name}"), vector(v));
        }
    }

    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        self.step = scalar_entry(ck, "optimizer.step")? as u64;
        self.set_lr(scalar_entry(ck, "optimizer.lr")?)?;
        for (name, (m, v)) in self.names.iter().zip(self.m.iter_mut().zip(&mut self.v)) {
            for (kind, dst) in [("m", m), ("v", v)] {
                let key = format!("optimizer.{kind}.{name}");
                let t = ck.get(&key).ok_or_else(|| Error::Format(format!("missing entry `{key}`")))?;
                if t.numel() != dst.len() {
                    return Err(Error::Format(format!(
                        "`{key}` holds {} values, parameter has {}",
                        t.numel(),
                        dst.len()
                    )));
                }
                dst.copy_from_slice(t.data());
            }
        }
        Ok(())
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(Error::Param(format!("learning rate must be positive, got {lr}")))
    }
}

fn vector(v: &[f64]) -> Tensor {
    Tensor::new(&[v.len()], v.to_vec()).expect("vector shape")
}

pub(crate) fn scalar_entry(ck: &Checkpoint, key: &str) -> Result<f64> {
    match ck.get(key) {
        Some(t) if t.numel() == 1 => Ok(t.data()[0]),
        Some(t) => Err(Error::Format(format!("`{key}` should be a scalar, has shape {:?}", t.shape()))),
        None => Err(Error::Format(format!("missing entry `{key}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> (Vec<String>, Vec<Tensor>) {
        (vec!["w".to_string()], vec![Tensor::scalar(value)])
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (names, mut params) = single(2.0);
        let mut adam = Adam::new(AdamConfig::default(), 1e-3, &names, &params).unwrap();
        adam.step(&mut params, &[Some(Tensor::scalar(-3.7))]).unwrap();
        // m̂ = g and v̂ = g², so the step is lr·|g|/(|g| + ε).
        let expected = 2.0 + 1e-3 * 3.7 / (3.7 + 1e-8);
        assert!((params[0].item() - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (names, mut params) = single(0.25);
        let mut adam = Adam::new(AdamConfig::default(), 1e-2, &names, &params).unwrap();
        for _ in 0..5 {
            adam.step(&mut params, &[Some(Tensor::scalar(0.0))]).unwrap();
        }
        assert_eq!(params[0].item(), 0.25);
        assert_eq!(adam.steps(), 5);
    }

    #[test]
    fn missing_gradient_is_rejected() {
        let (names, mut params) = single(1.0);
        let mut adam = Adam::new(AdamConfig::default(), 1e-3, &names, &params).unwrap();
        let err = adam.step(&mut params, &[None]).unwrap_err();
        assert!(matches!(err, Error::Contract(ref m) if m.contains("`w`")));
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn state_round_trips_through_checkpoint() {
        let (names, mut params) = single(1.0);
        let mut adam = Adam::new(AdamConfig::default(), 1e-3, &names, &params).unwrap();
        adam.step(&mut params, &[Some(Tensor::scalar(0.5))]).unwrap();
        adam.set_lr(2.5e-4).unwrap();
        let mut ck = Checkpoint::new();
        adam.save(&mut ck);
        let mut other = Adam::new(AdamConfig::default(), 1e-3, &names, &params).unwrap();
        other.restore(&ck).unwrap();
        assert_eq!(other, adam);
    }

    #[test]
    fn bad_hyperparameters() {
        let (names, params) = single(1.0);
        assert!(Adam::new(AdamConfig::default(), 0.0, &names, &params).is_err());
        let cfg = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(Adam::new(cfg, 1e-3, &names, &params).is_err());
    }
}
