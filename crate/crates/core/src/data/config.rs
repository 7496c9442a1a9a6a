use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use super::synthetic::SyntheticSpec;
use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossVariant};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// Synthetic data used when training or evaluating without a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSettings {
    /// Generator for the training pool; it is split into train and validation.
    pub spec: SyntheticSpec,
    /// Size of the held-out synthetic test set.
    pub test_count: usize,
    /// Seed of the held-out synthetic test set.
    pub test_seed: u64,
}

impl Default for SyntheticSettings {
    fn default() -> Self {
        Self {
            spec: SyntheticSpec::default(),
            test_count: 16,
            test_seed: 1,
        }
    }
}

impl SyntheticSettings {
    pub fn test_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            count: self.test_count,
            seed: self.test_seed,
            ..self.spec.clone()
        }
    }
}

/// Everything a run needs. Serialized as `section.key = value` lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub synthetic: SyntheticSettings,
}

enum SetError {
    Unknown,
    Parse(String),
    Range(String),
}

fn parse<T: FromStr>(v: &str) -> Result<T, SetError> {
    v.parse()
        .map_err(|_| SetError::Parse(format!("cannot parse `{v}` as {}", std::any::type_name::<T>())))
}

fn parse_where<T: FromStr + Display + Copy>(v: &str, ok: impl Fn(T) -> bool, expect: &str) -> Result<T, SetError> {
    let x = parse(v)?;
    if ok(x) {
        Ok(x)
    } else {
        Err(SetError::Range(format!("{x} is out of range, expected {expect}")))
    }
}

fn positive(v: &str) -> Result<usize, SetError> {
    parse_where(v, |x: usize| x >= 1, "an integer >= 1")
}

fn positive_real(v: &str) -> Result<f64, SetError> {
    parse_where(v, |x: f64| x > 0.0 && x.is_finite(), "a positive number")
}

fn non_negative(v: &str) -> Result<f64, SetError> {
    parse_where(v, |x: f64| x >= 0.0 && x.is_finite(), "a non-negative number")
}

fn open_unit(v: &str) -> Result<f64, SetError> {
    parse_where(v, |x: f64| x > 0.0 && x < 1.0, "a number in (0, 1)")
}

fn half_open_unit(v: &str) -> Result<f64, SetError> {
    parse_where(v, |x: f64| (0.0..1.0).contains(&x), "a number in [0, 1)")
}

fn boolean(v: &str) -> Result<bool, SetError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(SetError::Parse(format!("expected true or false, got `{v}`"))),
    }
}

fn dilations(v: &str) -> Result<[usize; 4], SetError> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(SetError::Parse(format!("expected 4 comma-separated dilations, got `{v}`")));
    }
    let mut out = [0; 4];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = positive(p)?;
    }
    Ok(out)
}

impl RunConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<(), SetError> {
        let m = &mut self.model;
        let l = &mut self.loss;
        let t = &mut self.train;
        let s = &mut self.synthetic;
        match key {
            "model.input_size" => {
                m.input_size = parse_where(v, |x: usize| x > 0 && x % 16 == 0, "a positive multiple of 16")?
            }
            "model.in_channels" => m.in_channels = positive(v)?,
            "model.base_width" => m.base_width = positive(v)?,
            "model.width_multiplier" => m.width_multiplier = positive_real(v)?,
            "model.encoder_dilations" => m.encoder_dilations = dilations(v)?,
            "model.bottleneck_dilation" => m.bottleneck_dilation = positive(v)?,
            "model.leaky_slope" => m.leaky_slope = open_unit(v)?,
            "model.bn_momentum" => m.bn_momentum = half_open_unit(v)?,
            "model.bn_epsilon" => m.bn_epsilon = positive_real(v)?,
            "model.asfeb" => m.asfeb = boolean(v)?,
            "model.guided" => m.guided = boolean(v)?,
            "model.seed" => m.seed = parse(v)?,
            "loss.alpha" => l.alpha = non_negative(v)?,
            "loss.beta" => l.beta = non_negative(v)?,
            "loss.gamma" => l.gamma = parse_where(v, |x: f64| (1.0..=3.0).contains(&x), "a number in [1, 3]")?,
            "loss.epsilon" => l.epsilon = parse_where(v, |x: f64| x > 0.0 && x < 0.5, "a number in (0, 0.5)")?,
            "loss.variant" => l.variant = v.parse::<LossVariant>().map_err(|e| SetError::Parse(e.to_string()))?,
            "loss.guided_weight" => l.guided_weight = non_negative(v)?,
            "train.batch_size" => t.batch_size = positive(v)?,
            "train.max_epochs" => t.max_epochs = positive(v)?,
            "train.val_fraction" => t.val_fraction = open_unit(v)?,
            "train.seed" => t.seed = parse(v)?,
            "train.lr" => t.lr = positive_real(v)?,
            "train.adam_beta1" => t.adam.beta1 = half_open_unit(v)?,
            "train.adam_beta2" => t.adam.beta2 = half_open_unit(v)?,
            "train.adam_epsilon" => t.adam.epsilon = positive_real(v)?,
            "train.lr_factor" => t.plateau.factor = open_unit(v)?,
            "train.lr_patience" => t.plateau.patience = positive(v)?,
            "train.min_delta" => t.plateau.min_delta = non_negative(v)?,
            "train.min_lr" => t.plateau.min_lr = positive_real(v)?,
            "train.es_patience" => t.plateau.es_patience = positive(v)?,
            "train.target_train_jaccard" => {
                t.target_train_jaccard = match v {
                    "none" => None,
                    _ => Some(parse_where(v, |x: f64| x > 0.0 && x <= 1.0, "none or a number in (0, 1]")?),
                }
            }
            "eval.threshold" => t.threshold = open_unit(v)?,
            "synthetic.count" => s.spec.count = positive(v)?,
            "synthetic.size" => s.spec.size = parse_where(v, |x: usize| x >= 4, "an integer >= 4")?,
            "synthetic.axis_min" => s.spec.axis_range.0 = parse_where(v, |x: f64| x > 0.0 && x <= 0.5, "a number in (0, 0.5]")?,
            "synthetic.axis_max" => s.spec.axis_range.1 = parse_where(v, |x: f64| x > 0.0 && x <= 0.5, "a number in (0, 0.5]")?,
            "synthetic.contrast_min" => {
                s.spec.contrast_range.0 = parse_where(v, |x: f64| x > 0.0 && x <= 1.0, "a number in (0, 1]")?
            }
            "synthetic.contrast_max" => {
                s.spec.contrast_range.1 = parse_where(v, |x: f64| x > 0.0 && x <= 1.0, "a number in (0, 1]")?
            }
            "synthetic.noise" => s.spec.noise = non_negative(v)?,
            "synthetic.hair" => s.spec.hair = boolean(v)?,
            "synthetic.seed" => s.spec.seed = parse(v)?,
            "synthetic.test_count" => s.test_count = positive(v)?,
            "synthetic.test_seed" => s.test_seed = parse(v)?,
            _ => return Err(SetError::Unknown),
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (m, l, t, s) = (&self.model, &self.loss, &self.train, &self.synthetic);
        let d = m.encoder_dilations;
        vec![
            ("model.input_size", m.input_size.to_string()),
            ("model.in_channels", m.in_channels.to_string()),
            ("model.base_width", m.base_width.to_string()),
            ("model.width_multiplier", m.width_multiplier.to_string()),
            ("model.encoder_dilations", format!("{},{},{},{}", d[0], d[1], d[2], d[3])),
            ("model.bottleneck_dilation", m.bottleneck_dilation.to_string()),
            ("model.leaky_slope", m.leaky_slope.to_string()),
            ("model.bn_momentum", m.bn_momentum.to_string()),
            ("model.bn_epsilon", m.bn_epsilon.to_string()),
            ("model.asfeb", m.asfeb.to_string()),
            ("model.guided", m.guided.to_string()),
            ("model.seed", m.seed.to_string()),
            ("loss.alpha", l.alpha.to_string()),
            ("loss.beta", l.beta.to_string()),
            ("loss.gamma", l.gamma.to_string()),
            ("loss.epsilon", l.epsilon.to_string()),
            ("loss.variant", l.variant.to_string()),
            ("loss.guided_weight", l.guided_weight.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.max_epochs", t.max_epochs.to_string()),
            ("train.val_fraction", t.val_fraction.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.adam_beta1", t.adam.beta1.to_string()),
            ("train.adam_beta2", t.adam.beta2.to_string()),
            ("train.adam_epsilon", t.adam.epsilon.to_string()),
            ("train.lr_factor", t.plateau.factor.to_string()),
            ("train.lr_patience", t.plateau.patience.to_string()),
            ("train.min_delta", t.plateau.min_delta.to_string()),
            ("train.min_lr", t.plateau.min_lr.to_string()),
            ("train.es_patience", t.plateau.es_patience.to_string()),
            (
                "train.target_train_jaccard",
                t.target_train_jaccard.map_or("none".to_string(), |v| v.to_string()),
            ),
            ("eval.threshold", t.threshold.to_string()),
            ("synthetic.count", s.spec.count.to_string()),
            ("synthetic.size", s.spec.size.to_string()),
            ("synthetic.axis_min", s.spec.axis_range.0.to_string()),
            ("synthetic.axis_max", s.spec.axis_range.1.to_string()),
            ("synthetic.contrast_min", s.spec.contrast_range.0.to_string()),
            ("synthetic.contrast_max", s.spec.contrast_range.1.to_string()),
            ("synthetic.noise", s.spec.noise.to_string()),
            ("synthetic.hair", s.spec.hair.to_string()),
            ("synthetic.seed", s.spec.seed.to_string()),
            ("synthetic.test_count", s.test_count.to_string()),
            ("synthetic.test_seed", s.test_seed.to_string()),
        ]
    }

    /// The fully resolved configuration in the same format [`parse_config`] reads.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# resolved configuration\n");
        for (k, v) in self.entries() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Checks relations between keys that single-key ranges cannot express.
    fn validate(&self) -> Result<()> {
        let value_err = |key: &str, e: Error| Error::ConfigValue {
            key: key.to_string(),
            msg: match e {
                Error::Param(m) => m,
                other => other.to_string(),
            },
        };
        let spec = &self.synthetic.spec;
        if spec.axis_range.0 > spec.axis_range.1 {
            return Err(value_err(
                "synthetic.axis_max",
                Error::Param(format!("{} is below synthetic.axis_min", spec.axis_range.1)),
            ));
        }
        if spec.contrast_range.0 > spec.contrast_range.1 {
            return Err(value_err(
                "synthetic.contrast_max",
                Error::Param(format!("{} is below synthetic.contrast_min", spec.contrast_range.1)),
            ));
        }
        self.model.validate().map_err(|e| value_err("model", e))?;
        self.loss.validate().map_err(|e| value_err("loss", e))?;
        self.train.validate().map_err(|e| value_err("train", e))?;
        spec.validate().map_err(|e| value_err("synthetic", e))
    }
}

/// Reads `key = value` lines; `#` starts a comment. Keys not set keep their
/// defaults, unknown or repeated keys are rejected. `origin` names the
/// source in diagnostics.
pub fn parse_config(text: &str, origin: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::ConfigParse {
            path: origin.to_string(),
            line: i + 1,
            msg,
        };
        let Some((key, value)) = line.split_once('=') else {
            return Err(parse_err(format!("expected `key = value`, got `{line}`")));
        };
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(parse_err(format!("`{key}` is set twice")));
        }
        match cfg.set(key, value) {
            Ok(()) => {}
            Err(SetError::Unknown) => return Err(parse_err(format!("unknown key `{key}`"))),
            Err(SetError::Parse(msg)) => return Err(parse_err(format!("`{key}`: {msg}"))),
            Err(SetError::Range(msg)) => {
                return Err(Error::ConfigValue {
                    key: key.to_string(),
                    msg,
                })
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}
