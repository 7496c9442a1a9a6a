use crate::engine::{BatchNormOptions, Mode};
use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Square input extent; must be divisible by 16.
    pub input_size: usize,
    pub in_channels: usize,
    /// Channels of encoder stage 1 before the multiplier is applied.
    pub base_width: usize,
    pub width_multiplier: f64,
    /// Dilation of encoder stages 1..4; the decoder mirrors them.
    pub encoder_dilations: [usize; 4],
    pub bottleneck_dilation: usize,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub asfeb: bool,
    pub guided: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 256,
            in_channels: 3,
            base_width: 16,
            width_multiplier: 1.0,
            encoder_dilations: [1, 1, 2, 4],
            bottleneck_dilation: 4,
            leaky_slope: 0.3,
            bn_momentum: 0.99,
            bn_epsilon: 1e-3,
            asfeb: true,
            guided: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Both attention blocks and guided heads disabled.
    pub fn baseline() -> Self {
        Self {
            asfeb: false,
            guided: false,
            ..Self::default()
        }
    }

    /// Channel count of encoder stages 1..4 followed by the bottleneck.
    pub fn widths(&self) -> Result<[usize; 5]> {
        let mut out = [0; 5];
        for (i, w) in out.iter_mut().enumerate() {
            let exact = self.base_width as f64 * self.width_multiplier * (1u32 << i) as f64;
            *w = exact.round() as usize;
            if *w < 1 {
                return Err(Error::Param(format!(
                    "width multiplier {} leaves stage {} with no channels",
                    self.width_multiplier,
                    i + 1
                )));
            }
        }
        Ok(out)
    }

    pub fn bn_options(&self, mode: Mode) -> BatchNormOptions {
        BatchNormOptions {
            mode,
            momentum: self.bn_momentum,
            epsilon: self.bn_epsilon,
        }
    }

    /// Dilations of decoder blocks 1..4, deepest first.
    pub fn decoder_dilations(&self) -> [usize; 4] {
        let mut d = self.encoder_dilations;
        d.reverse();
        d
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Param(msg));
        if self.input_size == 0 || self.input_size % 16 != 0 {
            return bad(format!("input_size {} is not a positive multiple of 16", self.input_size));
        }
        if self.in_channels == 0 || self.base_width == 0 {
            return bad("in_channels and base_width must be positive".into());
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier.is_finite()) {
            return bad(format!("width_multiplier must be positive, got {}", self.width_multiplier));
        }
        if self.encoder_dilations.iter().any(|&d| d < 1) || self.bottleneck_dilation < 1 {
            return bad("dilations must be >= 1".into());
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad(format!("leaky_slope must lie in (0, 1), got {}", self.leaky_slope));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return bad(format!("bn_momentum must lie in [0, 1), got {}", self.bn_momentum));
        }
        if !(self.bn_epsilon > 0.0) {
            return bad(format!("bn_epsilon must be positive, got {}", self.bn_epsilon));
        }
        self.widths().map(|_| ())
    }
}
