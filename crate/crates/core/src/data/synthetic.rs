use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::dataset::Sample;
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::train::rng;

/// Parameters of the synthetic lesion generator. Sample `i` draws from the
/// ChaCha8 stream `i` of `seed`, so a sample does not depend on `count`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub count: usize,
    /// Square canvas extent in pixels.
    pub size: usize,
    /// Range of the ellipse semi-axes as a fraction of `size`.
    pub axis_range: (f64, f64),
    /// Relative darkening of the lesion: 1 is black, 0 is invisible.
    pub contrast_range: (f64, f64),
    /// Standard deviation of the additive Gaussian pixel noise.
    pub noise: f64,
    /// Draw one to three thin dark arcs over each image.
    pub hair: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            count: 80,
            size: 64,
            axis_range: (0.15, 0.35),
            contrast_range: (0.5, 0.8),
            noise: 0.03,
            hair: false,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let (a0, a1) = self.axis_range;
        if !(a0 > 0.0 && a0 <= a1 && a1 <= 0.5) {
            return Err(Error::Param(format!(
                "ellipse axis range ({a0}, {a1}) must satisfy 0 < min <= max <= 0.5"
            )));
        }
        let (c0, c1) = self.contrast_range;
        if !(c0 > 0.0 && c0 <= c1 && c1 <= 1.0) {
            return Err(Error::Param(format!(
                "contrast range ({c0}, {c1}) must satisfy 0 < min <= max <= 1"
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Param(format!("noise must be non-negative, got {}", self.noise)));
        }
        if self.size < 4 {
            return Err(Error::Param(format!("canvas size {} is below 4", self.size)));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

struct Arc {
    cx: f64,
    cy: f64,
    radius: f64,
    start: f64,
    span: f64,
}

impl Arc {
    fn covers(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        if ((dx * dx + dy * dy).sqrt() - self.radius).abs() > 0.5 {
            return false;
        }
        (dy.atan2(dx) - self.start).rem_euclid(2.0 * PI) <= self.span
    }
}

fn sample(spec: &SyntheticSpec, index: usize) -> Result<Sample> {
    let mut rng = rng(spec.seed, index as u64);
    let n = spec.size;
    let s = n as f64;
    let skin = uniform(&mut rng, (0.6, 0.9));
    let background = [skin, skin * 0.8, skin * 0.7];
    let contrast = uniform(&mut rng, spec.contrast_range);
    let lesion = background.map(|b| b * (1.0 - contrast));
    let a = uniform(&mut rng, spec.axis_range) * s;
    let b = uniform(&mut rng, spec.axis_range) * s;
    let theta = uniform(&mut rng, (0.0, PI));
    let reach = a.max(b);
    let cx = uniform(&mut rng, (reach, s - reach));
    let cy = uniform(&mut rng, (reach, s - reach));
    let arcs: Vec<Arc> = if spec.hair {
        let k = rng.random_range(1..=3);
        (0..k)
            .map(|_| Arc {
                cx: uniform(&mut rng, (-s, 2.0 * s)),
                cy: uniform(&mut rng, (-s, 2.0 * s)),
                radius: uniform(&mut rng, (0.5 * s, 1.5 * s)),
                start: uniform(&mut rng, (0.0, 2.0 * PI)),
                span: uniform(&mut rng, (0.3, 1.2)),
            })
            .collect()
    } else {
        Vec::new()
    };
    let (sin, cos) = theta.sin_cos();
    let mut image = Vec::with_capacity(n * n * 3);
    let mut mask = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let (x, y) = (j as f64 + 0.5, i as f64 + 0.5);
            let (dx, dy) = (x - cx, y - cy);
            let u = (dx * cos + dy * sin) / a;
            let v = (dy * cos - dx * sin) / b;
            let inside = u * u + v * v <= 1.0;
            mask.push(inside as u8 as f64);
            let hair = arcs.iter().any(|arc| arc.covers(x, y));
            let base = if inside { lesion } else { background };
            for c in base {
                let c = if hair { 0.15 * c } else { c };
                let noise: f64 = rng.sample(StandardNormal);
                image.push((c + spec.noise * noise).clamp(0.0, 1.0));
            }
        }
    }
    Sample::new(
        format!("synthetic_{index:05}"),
        Tensor::new(&[n, n, 3], image)?,
        Tensor::new(&[n, n, 1], mask)?,
    )
}

/// Images of one filled ellipse on a flat skin-toned background with
/// Gaussian noise and optional hair-like arcs; the mask is the ellipse
/// interior evaluated at pixel centres.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    (0..spec.count).map(|i| sample(spec, i)).collect()
}
