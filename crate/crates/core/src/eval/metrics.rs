use std::io::Write;
use std::path::Path;

use crate::error::{contract, Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Counts the confusion cells of `prob` binarized at `threshold`
/// (`p >= threshold` is positive) against the binary mask `truth`.
pub fn confusion(prob: &[f64], truth: &[f64], threshold: f64) -> Result<ConfusionCounts> {
    contract!(
        prob.len() == truth.len(),
        "prediction has {} pixels, ground truth {}",
        prob.len(),
        truth.len()
    );
    let mut c = ConfusionCounts::default();
    for (&p, &y) in prob.iter().zip(truth) {
        let positive = p >= threshold;
        if y == 1.0 {
            if positive {
                c.tp += 1;
            } else {
                c.fn_ += 1;
            }
        } else if y == 0.0 {
            if positive {
                c.fp += 1;
            } else {
                c.tn += 1;
            }
        } else {
            return Err(Error::Contract(format!("ground truth value {y} is not binary")));
        }
    }
    Ok(c)
}

/// Per-image overlap and classification rates, each in [0, 1].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub jaccard: f64,
    pub dice: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 5] = ["jaccard", "dice", "accuracy", "sensitivity", "specificity"];

    pub fn to_array(self) -> [f64; 5] {
        [self.jaccard, self.dice, self.accuracy, self.sensitivity, self.specificity]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            jaccard: a[0],
            dice: a[1],
            accuracy: a[2],
            sensitivity: a[3],
            specificity: a[4],
        }
    }
}

/// `num/den`, or 1.0 when the denominator is empty: a rate over no cases
/// is vacuously perfect (e.g. sensitivity on a lesion-free image).
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics_from_counts(c: &ConfusionCounts) -> Metrics {
    Metrics {
        jaccard: ratio(c.tp, c.tp + c.fp + c.fn_),
        dice: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        accuracy: ratio(c.tp + c.tn, c.total()),
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
    }
}

/// Per-image metrics with their mean and sample standard deviation, plus
/// the pooled ROC curve.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub records: Vec<(String, Metrics)>,
    pub mean: Metrics,
    pub std: Metrics,
    pub roc: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Mean and sample standard deviation (`n − 1` denominator; zero for a
/// single record) of each metric.
pub fn aggregate(records: &[Metrics]) -> (Metrics, Metrics) {
    let n = records.len() as f64;
    let mut mean = [0.0; 5];
    for r in records {
        for (m, v) in mean.iter_mut().zip(r.to_array()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n.max(1.0));
    let mut var = [0.0; 5];
    for r in records {
        for ((s, v), m) in var.iter_mut().zip(r.to_array()).zip(mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.map(|s| if records.len() > 1 { (s / (n - 1.0)).sqrt() } else { 0.0 });
    (Metrics::from_array(mean), Metrics::from_array(std))
}

impl MetricsReport {
    /// One row per image followed by `mean` and `std` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["id"];
        header.extend(Metrics::NAMES);
        w.write_record(&header)?;
        let rows = self
            .records
            .iter()
            .map(|(id, m)| (id.as_str(), m))
            .chain([("mean", &self.mean), ("std", &self.std)]);
        for (id, m) in rows {
            let mut rec = vec![id.to_string()];
            rec.extend(m.to_array().iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_roc_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["fpr", "tpr"])?;
        for (f, t) in &self.roc {
            w.write_record([f.to_string(), t.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_roc_svg(&self, path: &Path) -> Result<()> {
        let svg = super::roc::roc_svg(&self.roc, self.auc);
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(svg.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Reads one numeric column from a CSV with a header row, skipping the
/// `mean` and `std` summary rows written by [`MetricsReport::write_csv`].
pub fn read_metric_column(path: &Path, column: &str) -> Result<Vec<(String, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let idx = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| Error::Data(format!("{}: no `{column}` column", path.display())))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or_default().to_string();
        if id == "mean" || id == "std" {
            continue;
        }
        let raw = rec.get(idx).unwrap_or_default();
        let v: f64 = raw
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("{}: `{raw}` in column `{column}` is not a number", path.display())))?;
        out.push((id, v));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_hand_case() {
        let c = confusion(&[0.9, 0.6, 0.2, 0.1], &[1.0, 0.0, 1.0, 0.0], 0.5).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 1,
                tn: 1,
                fp: 1,
                fn_: 1
            }
        );
        let m = metrics_from_counts(&c);
        assert!((m.jaccard - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!([m.dice, m.accuracy, m.sensitivity, m.specificity], [0.5; 4]);
    }

    #[test]
    fn threshold_is_inclusive() {
        let c = confusion(&[0.5], &[1.0], 0.5).unwrap();
        assert_eq!(c.tp, 1);
    }

    #[test]
    fn empty_lesion_with_no_positive_prediction_is_perfect() {
        let c = confusion(&[0.1, 0.2], &[0.0, 0.0], 0.5).unwrap();
        let m = metrics_from_counts(&c);
        assert_eq!(m.to_array(), [1.0; 5]);
        let c = confusion(&[0.9, 0.2], &[0.0, 0.0], 0.5).unwrap();
        let m = metrics_from_counts(&c);
        assert_eq!(m.jaccard, 0.0);
        assert_eq!(m.sensitivity, 1.0);
    }

    #[test]
    fn non_binary_truth_is_rejected() {
        assert!(matches!(confusion(&[0.1], &[0.5], 0.5), Err(Error::Contract(_))));
        assert!(matches!(confusion(&[0.1], &[1.0, 0.0], 0.5), Err(Error::Contract(_))));
    }

    #[test]
    fn aggregate_of_single_record_has_zero_spread() {
        let m = Metrics::from_array([0.2, 0.4, 0.6, 0.8, 1.0]);
        let (mean, std) = aggregate(&[m]);
        assert_eq!(mean, m);
        assert_eq!(std.to_array(), [0.0; 5]);
        let (mean, std) = aggregate(&[Metrics::from_array([0.0; 5]), Metrics::from_array([1.0; 5])]);
        assert_eq!(mean.to_array(), [0.5; 5]);
        assert!((std.jaccard - 0.5f64.sqrt()).abs() < 1e-15);
    }
}
