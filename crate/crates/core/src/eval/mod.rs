//! Metrics on binarized predictions, pooled ROC analysis and the paired
//! signed-rank test.

mod metrics;
mod roc;
mod wilcoxon;

pub use metrics::{
    aggregate, confusion, metrics_from_counts, read_metric_column, ConfusionCounts, Metrics, MetricsReport,
};
pub use roc::{roc_auc, roc_svg, Roc};
pub use wilcoxon::{wilcoxon_signed_rank, PMethod, Wilcoxon, EXACT_MAX_N};

use crate::error::{contract, Result};

/// Default binarization threshold.
pub const THRESHOLD: f64 = 0.5;

/// One evaluated image: identifier, probability map and binary mask.
pub struct Prediction<'a> {
    pub id: &'a str,
    pub prob: &'a [f64],
    pub truth: &'a [f64],
}

/// Per-image metrics at `threshold`, their aggregate, and the ROC of all
/// pixels pooled across images.
pub fn evaluate(items: &[Prediction], threshold: f64) -> Result<MetricsReport> {
    contract!(!items.is_empty(), "nothing to evaluate");
    let mut records = Vec::with_capacity(items.len());
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for it in items {
        let counts = confusion(it.prob, it.truth, threshold)?;
        records.push((it.id.to_string(), metrics_from_counts(&counts)));
        scores.extend_from_slice(it.prob);
        labels.extend_from_slice(it.truth);
    }
    let metrics: Vec<Metrics> = records.iter().map(|(_, m)| *m).collect();
    let (mean, std) = aggregate(&metrics);
    let roc = roc_auc(&scores, &labels)?;
    Ok(MetricsReport {
        records,
        mean,
        std,
        roc: roc.points,
        auc: roc.auc,
    })
}
