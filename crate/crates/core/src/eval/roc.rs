use std::fmt::Write;

use crate::error::{contract, Error, Result};

/// ROC curve as `(fpr, tpr)` points from `(0, 0)` to `(1, 1)`, and its
/// trapezoidal area.
#[derive(Clone, Debug, PartialEq)]
pub struct Roc {
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Sweeps the threshold down through the distinct scores. Tied scores move
/// the curve in one step, so a block of ties contributes a diagonal segment.
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> Result<Roc> {
    contract!(
        scores.len() == labels.len(),
        "{} scores but {} labels",
        scores.len(),
        labels.len()
    );
    contract!(scores.iter().all(|s| !s.is_nan()), "ROC scores contain NaN");
    let mut pos = 0u64;
    for &y in labels {
        contract!(y == 0.0 || y == 1.0, "ROC label {y} is not binary");
        pos += (y == 1.0) as u64;
    }
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate("ROC needs both positive and negative labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1.0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (f0, t0) = *points.last().unwrap();
        let (f1, t1) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        auc += (f1 - f0) * (t0 + t1) / 2.0;
        points.push((f1, t1));
    }
    Ok(Roc { points, auc })
}

/// Standalone SVG line plot of an ROC curve with the chance diagonal.
pub fn roc_svg(points: &[(f64, f64)], auc: f64) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 40.0;
    let x = |f: f64| PAD + f * SIZE;
    let y = |t: f64| PAD + (1.0 - t) * SIZE;
    let full = SIZE + 2.0 * PAD;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{full}" height="{full}" viewBox="0 0 {full} {full}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4 4"/>"##,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    let path: Vec<String> = points.iter().map(|&(f, t)| format!("{:.2},{:.2}", x(f), y(t))).collect();
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#1f4fd1" stroke-width="2"/>"##,
        path.join(" ")
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="14">False positive rate</text>"#,
        PAD + SIZE / 2.0,
        full - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" font-family="sans-serif" font-size="14" transform="rotate(-90 14 {})">True positive rate</text>"#,
        PAD + SIZE / 2.0,
        PAD + SIZE / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="14">AUC = {auc:.4}</text>"#,
        PAD + SIZE - 10.0,
        PAD + SIZE - 10.0
    );
    s.push_str("</svg>\n");
    s
}
