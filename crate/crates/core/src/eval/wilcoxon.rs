use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{contract, Error, Result};

/// Largest number of non-zero differences for which the null distribution
/// is enumerated exactly.
pub const EXACT_MAX_N: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wilcoxon {
    /// Pairs with a non-zero difference.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(W+, W−)`.
    pub statistic: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub method: PMethod,
}

impl Wilcoxon {
    pub fn significant(&self, level: f64) -> bool {
        self.p_value < level
    }
}

/// Midranks (1-based) of `values`, which must be sorted ascending, as
/// doubled integers so half ranks stay exact.
fn doubled_midranks(sorted: &[f64]) -> Vec<u64> {
    let mut ranks = vec![0; sorted.len()];
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        // Positions i..=j share rank ((i+1) + (j+1)) / 2.
        for r in &mut ranks[i..=j] {
            *r = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    ranks
}

/// Paired two-sided signed-rank test of `b − a`. Zero differences are
/// dropped; at least five must remain.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<Wilcoxon> {
    contract!(a.len() == b.len(), "paired samples differ in length: {} vs {}", a.len(), b.len());
    let mut diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).filter(|d| *d != 0.0).collect();
    contract!(diffs.iter().all(|d| d.is_finite()), "paired samples contain non-finite values");
    if diffs.is_empty() {
        return Err(Error::Degenerate("all paired differences are zero".into()));
    }
    contract!(
        diffs.len() >= 5,
        "signed-rank test needs at least 5 non-zero differences, got {}",
        diffs.len()
    );
    diffs.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = doubled_midranks(&abs);
    let n = diffs.len();
    let total2: u64 = ranks.iter().sum();
    let plus2: u64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let minus2 = total2 - plus2;
    let stat2 = plus2.min(minus2);

    let (p_value, method) = if n <= EXACT_MAX_N {
        // Count sign assignments at least as extreme as the observed one.
        let mut extreme = 0u64;
        for mask in 0u64..(1 << n) {
            let p: u64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if p.min(total2 - p) <= stat2 {
                extreme += 1;
            }
        }
        (extreme as f64 / (1u64 << n) as f64, PMethod::Exact)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut tie_term = 0.0;
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && abs[j + 1] == abs[i] {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            tie_term += t * t * t - t;
            i = j + 1;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        let w = stat2 as f64 / 2.0;
        let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::standard();
        ((2.0 * (1.0 - normal.cdf(z))).min(1.0), PMethod::Normal)
    };
    Ok(Wilcoxon {
        n,
        w_plus: plus2 as f64 / 2.0,
        w_minus: minus2 as f64 / 2.0,
        statistic: stat2 as f64 / 2.0,
        p_value,
        method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midranks_share_ties() {
        assert_eq!(doubled_midranks(&[1.0, 2.0, 2.0, 5.0]), vec![2, 5, 5, 8]);
    }

    #[test]
    fn constant_shift_reaches_smallest_exact_p() {
        let a: Vec<f64> = (0..8).map(|i| i as f64 * 0.37).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 0.05).collect();
        let w = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(w.p_value, 2.0 / 256.0);
        assert_eq!(w.statistic, 0.0);
        assert!(w.significant(0.05));
    }

    #[test]
    fn symmetric_differences_give_p_one() {
        let a = [0.0; 8];
        let b = [1.0, -1.0, 2.0, -2.0, 3.0, -3.0, 4.0, -4.0];
        let w = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(w.w_plus, w.w_minus);
        assert_eq!(w.p_value, 1.0);
    }

    #[test]
    fn degenerate_and_short_inputs() {
        assert!(matches!(wilcoxon_signed_rank(&[1.0; 6], &[1.0; 6]), Err(Error::Degenerate(_))));
        assert!(matches!(
            wilcoxon_signed_rank(&[0.0; 6], &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn large_sample_uses_normal_approximation() {
        let a = vec![0.0; 30];
        let b: Vec<f64> = (0..30).map(|i| i as f64 - 9.5).collect();
        let w = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(w.method, PMethod::Normal);
        assert!(w.p_value > 0.0 && w.p_value < 0.05);
    }
}
