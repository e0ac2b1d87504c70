//! RMSE, boxplot summaries and the Wilcoxon signed-rank test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest effective sample size for which exact p-values are computed.
pub const EXACT_CUTOFF: usize = 25;
/// Smallest paired sample accepted by the signed-rank test.
pub const MIN_PAIRS: usize = 5;

pub fn rmse(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Domain("rmse of an empty sequence".into()));
    }
    let ss: f64 = errors.iter().map(|e| e * e).sum();
    Ok((ss / errors.len() as f64).sqrt())
}

/// Quantile by linear interpolation between order statistics of a sorted
/// slice (the `(n - 1) p` convention).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("median of an empty sequence".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&v, 0.5))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotSummary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Smallest observation within `q1 - 1.5 IQR`.
    pub whisker_low: f64,
    /// Largest observation within `q3 + 1.5 IQR`.
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

pub fn boxplot_summary(values: &[f64]) -> Result<BoxplotSummary> {
    if values.is_empty() {
        return Err(Error::Domain("boxplot of an empty sequence".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain("boxplot input contains NaN".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&v, 0.25);
    let median = quantile_sorted(&v, 0.5);
    let q3 = quantile_sorted(&v, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = v.iter().copied().filter(|x| (lo..=hi).contains(x));
    let whisker_low = inside.clone().fold(f64::INFINITY, f64::min);
    let whisker_high = inside.fold(f64::NEG_INFINITY, f64::max);
    let outliers = v
        .iter()
        .copied()
        .filter(|x| !(lo..=hi).contains(x))
        .collect();
    Ok(BoxplotSummary {
        median,
        q1,
        q3,
        whisker_low,
        whisker_high,
        outliers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    NormalApproximation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Pairs left after dropping zero differences.
    pub n_effective: usize,
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub p_value: f64,
    pub method: WilcoxonMethod,
    /// Set when every difference was zero.
    pub degenerate: bool,
}

/// Average ranks (1-based) of `values`, ties sharing the mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = 0.5 * ((i + 1) + (j + 1)) as f64;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided signed-rank test of the paired differences `a - b`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < MIN_PAIRS {
        return Err(Error::Domain(format!(
            "signed-rank test needs at least {MIN_PAIRS} pairs, got {}",
            a.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Domain("non-finite paired difference".into()));
    }
    let nz: Vec<f64> = diffs.into_iter().filter(|&d| d != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            n_effective: 0,
            statistic: 0.0,
            p_value: 1.0,
            method: if a.len() <= EXACT_CUTOFF {
                WilcoxonMethod::Exact
            } else {
                WilcoxonMethod::NormalApproximation
            },
            degenerate: true,
        });
    }
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = ranks
        .iter()
        .zip(&nz)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w = w_plus.min(total - w_plus);
    let (p, method) = if n <= EXACT_CUTOFF {
        (exact_p(&ranks, w), WilcoxonMethod::Exact)
    } else {
        (normal_p(&ranks, w), WilcoxonMethod::NormalApproximation)
    };
    Ok(WilcoxonResult {
        n_effective: n,
        statistic: w,
        p_value: p.clamp(0.0, 1.0),
        method,
        degenerate: false,
    })
}

/// Exact null distribution of `W+` over all `2^n` sign assignments, counted
/// with a subset-sum recursion on doubled ranks (average ranks are
/// half-integers, so doubling makes them integral).
fn exact_p(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; max + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let target = (2.0 * w).round() as usize;
    let tail: f64 = counts[..=target.min(max)].iter().sum();
    let total = 2f64.powi(ranks.len() as i32);
    (2.0 * tail / total).min(1.0)
}

fn normal_p(ranks: &[f64], w: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    // Tie correction: subtract sum(t^3 - t) / 48 over tie groups.
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::standard();
    (2.0 * normal.sf(z)).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: enumerate every sign assignment.
    fn brute_force_p(a: &[f64], b: &[f64]) -> f64 {
        let nz: Vec<f64> = a
            .iter()
            .zip(b)
            .map(|(x, y)| x - y)
            .filter(|d| *d != 0.0)
            .collect();
        let ranks = average_ranks(&nz.iter().map(|d| d.abs()).collect::<Vec<_>>());
        let n = nz.len();
        let total: f64 = ranks.iter().sum();
        let wp: f64 = ranks
            .iter()
            .zip(&nz)
            .filter(|(_, d)| **d > 0.0)
            .map(|(r, _)| r)
            .sum();
        let w = wp.min(total - wp);
        let mut extreme = 0u64;
        for mask in 0u64..(1 << n) {
            let s: f64 = (0..n)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| ranks[i])
                .sum();
            if s.min(total - s) <= w + 1e-9 {
                extreme += 1;
            }
        }
        extreme as f64 / (1u64 << n) as f64
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(rmse(&[3.0, 4.0]).unwrap(), 12.5f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(rmse(&[-2.0, 2.0]).unwrap(), 2.0, epsilon = 1e-12);
        assert!(rmse(&[]).is_err());
    }

    #[test]
    fn boxplot_examples() {
        let b = boxplot_summary(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((b.median, b.q1, b.q3), (3.0, 2.0, 4.0));
        assert_eq!((b.whisker_low, b.whisker_high), (1.0, 5.0));
        assert!(b.outliers.is_empty());
        let b = boxplot_summary(&[7.5]).unwrap();
        assert_eq!(
            b,
            BoxplotSummary {
                median: 7.5,
                q1: 7.5,
                q3: 7.5,
                whisker_low: 7.5,
                whisker_high: 7.5,
                outliers: vec![]
            }
        );
        let b = boxplot_summary(&[1.0, 1.0, 1.0, 100.0]).unwrap();
        assert_eq!(b.outliers, vec![100.0]);
        assert_eq!(b.whisker_high, 1.0);
        // Whiskers stay on data even when a quartile is interpolated past it.
        let b = boxplot_summary(&[0.0, 100.0, 100.0, 100.0]).unwrap();
        assert_eq!(
            (b.q1, b.whisker_low, b.outliers.clone()),
            (75.0, 100.0, vec![0.0])
        );
        assert!(boxplot_summary(&[]).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(
            average_ranks(&[3.0, 1.0, 3.0, 2.0]),
            vec![3.5, 1.0, 3.5, 2.0]
        );
    }

    #[test]
    fn identical_samples_are_degenerate() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = wilcoxon_signed_rank(&a, &a).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn all_positive_six() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [0.0; 6];
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.method, WilcoxonMethod::Exact);
        assert_abs_diff_eq!(r.p_value, 2.0 / 64.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(wilcoxon_signed_rank(&[1.0; 5], &[1.0; 6]).is_err());
        assert!(wilcoxon_signed_rank(&[1.0; 4], &[0.0; 4]).is_err());
    }

    #[test]
    fn exact_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let a: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..10.0)).collect();
            let b: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..10.0)).collect();
            let r = wilcoxon_signed_rank(&a, &b).unwrap();
            assert_eq!(r.method, WilcoxonMethod::Exact);
            assert_abs_diff_eq!(r.p_value, brute_force_p(&a, &b), epsilon = 1e-12);
        }
    }

    #[test]
    fn exact_matches_enumeration_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a: Vec<f64> = (0..12).map(|_| rng.random_range(0..6) as f64).collect();
            let b: Vec<f64> = (0..12).map(|_| rng.random_range(0..6) as f64).collect();
            if a == b {
                continue;
            }
            let r = wilcoxon_signed_rank(&a, &b).unwrap();
            assert_abs_diff_eq!(r.p_value, brute_force_p(&a, &b), epsilon = 1e-12);
        }
    }

    #[test]
    fn approximation_close_to_exact_at_cutoff() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let a: Vec<f64> = (0..EXACT_CUTOFF)
                .map(|_| rng.random_range(0.0..1.0))
                .collect();
            let b: Vec<f64> = (0..EXACT_CUTOFF)
                .map(|_| rng.random_range(0.2..1.2))
                .collect();
            let nz: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let ranks = average_ranks(&nz.iter().map(|d| d.abs()).collect::<Vec<_>>());
            let total: f64 = ranks.iter().sum();
            let wp: f64 = ranks
                .iter()
                .zip(&nz)
                .filter(|(_, d)| **d > 0.0)
                .map(|(r, _)| r)
                .sum();
            let w = wp.min(total - wp);
            let exact = exact_p(&ranks, w);
            let approx = normal_p(&ranks, w);
            assert!((exact - approx).abs() < 0.01, "{exact} vs {approx}");
        }
    }

    #[test]
    fn large_samples_use_normal_approximation() {
        let a: Vec<f64> = (0..140).map(|i| i as f64 * 0.1 + 1.0).collect();
        let b: Vec<f64> = (0..140).map(|i| i as f64 * 0.1).collect();
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.method, WilcoxonMethod::NormalApproximation);
        assert!(r.p_value < 1e-20);
    }

    proptest! {
        #[test]
        fn rmse_permutation_and_sign_invariant(v in prop::collection::vec(-100.0f64..100.0, 1..40), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let base = rmse(&v).unwrap();
            let mut w: Vec<f64> = v.iter().map(|x| -x).collect();
            w.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert!((rmse(&w).unwrap() - base).abs() <= 1e-12 * base.max(1.0));
            prop_assert!(base >= 0.0);
        }

        #[test]
        fn boxplot_ordering(v in prop::collection::vec(-100.0f64..100.0, 1..60)) {
            let b = boxplot_summary(&v).unwrap();
            let iqr = b.q3 - b.q1;
            prop_assert!(b.q1 <= b.median && b.median <= b.q3);
            let (lo, hi) = (b.q1 - 1.5 * iqr, b.q3 + 1.5 * iqr);
            prop_assert!(v.contains(&b.whisker_low) && v.contains(&b.whisker_high));
            prop_assert!(b.whisker_low >= lo && b.whisker_high <= hi);
            prop_assert!(b.whisker_low <= b.median && b.median <= b.whisker_high);
            for o in &b.outliers {
                prop_assert!(*o < b.q1 - 1.5 * iqr || *o > b.q3 + 1.5 * iqr);
            }
        }

        #[test]
        fn p_value_symmetric_and_bounded(
            pairs in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 5..60)
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let x = wilcoxon_signed_rank(&a, &b).unwrap();
            let y = wilcoxon_signed_rank(&b, &a).unwrap();
            prop_assert_eq!(x.p_value, y.p_value);
            prop_assert!((0.0..=1.0).contains(&x.p_value));
            if x.n_effective <= EXACT_CUTOFF {
                prop_assert_eq!(x.method, WilcoxonMethod::Exact);
            }
        }
    }
}
