//! Paired and blocked rank tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

/// Largest number of non-zero differences for which the signed-rank test
/// enumerates the exact null distribution.
pub const WILCOXON_EXACT_MAX: usize = 15;
pub const WILCOXON_MIN_PAIRS: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("samples have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} non-zero differences, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("need at least {needed} {what}, got {got}")]
    TooSmall { what: &'static str, needed: usize, got: usize },
    #[error("blocks have differing numbers of treatments")]
    Ragged,
    #[error("non-finite value in sample")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    /// First sample tends to be larger.
    #[default]
    Greater,
    Less,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences.
    pub statistic: f64,
    pub p_value: f64,
    /// Non-zero differences used.
    pub n: usize,
    pub method: WilcoxonMethod,
}

/// Ranks with ties given their average rank, 1-based.
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
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

// Sizes of tie groups among `values`.
fn tie_sizes(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut sizes = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        sizes.push(j - i + 1);
        i = j + 1;
    }
    sizes
}

/// Exact null distribution of the positive-rank sum for the given ranks,
/// each sign equally likely. Returns `(statistic, probability)` pairs in
/// increasing statistic order. Ranks must be multiples of one half.
pub fn signed_rank_null_distribution(ranks: &[f64]) -> Vec<(f64, f64)> {
    // Work in half-units so tied ranks stay integral.
    let halves: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = halves.iter().sum();
    let mut counts = vec![0f64; total + 1];
    counts[0] = 1.0;
    for &h in &halves {
        for s in (h..=total).rev() {
            counts[s] += counts[s - h];
        }
    }
    let patterns = 2f64.powi(ranks.len() as i32);
    counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0.0)
        .map(|(s, &c)| (s as f64 / 2.0, c / patterns))
        .collect()
}

/// Wilcoxon signed-rank test on the differences `x - y`. Zero differences
/// are dropped. With at most [`WILCOXON_EXACT_MAX`] remaining pairs the
/// p-value comes from the exact distribution of the observed (possibly
/// tied) ranks; otherwise from the tie-corrected normal approximation with
/// continuity correction.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64], alternative: Alternative) -> Result<WilcoxonResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let nonzero: Vec<f64> = diffs.into_iter().filter(|&d| d != 0.0).collect();
    let n = nonzero.len();
    if n < WILCOXON_MIN_PAIRS {
        return Err(StatsError::InsufficientData { needed: WILCOXON_MIN_PAIRS, got: n });
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w: f64 = nonzero.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();

    if n <= WILCOXON_EXACT_MAX {
        let dist = signed_rank_null_distribution(&ranks);
        let upper: f64 = dist.iter().filter(|(s, _)| *s >= w - 1e-9).map(|(_, p)| p).sum();
        let lower: f64 = dist.iter().filter(|(s, _)| *s <= w + 1e-9).map(|(_, p)| p).sum();
        let p = match alternative {
            Alternative::Greater => upper,
            Alternative::Less => lower,
            Alternative::TwoSided => (2.0 * upper.min(lower)).min(1.0),
        };
        return Ok(WilcoxonResult { statistic: w, p_value: p.min(1.0), n, method: WilcoxonMethod::Exact });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = tie_sizes(&abs).iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let mut d = w - mean;
    let sign = match alternative {
        Alternative::Greater => 1.0,
        Alternative::Less => -1.0,
        Alternative::TwoSided => d.signum() * f64::from(d != 0.0),
    };
    d -= 0.5 * sign;
    let z = d / var.sqrt();
    let normal = Normal::standard();
    let p = match alternative {
        Alternative::Greater => normal.sf(z),
        Alternative::Less => normal.cdf(z),
        Alternative::TwoSided => (2.0 * normal.sf(z.abs())).min(1.0),
    };
    Ok(WilcoxonResult { statistic: w, p_value: p, n, method: WilcoxonMethod::Normal })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub statistic: f64,
    pub p_value: f64,
    pub blocks: usize,
    pub treatments: usize,
    /// Average rank of each treatment over blocks, 1 = smallest value.
    pub mean_ranks: Vec<f64>,
}

/// Friedman rank test over `blocks[b][t]`, ranking treatments within each
/// block with ties averaged and applying the usual tie correction.
pub fn friedman_test(blocks: &[Vec<f64>]) -> Result<FriedmanResult, StatsError> {
    let n = blocks.len();
    if n < 2 {
        return Err(StatsError::TooSmall { what: "blocks", needed: 2, got: n });
    }
    let k = blocks[0].len();
    if blocks.iter().any(|b| b.len() != k) {
        return Err(StatsError::Ragged);
    }
    if k < 2 {
        return Err(StatsError::TooSmall { what: "treatments", needed: 2, got: k });
    }
    if blocks.iter().flatten().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut rank_sums = vec![0.0; k];
    let mut ties = 0.0;
    for block in blocks {
        for (j, r) in average_ranks(block).into_iter().enumerate() {
            rank_sums[j] += r;
        }
        ties += tie_sizes(block).iter().map(|&t| (t * t * t - t) as f64).sum::<f64>();
    }
    let (nf, kf) = (n as f64, k as f64);
    let mean_ranks = rank_sums.iter().map(|r| r / nf).collect();
    let correction = 1.0 - ties / (nf * (kf * kf * kf - kf));
    if correction <= 0.0 {
        return Ok(FriedmanResult { statistic: 0.0, p_value: 1.0, blocks: n, treatments: k, mean_ranks });
    }
    let ssq: f64 = rank_sums.iter().map(|r| r * r).sum();
    let raw = 12.0 / (nf * kf * (kf + 1.0)) * ssq - 3.0 * nf * (kf + 1.0);
    let statistic = (raw / correction).max(0.0);
    let chi = ChiSquared::new(kf - 1.0).expect("k >= 2");
    Ok(FriedmanResult { statistic, p_value: chi.sf(statistic), blocks: n, treatments: k, mean_ranks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn all_positive_six() {
        let x = [5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        let y = [1.0; 6];
        let r = wilcoxon_signed_rank(&x, &y, Alternative::Greater).unwrap();
        assert_eq!(r.method, WilcoxonMethod::Exact);
        assert_eq!(r.statistic, 21.0);
        assert!((r.p_value - 1.0 / 64.0).abs() < 1e-15);
        let two = wilcoxon_signed_rank(&x, &y, Alternative::TwoSided).unwrap();
        assert!((two.p_value - 2.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn antisymmetric_differences() {
        let d = [1.0, -1.0, 2.0, -2.0, 3.0, -3.0, 4.0, -4.0];
        let zeros = [0.0; 8];
        let two = wilcoxon_signed_rank(&d, &zeros, Alternative::TwoSided).unwrap();
        assert!((two.p_value - 1.0).abs() < 1e-12);
        let one = wilcoxon_signed_rank(&d, &zeros, Alternative::Greater).unwrap();
        assert!((one.p_value - 0.5).abs() < 0.1);
    }

    #[test]
    fn zero_differences_rejected() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(
            wilcoxon_signed_rank(&x, &x, Alternative::Greater),
            Err(StatsError::InsufficientData { needed: 5, got: 0 })
        );
        assert!(matches!(wilcoxon_signed_rank(&x, &x[..5], Alternative::Less), Err(StatsError::LengthMismatch(6, 5))));
    }

    #[test]
    fn null_distribution_sums_to_one() {
        for ranks in [vec![1.0, 2.0, 3.0], vec![1.5, 1.5, 3.0, 4.5, 4.5], (1..=15).map(f64::from).collect()] {
            let total: f64 = signed_rank_null_distribution(&ranks).iter().map(|(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_matches_brute_force_with_ties() {
        let d = [1.0, 1.0, -2.0, 3.0, 3.0, 3.0, -4.0, 5.0];
        let zeros = [0.0; 8];
        let r = wilcoxon_signed_rank(&d, &zeros, Alternative::Greater).unwrap();
        let ranks = average_ranks(&d.map(f64::abs));
        let mut hits = 0;
        for mask in 0u32..(1 << d.len()) {
            let s: f64 = (0..d.len()).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
            if s >= r.statistic - 1e-9 {
                hits += 1;
            }
        }
        assert!((r.p_value - hits as f64 / 256.0).abs() < 1e-15);
    }

    #[test]
    fn friedman_two_treatments_closed_form() {
        let blocks: Vec<Vec<f64>> = (0..10).map(|b| vec![10.0 + b as f64, b as f64]).collect();
        let r = friedman_test(&blocks).unwrap();
        // every block ranks A=2, B=1: sums 20 and 10
        assert!((r.statistic - 10.0).abs() < 1e-12);
        assert_eq!(r.mean_ranks, vec![2.0, 1.0]);
    }

    #[test]
    fn friedman_identical_data() {
        let r = friedman_test(&vec![vec![3.0, 3.0, 3.0]; 5]).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        assert!(friedman_test(&[vec![1.0, 2.0]]).is_err());
        assert!(friedman_test(&[vec![1.0], vec![2.0]]).is_err());
        assert_eq!(friedman_test(&[vec![1.0, 2.0], vec![1.0]]), Err(StatsError::Ragged));
    }
}
