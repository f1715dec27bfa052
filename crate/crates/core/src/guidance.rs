//! Alpha-beta coefficients, the influence equation and bias vectors.
//!
//! Each run's bias is `sigmoid(Σ_j α_j · (1 − (β_j − metric_j)))`, where
//! the α weights sum to one and every β is a target value in (0, 1).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::LazyLock;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;

/// Tolerance on `Σα = 1` for an already valid coefficient set.
pub const ALPHA_SUM_TOLERANCE: f64 = 1e-6;

/// Largest `|Σα − 1|` the parser repairs by rescaling.
pub const ALPHA_RENORMALIZE_TOLERANCE: f64 = 0.05;

/// Clamp interval used for β by lenient parsing.
pub const LENIENT_BETA_MIN: f64 = 1e-6;
pub const LENIENT_BETA_MAX: f64 = 1.0 - 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GuidanceError {
    #[error("expected {expected} coefficients, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("alpha_{index} = {value} is outside (0, 1)")]
    AlphaOutOfRange { index: usize, value: f64 },
    #[error("beta_{index} = {value} is outside (0, 1)")]
    BetaOutOfRange { index: usize, value: f64 },
    #[error("alphas sum to {sum}, not 1")]
    AlphaSum { sum: f64 },
    #[error("bias value {value} for run {index} is outside (0, 1)")]
    BiasOutOfRange { index: usize, value: f64 },
    #[error("need at least one coefficient pair")]
    Empty,
}

/// Who produced a coefficient set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientSource {
    Llm,
    Manual,
    Random,
}

/// Validated `α_1..α_k`, `β_1..β_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaBeta {
    alphas: Vec<f64>,
    betas: Vec<f64>,
    source: CoefficientSource,
}

impl AlphaBeta {
    /// Checks `α_i ∈ (0, 1)`, `|Σα − 1| ≤ 1e-6` and `β_i ∈ (0, 1)`. With a
    /// single metric the only admissible weight is `α_1 = 1`.
    pub fn new(alphas: Vec<f64>, betas: Vec<f64>, source: CoefficientSource) -> Result<Self, GuidanceError> {
        if alphas.is_empty() {
            return Err(GuidanceError::Empty);
        }
        if alphas.len() != betas.len() {
            return Err(GuidanceError::Dimension { expected: alphas.len(), got: betas.len() });
        }
        let single = alphas.len() == 1;
        for (i, &a) in alphas.iter().enumerate() {
            let ok = a.is_finite() && a > 0.0 && (a < 1.0 || single);
            if !ok {
                return Err(GuidanceError::AlphaOutOfRange { index: i + 1, value: a });
            }
        }
        for (i, &b) in betas.iter().enumerate() {
            if !(b.is_finite() && b > 0.0 && b < 1.0) {
                return Err(GuidanceError::BetaOutOfRange { index: i + 1, value: b });
            }
        }
        let sum: f64 = alphas.iter().sum();
        if (sum - 1.0).abs() > ALPHA_SUM_TOLERANCE {
            return Err(GuidanceError::AlphaSum { sum });
        }
        Ok(Self { alphas, betas, source })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn source(&self) -> CoefficientSource {
        self.source
    }

    pub fn k(&self) -> usize {
        self.alphas.len()
    }

    /// Canonical `key=value` block, one coefficient per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, a) in self.alphas.iter().enumerate() {
            let _ = writeln!(out, "alpha_{}={a}", i + 1);
        }
        for (i, b) in self.betas.iter().enumerate() {
            let _ = writeln!(out, "beta_{}={b}", i + 1);
        }
        out
    }

    /// CSV header matching [`AlphaBeta::csv_record`].
    pub fn csv_header(k: usize) -> Vec<String> {
        let mut h = vec!["instance".to_string(), "model".to_string()];
        h.extend((1..=k).map(|i| format!("alpha_{i}")));
        h.extend((1..=k).map(|i| format!("beta_{i}")));
        h
    }

    /// `instance, model, α1..αk, β1..βk`.
    pub fn csv_record(&self, instance: &str, model: &str) -> Vec<String> {
        let mut r = vec![instance.to_string(), model.to_string()];
        r.extend(self.alphas.iter().map(|a| a.to_string()));
        r.extend(self.betas.iter().map(|b| b.to_string()));
        r
    }
}

/// Standard logistic function.
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Pre-sigmoid weighted sum `Σ α_i · (1 − (β_i − metric_i))`, with no
/// validation of the coefficients.
pub fn influence_sum(row: &[f64], alphas: &[f64], betas: &[f64]) -> f64 {
    row.iter()
        .zip(alphas)
        .zip(betas)
        .map(|((m, a), b)| a * (1.0 - (b - m)))
        .sum()
}

/// Influence of one feature row.
pub fn influence(row: &[f64], ab: &AlphaBeta) -> Result<f64, GuidanceError> {
    if row.len() != ab.k() {
        return Err(GuidanceError::Dimension { expected: ab.k(), got: row.len() });
    }
    Ok(sigmoid(influence_sum(row, &ab.alphas, &ab.betas)))
}

/// Where a bias vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasProvenance {
    Llm,
    RandomStatic,
    RandomDynamic,
    Uniform,
}

/// Per-run selection probabilities, each in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVector {
    values: Vec<f64>,
    provenance: BiasProvenance,
}

impl BiasVector {
    /// Fails if any value lies outside (0, 1).
    pub fn new(values: Vec<f64>, provenance: BiasProvenance) -> Result<Self, GuidanceError> {
        if let Some((i, &v)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0 && **v < 1.0)) {
            return Err(GuidanceError::BiasOutOfRange { index: i + 1, value: v });
        }
        Ok(Self { values, provenance })
    }

    /// `L_i = 0.5` for every run.
    pub fn uniform(m: usize) -> Self {
        Self { values: vec![0.5; m], provenance: BiasProvenance::Uniform }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provenance(&self) -> BiasProvenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Applies the influence equation to every row of `matrix`.
pub fn build_bias(matrix: &FeatureMatrix, ab: &AlphaBeta) -> Result<BiasVector, GuidanceError> {
    let values = matrix.rows().iter().map(|row| influence(row, ab)).collect::<Result<_, _>>()?;
    Ok(BiasVector { values, provenance: BiasProvenance::Llm })
}

fn open_unit_vector(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    (0..m).map(|_| rng.sample(Open01)).collect()
}

/// One uniform draw from (0, 1)^m, fixed for the whole run.
pub fn random_bias_static(m: usize, seed: u64) -> BiasVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BiasVector { values: open_unit_vector(&mut rng, m), provenance: BiasProvenance::RandomStatic }
}

/// Supplies a fresh uniform (0, 1)^m vector per generation.
#[derive(Debug, Clone)]
pub struct RandomBiasStream {
    rng: ChaCha8Rng,
    m: usize,
}

impl RandomBiasStream {
    pub fn new(m: usize, seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), m }
    }

    pub fn next_vector(&mut self) -> BiasVector {
        BiasVector { values: open_unit_vector(&mut self.rng, self.m), provenance: BiasProvenance::RandomDynamic }
    }
}

/// What went wrong while reading coefficients out of a model response.
#[derive(Debug, Error, PartialEq)]
pub enum ParseErrorKind {
    #[error("missing key {0}")]
    MissingKey(String),
    #[error("value {value:?} for {key} is not a number")]
    NonNumeric { key: String, value: String },
    #[error("alphas sum to {sum}, more than {ALPHA_RENORMALIZE_TOLERANCE} away from 1")]
    AlphaSum { sum: f64 },
    #[error(transparent)]
    Invalid(#[from] GuidanceError),
}

/// A rejected response, carrying the raw text so callers can log or retry.
#[derive(Debug, Error, PartialEq)]
#[error("could not parse alpha-beta block: {kind}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub raw: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOptions {
    /// Clamp β values of exactly 0 or 1 into the open interval instead of
    /// rejecting them.
    #[serde(default)]
    pub lenient: bool,
}

static KEY_VALUE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(alpha|beta)\s*\\?_\s*\{?(\d+)\}?[\s*`$]*[=:]\s*([^\r\n]*)").expect("static regex")
});

// Leading number of a value cell such as `{{0.4}}`, `**0.4**` or `0.4,`.
fn numeric_prefix(cell: &str) -> Option<f64> {
    let cell = cell.trim_start_matches(|c: char| c.is_whitespace() || "{*`\"'$(".contains(c));
    let end = cell
        .char_indices()
        .find(|&(_, c)| !(c.is_ascii_digit() || ".+-eE".contains(c)))
        .map_or(cell.len(), |(i, _)| i);
    let v: f64 = cell[..end].parse().ok()?;
    v.is_finite().then_some(v)
}

/// Extracts `alpha_1..alpha_k` and `beta_1..beta_k` from free text.
///
/// Prose, code fences, markdown emphasis and template braces around values
/// are ignored; when a key occurs more than once the last occurrence wins.
/// Alphas summing to within 0.05 of one are rescaled to sum exactly to one.
pub fn parse_alpha_beta(text: &str, k: usize, opts: ParseOptions) -> Result<AlphaBeta, ParseError> {
    let fail = |kind: ParseErrorKind| ParseError { kind, raw: text.to_string() };
    let mut found: BTreeMap<(bool, usize), f64> = BTreeMap::new();
    for cap in KEY_VALUE.captures_iter(text) {
        let is_alpha = cap[1].eq_ignore_ascii_case("alpha");
        let Ok(index) = cap[2].parse::<usize>() else { continue };
        if index == 0 || index > k {
            continue;
        }
        let cell = cap[3].trim();
        let value = numeric_prefix(cell).ok_or_else(|| {
            let key = format!("{}_{index}", if is_alpha { "alpha" } else { "beta" });
            fail(ParseErrorKind::NonNumeric { key, value: cell.to_string() })
        })?;
        found.insert((is_alpha, index), value);
    }

    let collect = |is_alpha: bool| -> Result<Vec<f64>, ParseError> {
        (1..=k)
            .map(|i| {
                found.get(&(is_alpha, i)).copied().ok_or_else(|| {
                    fail(ParseErrorKind::MissingKey(format!("{}_{i}", if is_alpha { "alpha" } else { "beta" })))
                })
            })
            .collect()
    };
    let mut alphas = collect(true)?;
    let mut betas = collect(false)?;

    let sum: f64 = alphas.iter().sum();
    if (sum - 1.0).abs() > ALPHA_RENORMALIZE_TOLERANCE {
        return Err(fail(ParseErrorKind::AlphaSum { sum }));
    }
    if (sum - 1.0).abs() > ALPHA_SUM_TOLERANCE {
        alphas.iter_mut().for_each(|a| *a /= sum);
    }
    if opts.lenient {
        for b in betas.iter_mut().filter(|b| (0.0..=1.0).contains(*b)) {
            *b = b.clamp(LENIENT_BETA_MIN, LENIENT_BETA_MAX);
        }
    }
    AlphaBeta::new(alphas, betas, CoefficientSource::Llm).map_err(|e| fail(e.into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_feature_matrix, MetricSet};
    use crate::instance::LrsInstance;

    fn ab(alphas: &[f64], betas: &[f64]) -> AlphaBeta {
        AlphaBeta::new(alphas.to_vec(), betas.to_vec(), CoefficientSource::Manual).unwrap()
    }

    #[test]
    fn influence_at_targets_is_sigmoid_one() {
        let row = [0.3, 0.6, 0.1, 0.9];
        let coeffs = ab(&[0.4, 0.3, 0.2, 0.1], &row);
        let v = influence(&row, &coeffs).unwrap();
        assert!((v - 0.7310585786300049).abs() < 1e-12);
    }

    #[test]
    fn influence_extreme_weights() {
        let x = influence_sum(&[1.0; 4], &[0.97, 0.01, 0.01, 0.01], &[0.0; 4]);
        assert!((sigmoid(x) - 0.8807970779778823).abs() < 1e-12);
    }

    #[test]
    fn influence_rejects_dimension_mismatch() {
        let coeffs = ab(&[0.5, 0.5], &[0.5, 0.5]);
        assert_eq!(influence(&[0.1], &coeffs), Err(GuidanceError::Dimension { expected: 2, got: 1 }));
    }

    #[test]
    fn alpha_beta_validation() {
        assert!(matches!(
            AlphaBeta::new(vec![1.0, 0.0], vec![0.5, 0.5], CoefficientSource::Manual),
            Err(GuidanceError::AlphaOutOfRange { index: 1, .. })
        ));
        assert!(matches!(
            AlphaBeta::new(vec![0.5, 0.4], vec![0.5, 0.5], CoefficientSource::Manual),
            Err(GuidanceError::AlphaSum { .. })
        ));
        assert!(matches!(
            AlphaBeta::new(vec![0.5, 0.5], vec![0.5, 1.0], CoefficientSource::Manual),
            Err(GuidanceError::BetaOutOfRange { index: 2, .. })
        ));
        assert!(AlphaBeta::new(vec![1.0], vec![0.5], CoefficientSource::Manual).is_ok());
    }

    #[test]
    fn bias_on_example_matches_hand_evaluation() {
        let inst = LrsInstance::new("example", "ZZBCCZBBBC");
        let matrix = build_feature_matrix(&inst, &MetricSet::curated()).unwrap();
        let bias = build_bias(&matrix, &ab(&[0.25; 4], &[0.5; 4])).unwrap();
        // x_i = 0.5 + 0.25 * (M_L + M_O + M_D + M_F)
        let rows = [
            [2. / 3., 1., 0.4, 0.3],
            [1. / 3., 1., 0.4, 0.4],
            [2. / 3., 1., 0.5, 0.3],
            [1. / 3., 2. / 3., 0.4, 0.3],
            [1., 1. / 3., 0.1, 0.4],
            [1. / 3., 0., 0.0, 0.3],
        ];
        for (got, row) in bias.values().iter().zip(rows) {
            let x = 0.5 + 0.25 * row.iter().sum::<f64>();
            assert!((got - 1.0 / (1.0 + (-x).exp())).abs() < 1e-12);
        }
        assert_eq!(bias.len(), 6);
    }

    #[test]
    fn random_suppliers() {
        let a = random_bias_static(50, 3);
        assert_eq!(a, random_bias_static(50, 3));
        let mut stream = RandomBiasStream::new(50, 3);
        let g1 = stream.next_vector();
        let g2 = stream.next_vector();
        assert_ne!(g1.values(), g2.values());
        assert!(g1.values().iter().chain(g2.values()).all(|&v| v > 0.0 && v < 1.0));
    }

    const BLOCK: &str = "alpha_1=0.4\nalpha_2=0.3\nalpha_3=0.2\nalpha_4=0.1\nbeta_1=0.9\nbeta_2=0.8\nbeta_3=0.2\nbeta_4=0.5\n";

    #[test]
    fn parse_plain_block() {
        let got = parse_alpha_beta(BLOCK, 4, ParseOptions::default()).unwrap();
        assert_eq!(got.alphas(), &[0.4, 0.3, 0.2, 0.1]);
        assert_eq!(got.betas(), &[0.9, 0.8, 0.2, 0.5]);
    }

    #[test]
    fn parse_rejects_closed_interval_beta() {
        let text = BLOCK.replace("beta_2=0.8", "beta_2=1.0");
        let err = parse_alpha_beta(&text, 4, ParseOptions::default()).unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::Invalid(GuidanceError::BetaOutOfRange { index: 2, .. })));
        assert_eq!(err.raw, text);
        let lenient = parse_alpha_beta(&text, 4, ParseOptions { lenient: true }).unwrap();
        assert_eq!(lenient.betas()[1], LENIENT_BETA_MAX);
    }

    #[test]
    fn parse_renormalizes_small_drift() {
        let text = BLOCK.replace("alpha_1=0.4", "alpha_1=0.42");
        let got = parse_alpha_beta(&text, 4, ParseOptions::default()).unwrap();
        let expected = [0.42 / 1.02, 0.3 / 1.02, 0.2 / 1.02, 0.1 / 1.02];
        for (g, e) in got.alphas().iter().zip(expected) {
            assert!((g - e).abs() < 1e-15);
        }
        let far = BLOCK.replace("alpha_1=0.4", "alpha_1=0.5");
        assert!(matches!(
            parse_alpha_beta(&far, 4, ParseOptions::default()).unwrap_err().kind,
            ParseErrorKind::AlphaSum { .. }
        ));
    }

    #[test]
    fn parse_missing_and_garbage() {
        let text = BLOCK.replace("beta_3=0.2\n", "");
        assert_eq!(
            parse_alpha_beta(&text, 4, ParseOptions::default()).unwrap_err().kind,
            ParseErrorKind::MissingKey("beta_3".into())
        );
        let text = BLOCK.replace("alpha_2=0.3", "alpha_2=high");
        assert!(matches!(
            parse_alpha_beta(&text, 4, ParseOptions::default()).unwrap_err().kind,
            ParseErrorKind::NonNumeric { .. }
        ));
        assert!(parse_alpha_beta("I cannot help with that.", 4, ParseOptions::default()).is_err());
    }

    #[test]
    fn csv_record_layout() {
        let coeffs = ab(&[0.5, 0.5], &[0.1, 0.9]);
        assert_eq!(AlphaBeta::csv_header(2), ["instance", "model", "alpha_1", "alpha_2", "beta_1", "beta_2"]);
        assert_eq!(coeffs.csv_record("x", "m"), ["x", "m", "0.5", "0.5", "0.1", "0.9"]);
    }
}
