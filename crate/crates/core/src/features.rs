//! Per-run metrics and the feature matrix handed to the prompt.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::LrsInstance;

/// Mantissa digits after the point in prompt rows (three significant digits).
pub const DEFAULT_PRECISION: usize = 2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("instance has no runs")]
    EmptyInstance,
    #[error("metric set is empty")]
    EmptyMetricSet,
    #[error("metric {0} listed twice")]
    DuplicateMetric(&'static str),
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error("unknown metric set {0:?}")]
    UnknownMetricSet(String),
}

/// How the distance metric treats a character that never recurs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceDefault {
    /// `NextPos` defaults to `n`, giving `(n - e_i) / n`.
    #[default]
    StringEnd,
    /// Distance is 1.0.
    One,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    NormalizedLength,
    Opportunity,
    DistanceNext,
    CharacterFrequency,
    CharacterChangeFrequency,
    SequenceBreakPotential,
    ImmediateNextRunLength,
    ExternalFragmentationPotential,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::NormalizedLength,
        Metric::Opportunity,
        Metric::DistanceNext,
        Metric::CharacterFrequency,
        Metric::CharacterChangeFrequency,
        Metric::SequenceBreakPotential,
        Metric::ImmediateNextRunLength,
        Metric::ExternalFragmentationPotential,
    ];

    /// Column name used in headers and in the influence equation.
    pub fn name(self) -> &'static str {
        match self {
            Metric::NormalizedLength => "normalized-length",
            Metric::Opportunity => "opportunity",
            Metric::DistanceNext => "distance-next",
            Metric::CharacterFrequency => "character-frequency",
            Metric::CharacterChangeFrequency => "character-change-frequency",
            Metric::SequenceBreakPotential => "sequence-break-potential",
            Metric::ImmediateNextRunLength => "immediate-next-run-length",
            Metric::ExternalFragmentationPotential => "external-fragmentation-potential",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, FeatureError> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| FeatureError::UnknownMetric(name.to_string()))
    }

    /// Label used in the prompt's metric description list.
    pub fn title(self) -> &'static str {
        match self {
            Metric::NormalizedLength => "Normalized_length",
            Metric::Opportunity => "Opportunity",
            Metric::DistanceNext => "Distance_next",
            Metric::CharacterFrequency => "Global Character Frequency",
            Metric::CharacterChangeFrequency => "Character_change_frequency",
            Metric::SequenceBreakPotential => "Sequence_break_potential",
            Metric::ImmediateNextRunLength => "Immediate_next_run_length",
            Metric::ExternalFragmentationPotential => "External_fragmentation_potential",
        }
    }

    /// One-line definition matching what [`Metric::compute`] returns.
    pub fn description(self) -> &'static str {
        match self {
            Metric::NormalizedLength => "Length of the run divided by the maximum run length in the string.",
            Metric::Opportunity => {
                "Fraction of the alphabet whose characters still occur after the run ends."
            }
            Metric::DistanceNext => {
                "Distance from the run's end to the next occurrence of the same character, divided by the string length (measured to the string end if the character does not recur)."
            }
            Metric::CharacterFrequency => {
                "Number of occurrences of the run's character in the entire string divided by the string length."
            }
            Metric::CharacterChangeFrequency => {
                "Number of character changes after the run ends, divided by the string length minus one."
            }
            Metric::SequenceBreakPotential => {
                "Number of runs lying between the run and the next run of the same character, divided by the number of other runs."
            }
            Metric::ImmediateNextRunLength => {
                "Length of the following run divided by the maximum run length (0 for the last run)."
            }
            Metric::ExternalFragmentationPotential => {
                "Number of foreign characters between the run's end and the next occurrence of its character, divided by the string length."
            }
        }
    }

    /// Evaluates the metric for every run. Requires at least one run.
    pub fn compute(self, inst: &LrsInstance, distance_default: DistanceDefault) -> Vec<f64> {
        match self {
            Metric::NormalizedLength => normalized_length(inst),
            Metric::Opportunity => opportunity(inst),
            Metric::DistanceNext => distance_next(inst, distance_default),
            Metric::CharacterFrequency => character_frequency(inst),
            Metric::CharacterChangeFrequency => character_change_frequency(inst),
            Metric::SequenceBreakPotential => sequence_break_potential(inst),
            Metric::ImmediateNextRunLength => immediate_next_run_length(inst),
            Metric::ExternalFragmentationPotential => external_fragmentation_potential(inst),
        }
    }
}

/// `M_L(R_i) = l_i / l_max`.
pub fn normalized_length(inst: &LrsInstance) -> Vec<f64> {
    let lmax = inst.max_run_length() as f64;
    inst.runs().iter().map(|r| r.length as f64 / lmax).collect()
}

/// `M_O(R_i) = |Σ_{>i}| / |Σ|`, the share of the alphabet still occurring
/// after the run ends.
pub fn opportunity(inst: &LrsInstance) -> Vec<f64> {
    let sigma = inst.sigma() as f64;
    let mut seen = vec![false; inst.sigma()];
    let mut distinct = 0usize;
    let mut out = vec![0.0; inst.run_count()];
    for i in (0..inst.run_count()).rev() {
        out[i] = distinct as f64 / sigma;
        let s = inst.run_symbol(i);
        if !seen[s] {
            seen[s] = true;
            distinct += 1;
        }
    }
    out
}

// Index of the next run sharing run i's character, if any.
fn next_same_symbol_run(inst: &LrsInstance) -> Vec<Option<usize>> {
    let mut last: Vec<Option<usize>> = vec![None; inst.sigma()];
    let mut out = vec![None; inst.run_count()];
    for i in (0..inst.run_count()).rev() {
        let s = inst.run_symbol(i);
        out[i] = last[s];
        last[s] = Some(i);
    }
    out
}

/// `M_D(R_i) = (NextPos(c_i, e_i) - e_i) / n`.
///
/// Positions are 1-based in the formula; with 0-based `end` the recurring
/// case is `(next_start - end) / n` and the default case is
/// `(n - (end + 1)) / n`.
pub fn distance_next(inst: &LrsInstance, default: DistanceDefault) -> Vec<f64> {
    let n = inst.len() as f64;
    let runs = inst.runs();
    next_same_symbol_run(inst)
        .into_iter()
        .zip(runs)
        .map(|(next, r)| match (next, default) {
            (Some(j), _) => (runs[j].start - r.end()) as f64 / n,
            (None, DistanceDefault::StringEnd) => (inst.len() - (r.end() + 1)) as f64 / n,
            (None, DistanceDefault::One) => 1.0,
        })
        .collect()
}

/// `M_F(R_i) = count(c_i) / n`.
pub fn character_frequency(inst: &LrsInstance) -> Vec<f64> {
    let mut counts = vec![0usize; inst.sigma()];
    for (r, &s) in inst.runs().iter().zip(inst.run_symbols()) {
        counts[s] += r.length;
    }
    let n = inst.len() as f64;
    inst.run_symbols().iter().map(|&s| counts[s] as f64 / n).collect()
}

/// Character changes at positions after the run's end, over `n - 1`.
pub fn character_change_frequency(inst: &LrsInstance) -> Vec<f64> {
    let m = inst.run_count();
    if inst.len() < 2 {
        return vec![0.0; m];
    }
    let denom = (inst.len() - 1) as f64;
    (0..m).map(|i| (m - 1 - i) as f64 / denom).collect()
}

/// Runs strictly between `R_i` and the next run of the same character
/// (the runs lost by extending `R_i`'s block), over `m - 1`.
pub fn sequence_break_potential(inst: &LrsInstance) -> Vec<f64> {
    let m = inst.run_count();
    if m < 2 {
        return vec![0.0; m];
    }
    let denom = (m - 1) as f64;
    next_same_symbol_run(inst)
        .into_iter()
        .enumerate()
        .map(|(i, next)| next.map_or(0.0, |j| (j - i - 1) as f64 / denom))
        .collect()
}

/// `l_{i+1} / l_max`, zero for the last run.
pub fn immediate_next_run_length(inst: &LrsInstance) -> Vec<f64> {
    let lmax = inst.max_run_length() as f64;
    let runs = inst.runs();
    (0..runs.len())
        .map(|i| runs.get(i + 1).map_or(0.0, |r| r.length as f64 / lmax))
        .collect()
}

/// `(1/n) Σ_{k=e_i+1}^{NextPos-1} [S[k] != c_i]` with 1-based positions and
/// `NextPos` defaulting to `n`.
pub fn external_fragmentation_potential(inst: &LrsInstance) -> Vec<f64> {
    let n = inst.len();
    let text = inst.text();
    let runs = inst.runs();
    next_same_symbol_run(inst)
        .into_iter()
        .zip(runs)
        .map(|(next, r)| {
            let end1 = r.end() + 1;
            let next1 = next.map_or(n, |j| runs[j].start + 1);
            // 1-based k in (end1, next1) is 0-based k-1 in [end1, next1-1)
            let hi = next1.saturating_sub(1).max(end1);
            let count = text[end1..hi].iter().filter(|&&c| c != r.character).count();
            count as f64 / n as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricSetKind {
    Curated,
    Simple2,
    Random4,
    Custom,
}

/// An ordered, duplicate-free list of metrics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSet {
    kind: MetricSetKind,
    metrics: Vec<Metric>,
    #[serde(default)]
    distance_default: DistanceDefault,
}

impl MetricSet {
    /// `⟨M_L, M_O, M_D, M_F⟩`.
    pub fn curated() -> Self {
        Self::from_parts(
            MetricSetKind::Curated,
            vec![
                Metric::NormalizedLength,
                Metric::Opportunity,
                Metric::DistanceNext,
                Metric::CharacterFrequency,
            ],
        )
    }

    pub fn simple2() -> Self {
        Self::from_parts(MetricSetKind::Simple2, vec![Metric::NormalizedLength, Metric::Opportunity])
    }

    pub fn random4() -> Self {
        Self::from_parts(
            MetricSetKind::Random4,
            vec![
                Metric::CharacterChangeFrequency,
                Metric::SequenceBreakPotential,
                Metric::ImmediateNextRunLength,
                Metric::ExternalFragmentationPotential,
            ],
        )
    }

    pub fn custom(metrics: Vec<Metric>) -> Result<Self, FeatureError> {
        if metrics.is_empty() {
            return Err(FeatureError::EmptyMetricSet);
        }
        for (i, m) in metrics.iter().enumerate() {
            if metrics[..i].contains(m) {
                return Err(FeatureError::DuplicateMetric(m.name()));
            }
        }
        Ok(Self::from_parts(MetricSetKind::Custom, metrics))
    }

    /// `curated`, `simple2`, `random4`, or a comma-separated metric list.
    pub fn by_name(name: &str) -> Result<Self, FeatureError> {
        match name {
            "curated" => Ok(Self::curated()),
            "simple2" => Ok(Self::simple2()),
            "random4" => Ok(Self::random4()),
            other if other.contains(',') || Metric::from_name(other).is_ok() => Self::custom(
                other.split(',').map(|s| Metric::from_name(s.trim())).collect::<Result<_, _>>()?,
            ),
            other => Err(FeatureError::UnknownMetricSet(other.to_string())),
        }
    }

    fn from_parts(kind: MetricSetKind, metrics: Vec<Metric>) -> Self {
        Self { kind, metrics, distance_default: DistanceDefault::default() }
    }

    pub fn with_distance_default(mut self, d: DistanceDefault) -> Self {
        self.distance_default = d;
        self
    }

    pub fn kind(&self) -> MetricSetKind {
        self.kind
    }

    pub fn metrics(&self) -> &[Metric] {
        &self.metrics
    }

    pub fn len(&self) -> usize {
        self.metrics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.metrics.is_empty()
    }

    pub fn distance_default(&self) -> DistanceDefault {
        self.distance_default
    }
}

/// Which header line to emit for the data block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum HeaderStyle {
    #[default]
    Cleaned,
    /// The original prompt header, stray space included. Only differs from
    /// `Cleaned` for the curated set.
    Verbatim,
}

pub const VERBATIM_CURATED_HEADER: &str = "node,normalized-length,opportunity ,distance-next,character-frequency";

/// One row of metric values per run, every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    metrics: Vec<Metric>,
    rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn metrics(&self) -> &[Metric] {
        &self.metrics
    }

    pub fn metric_names(&self) -> Vec<&'static str> {
        self.metrics.iter().map(|m| m.name()).collect()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn column_count(&self) -> usize {
        self.metrics.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn header(&self, style: HeaderStyle) -> String {
        let curated = self.metrics == MetricSet::curated().metrics;
        if style == HeaderStyle::Verbatim && curated {
            return VERBATIM_CURATED_HEADER.to_string();
        }
        let mut h = String::from("run");
        for m in &self.metrics {
            h.push(',');
            h.push_str(m.name());
        }
        h
    }

    /// Header plus scientific-notation rows, newline terminated.
    pub fn to_csv(&self, style: HeaderStyle, precision: usize) -> String {
        let mut out = self.header(style);
        out.push('\n');
        for row in format_rows_scientific(self, precision) {
            out.push_str(&row);
            out.push('\n');
        }
        out
    }
}

/// Evaluates each metric of `set` on `inst`, in declared order.
pub fn build_feature_matrix(inst: &LrsInstance, set: &MetricSet) -> Result<FeatureMatrix, FeatureError> {
    if set.is_empty() {
        return Err(FeatureError::EmptyMetricSet);
    }
    if inst.run_count() == 0 {
        return Err(FeatureError::EmptyInstance);
    }
    let columns: Vec<Vec<f64>> =
        set.metrics.iter().map(|m| m.compute(inst, set.distance_default)).collect();
    let rows = (0..inst.run_count()).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
    Ok(FeatureMatrix { metrics: set.metrics.clone(), rows })
}

/// Formats a value as `<mantissa>e<exp>`, e.g. `3.00e-1`.
pub fn format_scientific(value: f64, precision: usize) -> String {
    format!("{value:.precision$e}")
}

/// Renders `<run id>,<v1>,<v2>,...` per run with 1-based run ids.
pub fn format_rows_scientific(matrix: &FeatureMatrix, precision: usize) -> Vec<String> {
    matrix
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut line = (i + 1).to_string();
            for v in row {
                let _ = write!(line, ",{}", format_scientific(*v, precision));
            }
            line
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1e-12;

    fn example() -> LrsInstance {
        LrsInstance::new("example", "ZZBCCZBBBC")
    }

    fn assert_close(got: &[f64], want: &[f64]) {
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < EPS, "{got:?} != {want:?}");
        }
    }

    #[test]
    fn curated_metrics_on_example() {
        let inst = example();
        assert_close(&normalized_length(&inst), &[2. / 3., 1. / 3., 2. / 3., 1. / 3., 1., 1. / 3.]);
        // R3 (CC) is followed by ZBBBC, so all three symbols remain.
        assert_close(&opportunity(&inst), &[1., 1., 1., 2. / 3., 1. / 3., 0.]);
        let d = distance_next(&inst, DistanceDefault::StringEnd);
        assert!((d[0] - 0.4).abs() < EPS);
        assert!((d[4] - 0.1).abs() < EPS);
        assert_close(&d, &[0.4, 0.4, 0.5, 0.4, 0.1, 0.0]);
        assert_close(&distance_next(&inst, DistanceDefault::One), &[0.4, 0.4, 0.5, 1.0, 1.0, 1.0]);
        assert_close(&character_frequency(&inst), &[0.3, 0.4, 0.3, 0.3, 0.4, 0.3]);
    }

    #[test]
    fn single_run_instance() {
        let inst = LrsInstance::new("a", "AAAA");
        assert_close(&normalized_length(&inst), &[1.0]);
        assert_close(&opportunity(&inst), &[0.0]);
        assert_close(&distance_next(&inst, DistanceDefault::StringEnd), &[0.0]);
        assert_close(&character_frequency(&inst), &[1.0]);
        assert_close(&external_fragmentation_potential(&inst), &[0.0]);
        assert_close(&immediate_next_run_length(&inst), &[0.0]);
    }

    #[test]
    fn random4_metrics_on_example() {
        let inst = example();
        assert_close(&character_change_frequency(&inst), &[5. / 9., 4. / 9., 3. / 9., 2. / 9., 1. / 9., 0.]);
        assert_close(&sequence_break_potential(&inst), &[2. / 5., 2. / 5., 2. / 5., 0., 0., 0.]);
        assert_close(&immediate_next_run_length(&inst), &[1. / 3., 2. / 3., 1. / 3., 1., 1. / 3., 0.]);
        // Z(0..=1): positions 3..5 (1-based) are B,C,C -> 3/10
        // B(2): 4..6 -> C,C,Z -> 3/10; C(3..=4): 6..9 -> Z,B,B,B -> 4/10
        // Z(5), B(6..=8), C(9) never recur: positions e+1..n-1
        assert_close(&external_fragmentation_potential(&inst), &[0.3, 0.3, 0.4, 0.3, 0.0, 0.0]);
    }

    #[test]
    fn matrix_shapes() {
        let inst = example();
        let curated = build_feature_matrix(&inst, &MetricSet::curated()).unwrap();
        assert_eq!((curated.row_count(), curated.column_count()), (6, 4));
        assert_close(&curated.column(1), &opportunity(&inst));
        let simple = build_feature_matrix(&inst, &MetricSet::simple2()).unwrap();
        assert_eq!((simple.row_count(), simple.column_count()), (6, 2));
        let empty = LrsInstance::new("empty", "");
        assert_eq!(build_feature_matrix(&empty, &MetricSet::curated()), Err(FeatureError::EmptyInstance));
    }

    #[test]
    fn metric_set_parsing() {
        assert_eq!(MetricSet::by_name("random4").unwrap(), MetricSet::random4());
        let c = MetricSet::by_name("opportunity,distance-next").unwrap();
        assert_eq!(c.metrics(), &[Metric::Opportunity, Metric::DistanceNext]);
        assert!(matches!(
            MetricSet::by_name("opportunity,opportunity"),
            Err(FeatureError::DuplicateMetric(_))
        ));
        assert!(MetricSet::by_name("nope").is_err());
        assert_eq!(MetricSet::custom(vec![]), Err(FeatureError::EmptyMetricSet));
    }

    #[test]
    fn scientific_formatting() {
        assert_eq!(format_scientific(0.3, 2), "3.00e-1");
        assert_eq!(format_scientific(1.0, 2), "1.00e0");
        assert_eq!(format_scientific(0.0, 2), "0.00e0");
        let m = build_feature_matrix(&example(), &MetricSet::curated()).unwrap();
        let rows = format_rows_scientific(&m, DEFAULT_PRECISION);
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0], "1,6.67e-1,1.00e0,4.00e-1,3.00e-1");
    }

    #[test]
    fn headers() {
        let m = build_feature_matrix(&example(), &MetricSet::curated()).unwrap();
        assert_eq!(m.header(HeaderStyle::Cleaned), "run,normalized-length,opportunity,distance-next,character-frequency");
        assert_eq!(m.header(HeaderStyle::Verbatim), VERBATIM_CURATED_HEADER);
        let s = build_feature_matrix(&example(), &MetricSet::simple2()).unwrap();
        assert_eq!(s.header(HeaderStyle::Verbatim), "run,normalized-length,opportunity");
    }
}
