//! The guidance prompt: problem statement, metric data, answer format.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::features::{format_rows_scientific, FeatureMatrix, HeaderStyle, Metric, MetricSet, DEFAULT_PRECISION};
use crate::instance::LrsInstance;

use super::LlmError;

pub const BEGIN_PROBLEM: &str = "[BEGIN PROBLEM]";
pub const END_PROBLEM: &str = "[END PROBLEM]";
pub const BEGIN_EVALUATION: &str = "[BEGIN EVALUATION SEQUENCE]";
pub const END_EVALUATION: &str = "[END EVALUATION SEQUENCE]";
pub const BEGIN_DATA: &str = "[BEGIN DATA]";
pub const END_DATA: &str = "[END DATA]";
pub const BEGIN_RULES: &str = "[BEGIN RULES ANSWERING]";
pub const END_RULES: &str = "[END RULES ANSWERING]";

/// Every marker in the order it must appear.
pub const MARKERS: [&str; 8] =
    [BEGIN_PROBLEM, END_PROBLEM, BEGIN_EVALUATION, BEGIN_DATA, END_DATA, END_EVALUATION, BEGIN_RULES, END_RULES];

const PROBLEM_TEXT: &str = "The Longest Run Subsequence (LRS) problem is defined as follows: Given an input string S over an alphabet Σ, the goal is to extract a subsequence S* composed of entire runs from S, such that each symbol from the alphabet appears in at most one run in S*, and the total length of S* is maximized. A run is a maximal sequence of consecutive identical characters. The selected runs in S* must preserve their original order in S, and cannot overlap.";

/// Descriptions used by the original template for the curated metrics.
fn verbatim_description(metric: Metric) -> Option<(&'static str, &'static str)> {
    match metric {
        Metric::NormalizedLength => {
            Some(("Normalized_length", "Length of the run divided by the total string length."))
        }
        Metric::Opportunity => Some((
            "Opportunity",
            "Estimated potential contribution of the run to the total LRS 1/(1+ gap), where gap= next_run_start - start.",
        )),
        Metric::DistanceNext => {
            Some(("Distance_next", "Normalized distance to the next occurrence of the same symbol."))
        }
        Metric::CharacterFrequency => Some((
            "Global Character Frequency",
            "Frequency of the character in the entire string divided by its total length.",
        )),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptStyle {
    /// Metric descriptions that match what is actually computed.
    #[default]
    Cleaned,
    /// The original wording and data header, inaccuracies included.
    Verbatim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOptions {
    pub style: PromptStyle,
    /// Digits after the decimal point in data rows.
    pub precision: usize,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self { style: PromptStyle::Cleaned, precision: DEFAULT_PRECISION }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub instance_name: String,
    pub problem_tag: String,
    pub evaluation_tag: String,
    pub rules_tag: String,
    pub rendered: String,
    /// Rough token count, one token per four characters.
    pub token_estimate: usize,
}

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Renders the prompt for `instance` from its feature matrix.
pub fn build_prompt(
    instance: &LrsInstance,
    matrix: &FeatureMatrix,
    options: &PromptOptions,
) -> Result<PromptBundle, LlmError> {
    if instance.run_count() == 0 {
        return Err(LlmError::Prompt("instance has no runs".into()));
    }
    if matrix.row_count() != instance.run_count() {
        return Err(LlmError::Prompt(format!(
            "matrix has {} rows but instance has {} runs",
            matrix.row_count(),
            instance.run_count()
        )));
    }

    let problem_tag = format!("{BEGIN_PROBLEM}\n\n{PROBLEM_TEXT}\n\n{END_PROBLEM}");

    let header_style = match options.style {
        PromptStyle::Cleaned => HeaderStyle::Cleaned,
        PromptStyle::Verbatim => HeaderStyle::Verbatim,
    };
    let mut evaluation_tag = format!("{BEGIN_EVALUATION}\n\nMetrics description:\n\n");
    for &metric in matrix.metrics() {
        let (title, description) = match (options.style, verbatim_description(metric)) {
            (PromptStyle::Verbatim, Some(td)) => td,
            _ => (metric.title(), metric.description()),
        };
        let _ = write!(evaluation_tag, "- {title}: {description}\n\n");
    }
    let _ = writeln!(evaluation_tag, "{BEGIN_DATA}\n");
    let _ = writeln!(evaluation_tag, "{}", matrix.header(header_style));
    for row in format_rows_scientific(matrix, options.precision) {
        let _ = writeln!(evaluation_tag, "{row}");
    }
    let _ = write!(evaluation_tag, "\n{END_DATA}\n\n{END_EVALUATION}");

    let rules_tag = rules(matrix.metrics());
    let rendered = format!("{problem_tag}\n\n{evaluation_tag}\n\n{rules_tag}\n");
    let token_estimate = estimate_tokens(&rendered);
    Ok(PromptBundle {
        instance_name: instance.name().to_string(),
        problem_tag,
        evaluation_tag,
        rules_tag,
        rendered,
        token_estimate,
    })
}

/// Convenience wrapper computing the matrix for `set` first.
pub fn build_prompt_for_set(
    instance: &LrsInstance,
    set: &MetricSet,
    options: &PromptOptions,
) -> Result<PromptBundle, LlmError> {
    let matrix =
        crate::features::build_feature_matrix(instance, set).map_err(|e| LlmError::Prompt(e.to_string()))?;
    build_prompt(instance, &matrix, options)
}

fn rules(metrics: &[Metric]) -> String {
    let k = metrics.len();
    let mut s = format!("{BEGIN_RULES}\n\nConsider the following equation to assign a probability range to each node:\n\n");
    s.push_str("Influence = sigmoid(\n");
    for (i, m) in metrics.iter().enumerate() {
        let lead = if i == 0 { "    " } else { "  + " };
        let _ = writeln!(s, "{lead}alpha_{n} * (1 - (beta_{n} - {name}))", n = i + 1, name = m.name());
    }
    s.push_str(")\n\n");
    let _ = writeln!(
        s,
        "- Alpha: Represents the weighting coefficients assigned to each metric. The sum of all alpha values must equal 1 (sum_{{i=1}}^{{{k}}} alpha_i = 1), and each alpha value (alpha_i) is constrained to the range (0, 1)."
    );
    s.push_str(
        "- Beta: Represents a factor of desirable results for each metric. Each beta value (beta_i) is independent and constrained to the range (0, 1).\n\n",
    );
    s.push_str("The response must be only in the following format:\n\n");
    for i in 1..=k {
        let _ = writeln!(s, "alpha_{i}={{{{value_alpha_{i}}}}}");
    }
    for i in 1..=k {
        let _ = writeln!(s, "beta_{i}={{{{value_beta_{i}}}}}");
    }
    s.push('\n');
    s.push_str(END_RULES);
    s
}

/// Checks that every marker occurs exactly once and in order, and that the
/// data block holds a header and `expected_rows` rows of `columns + 1`
/// comma-separated fields.
pub fn validate_prompt(rendered: &str, expected_rows: usize, columns: usize) -> Result<(), String> {
    let mut last = 0;
    for marker in MARKERS {
        let count = rendered.matches(marker).count();
        if count != 1 {
            return Err(format!("{marker} occurs {count} times"));
        }
        let pos = rendered.find(marker).expect("counted above");
        if pos < last {
            return Err(format!("{marker} is out of order"));
        }
        last = pos;
    }
    let start = rendered.find(BEGIN_DATA).expect("checked") + BEGIN_DATA.len();
    let end = rendered.find(END_DATA).expect("checked");
    let lines: Vec<&str> = rendered[start..end].lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if lines.len() != expected_rows + 1 {
        return Err(format!("data block has {} lines, expected {}", lines.len(), expected_rows + 1));
    }
    for (i, line) in lines.iter().enumerate() {
        let fields = line.split(',').count();
        if fields != columns + 1 {
            return Err(format!("data line {i} has {fields} fields, expected {}", columns + 1));
        }
        if i > 0 && line.split(',').skip(1).any(|f| f.parse::<f64>().is_err()) {
            return Err(format!("data line {i} has a non-numeric value"));
        }
    }
    Ok(())
}
