//! Per-group summaries of result rows.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ResultRow;

/// Which time column feeds the group mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeBasis {
    #[default]
    TimeToBest,
    Runtime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub n: usize,
    pub sigma: usize,
    pub variant: String,
    pub count: usize,
    pub mean_score: f64,
    pub mean_time_s: f64,
    /// Highest mean score among the variants of this (n, σ) cell.
    pub best: bool,
}

type Groups = BTreeMap<(usize, usize, String), (Vec<f64>, Vec<f64>)>;

// Order-independent mean: sort before summing.
fn mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean score and time per (n, σ, variant), sorted by those keys.
pub fn aggregate(rows: &[ResultRow], basis: TimeBasis) -> Vec<GroupRow> {
    let mut groups = Groups::new();
    for r in rows {
        let entry = groups.entry((r.n, r.sigma, r.variant.clone())).or_default();
        entry.0.push(r.score as f64);
        entry.1.push(match basis {
            TimeBasis::TimeToBest => r.time_to_best_s,
            TimeBasis::Runtime => r.runtime_s,
        });
    }
    let mut out: Vec<GroupRow> = groups
        .into_iter()
        .map(|((n, sigma, variant), (mut scores, mut times))| GroupRow {
            n,
            sigma,
            variant,
            count: scores.len(),
            mean_score: mean(&mut scores),
            mean_time_s: mean(&mut times),
            best: false,
        })
        .collect();
    let mut cell_best: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for g in &out {
        let best = cell_best.entry((g.n, g.sigma)).or_insert(f64::NEG_INFINITY);
        *best = best.max(g.mean_score);
    }
    for g in &mut out {
        g.best = g.mean_score == cell_best[&(g.n, g.sigma)];
    }
    out
}

pub fn aggregate_csv(groups: &[GroupRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for g in groups {
        w.serialize(g).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

/// Scores of variants `a` and `b` on the instances both were run on,
/// ordered by instance name.
pub fn paired_scores(rows: &[ResultRow], a: &str, b: &str) -> (Vec<f64>, Vec<f64>) {
    let blocks = blocked_scores(rows, &[a.to_string(), b.to_string()]);
    blocks.into_iter().map(|v| (v[0], v[1])).unzip()
}

/// One block per instance that has a row for every variant in `variants`,
/// holding the first such row's score for each variant.
pub fn blocked_scores(rows: &[ResultRow], variants: &[String]) -> Vec<Vec<f64>> {
    let mut by_instance: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    for r in rows {
        by_instance.entry(&r.instance).or_default().entry(&r.variant).or_insert(r.score as f64);
    }
    by_instance
        .values()
        .filter_map(|scores| variants.iter().map(|v| scores.get(v.as_str()).copied()).collect())
        .collect()
}
