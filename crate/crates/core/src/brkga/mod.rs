//! Random-key genetic algorithm over run priorities.
//!
//! A chromosome holds one key in [0, 1] per run. Decoding sorts runs by
//! key (or by key times bias) and greedily keeps every run that leaves the
//! selection a valid run-subsequence.

mod decoder;
mod evolve;

pub use decoder::{biased_priorities, decode_biased, decode_standard, greedy_construct, priority_order};
pub use evolve::{
    evolve, evolve_observed, AnytimeTrace, Chromosome, DecoderMode, EvolveOptions, EvolveResult, GenerationReport,
    TracePoint,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BrkgaError {
    #[error("{what} has length {got}, instance has {expected} runs")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

/// Allowed ranges for the tuned parameters.
pub const ELITE_FRACTION_RANGE: (f64, f64) = (0.1, 0.25);
pub const MUTANT_FRACTION_RANGE: (f64, f64) = (0.1, 0.3);
pub const ELITE_INHERIT_RANGE: (f64, f64) = (0.51, 0.8);

/// Names accepted by [`BrkgaConfig::preset`].
pub const PRESET_NAMES: [&str; 5] = ["baseline", "gpt41mini", "gemini25flash", "llama32_3b", "llama4maverick"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrkgaConfig {
    pub population_size: usize,
    pub elite_fraction: f64,
    pub mutant_fraction: f64,
    pub elite_inherit_prob: f64,
    /// Wall-clock budget in seconds.
    pub time_limit: f64,
    pub seed: u64,
}

impl BrkgaConfig {
    /// Tuned `(ψ, π_e, π_m, ρ_e)` for the standard algorithm and each
    /// model-guided variant. Time limit defaults to 1 s and seed to 0.
    pub fn preset(name: &str) -> Result<Self, BrkgaError> {
        let (population_size, elite_fraction, mutant_fraction, elite_inherit_prob) = match name {
            "baseline" => (16, 0.25, 0.17, 0.56),
            "gpt41mini" => (36, 0.23, 0.21, 0.68),
            "gemini25flash" => (21, 0.17, 0.23, 0.60),
            "llama32_3b" => (27, 0.19, 0.21, 0.78),
            "llama4maverick" => (17, 0.12, 0.30, 0.69),
            other => return Err(BrkgaError::UnknownPreset(other.to_string())),
        };
        Ok(Self { population_size, elite_fraction, mutant_fraction, elite_inherit_prob, time_limit: 1.0, seed: 0 })
    }

    pub fn with_time_limit(mut self, seconds: f64) -> Self {
        self.time_limit = seconds;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// `(elites, mutants, offspring)`: elites = max(1, round(π_e·ψ)),
    /// mutants = round(π_m·ψ), offspring take the rest.
    pub fn subpopulation_sizes(&self) -> (usize, usize, usize) {
        let psi = self.population_size as f64;
        let elites = ((self.elite_fraction * psi).round() as usize).max(1);
        let mutants = (self.mutant_fraction * psi).round() as usize;
        let offspring = self.population_size.saturating_sub(elites + mutants);
        (elites, mutants, offspring)
    }

    pub fn validate(&self) -> Result<(), BrkgaError> {
        let bad = |msg: String| Err(BrkgaError::InvalidConfig(msg));
        let in_range = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        if self.population_size < 3 {
            return bad(format!("population size {} < 3", self.population_size));
        }
        if !in_range(self.elite_fraction, ELITE_FRACTION_RANGE) {
            return bad(format!("elite fraction {} outside {ELITE_FRACTION_RANGE:?}", self.elite_fraction));
        }
        if !in_range(self.mutant_fraction, MUTANT_FRACTION_RANGE) {
            return bad(format!("mutant fraction {} outside {MUTANT_FRACTION_RANGE:?}", self.mutant_fraction));
        }
        if !in_range(self.elite_inherit_prob, ELITE_INHERIT_RANGE) {
            return bad(format!("elite inheritance {} outside {ELITE_INHERIT_RANGE:?}", self.elite_inherit_prob));
        }
        if !(self.time_limit.is_finite() && self.time_limit >= 0.0) {
            return bad(format!("time limit {} must be a non-negative number of seconds", self.time_limit));
        }
        let (elites, mutants, _) = self.subpopulation_sizes();
        if elites + mutants >= self.population_size {
            return bad(format!(
                "{elites} elites + {mutants} mutants leave no offspring in a population of {}",
                self.population_size
            ));
        }
        Ok(())
    }
}

impl Default for BrkgaConfig {
    fn default() -> Self {
        Self::preset("baseline").expect("baseline preset exists")
    }
}
