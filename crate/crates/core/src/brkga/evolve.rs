use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::guidance::{random_bias_static, BiasVector, RandomBiasStream};
use crate::instance::{LrsInstance, RunSolution};

use super::decoder::decode_unchecked;
use super::{BrkgaConfig, BrkgaError};

// Independent random streams derived from the master seed.
const STREAM_INIT: u64 = 1;
const STREAM_MUTANTS: u64 = 2;
const STREAM_CROSSOVER: u64 = 3;
const STREAM_BIAS: u64 = 4;

fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

/// How chromosomes are turned into run priorities.
#[derive(Debug, Clone, PartialEq)]
pub enum DecoderMode {
    /// Keys alone.
    Standard,
    /// Keys times a fixed bias vector.
    Biased(BiasVector),
    /// Keys times one uniform random vector drawn at start.
    RandomStatic { seed: u64 },
    /// Keys times a uniform random vector redrawn every generation.
    RandomDynamic { seed: u64 },
}

/// Extra stopping rules on top of the wall-clock budget.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    /// Stop after this many generations.
    #[serde(default)]
    pub max_generations: Option<u64>,
    /// Stop as soon as a solution of at least this score is found.
    #[serde(default)]
    pub target_score: Option<u64>,
    /// Decode new individuals on the rayon pool. Results are identical to
    /// the sequential path.
    #[serde(default)]
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chromosome {
    pub keys: Vec<f64>,
    pub solution: RunSolution,
}

impl Chromosome {
    pub fn score(&self) -> u64 {
        self.solution.score
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub elapsed_s: f64,
    pub generation: u64,
    pub best_score: u64,
}

/// Best-so-far score over time. Points are recorded at start, on every
/// improvement, and at termination.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnytimeTrace {
    pub points: Vec<TracePoint>,
}

impl AnytimeTrace {
    pub fn is_monotone(&self) -> bool {
        self.points.windows(2).all(|w| w[0].best_score <= w[1].best_score)
    }

    /// CSV with columns `elapsed_s,generation,best_score`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("elapsed_s,generation,best_score\n");
        for p in &self.points {
            out.push_str(&format!("{:.6},{},{}\n", p.elapsed_s, p.generation, p.best_score));
        }
        out
    }
}

/// State handed to an observer after the initial population and after
/// every generation.
#[derive(Debug)]
pub struct GenerationReport<'a> {
    pub generation: u64,
    pub elapsed_s: f64,
    pub best_score: u64,
    pub population: &'a [Chromosome],
    pub elites: usize,
    pub mutants: usize,
    pub offspring: usize,
    /// Bias used to decode this generation's new individuals.
    pub bias: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveResult {
    pub best: RunSolution,
    pub trace: AnytimeTrace,
    pub generations: u64,
    pub time_to_best_s: f64,
    pub runtime_s: f64,
}

/// Runs the generational loop until the budget is spent.
pub fn evolve(
    instance: &LrsInstance,
    config: &BrkgaConfig,
    mode: &DecoderMode,
    options: &EvolveOptions,
) -> Result<EvolveResult, BrkgaError> {
    evolve_observed(instance, config, mode, options, |_| {})
}

enum BiasState {
    None,
    Fixed(Vec<f64>),
    Dynamic { stream: Box<RandomBiasStream>, current: Vec<f64> },
}

impl BiasState {
    fn current(&self) -> Option<&[f64]> {
        match self {
            BiasState::None => None,
            BiasState::Fixed(v) | BiasState::Dynamic { current: v, .. } => Some(v),
        }
    }

    fn advance(&mut self) {
        if let BiasState::Dynamic { stream, current } = self {
            *current = stream.next_vector().values().to_vec();
        }
    }
}

fn random_keys(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    (0..m).map(|_| rng.random::<f64>()).collect()
}

fn decode_all(instance: &LrsInstance, keys: Vec<Vec<f64>>, bias: Option<&[f64]>, parallel: bool) -> Vec<Chromosome> {
    let decode = |keys: Vec<f64>| {
        let solution = decode_unchecked(&keys, bias, instance);
        Chromosome { keys, solution }
    };
    if parallel {
        keys.into_par_iter().map(decode).collect()
    } else {
        keys.into_iter().map(decode).collect()
    }
}

// Best first; the sort is stable so earlier (elite) individuals win ties.
fn rank(population: &mut [Chromosome]) {
    population.sort_by_key(|c| std::cmp::Reverse(c.score()));
}

/// [`evolve`] with a callback invoked once per generation.
pub fn evolve_observed<F>(
    instance: &LrsInstance,
    config: &BrkgaConfig,
    mode: &DecoderMode,
    options: &EvolveOptions,
    mut observer: F,
) -> Result<EvolveResult, BrkgaError>
where
    F: FnMut(&GenerationReport<'_>),
{
    config.validate()?;
    let start = Instant::now();
    let m = instance.run_count();
    if let DecoderMode::Biased(b) = mode {
        if b.len() != m {
            return Err(BrkgaError::LengthMismatch { what: "bias", expected: m, got: b.len() });
        }
    }
    if m == 0 {
        let point = TracePoint { elapsed_s: start.elapsed().as_secs_f64(), generation: 0, best_score: 0 };
        return Ok(EvolveResult {
            best: RunSolution::empty(),
            trace: AnytimeTrace { points: vec![point] },
            generations: 0,
            time_to_best_s: 0.0,
            runtime_s: start.elapsed().as_secs_f64(),
        });
    }

    let psi = config.population_size;
    let (n_elite, n_mutant, n_offspring) = config.subpopulation_sizes();
    let mut init_rng = stream(config.seed, STREAM_INIT);
    let mut mutant_rng = stream(config.seed, STREAM_MUTANTS);
    let mut cross_rng = stream(config.seed, STREAM_CROSSOVER);

    let mut bias = match mode {
        DecoderMode::Standard => BiasState::None,
        DecoderMode::Biased(b) => BiasState::Fixed(b.values().to_vec()),
        DecoderMode::RandomStatic { seed } => {
            BiasState::Fixed(random_bias_static(m, derive(*seed, STREAM_BIAS)).values().to_vec())
        }
        DecoderMode::RandomDynamic { seed } => {
            let mut stream = RandomBiasStream::new(m, derive(*seed, STREAM_BIAS));
            let current = stream.next_vector().values().to_vec();
            BiasState::Dynamic { stream: Box::new(stream), current }
        }
    };

    let initial: Vec<Vec<f64>> = (0..psi).map(|_| random_keys(&mut init_rng, m)).collect();
    let mut population = decode_all(instance, initial, bias.current(), options.parallel);
    rank(&mut population);

    let mut best = population[0].solution.clone();
    let mut time_to_best = start.elapsed().as_secs_f64();
    let mut trace = AnytimeTrace {
        points: vec![TracePoint { elapsed_s: time_to_best, generation: 0, best_score: best.score }],
    };
    observer(&GenerationReport {
        generation: 0,
        elapsed_s: time_to_best,
        best_score: best.score,
        population: &population,
        elites: n_elite,
        mutants: n_mutant,
        offspring: n_offspring,
        bias: bias.current(),
    });

    let mut generation = 0u64;
    loop {
        if start.elapsed().as_secs_f64() >= config.time_limit
            || options.max_generations.is_some_and(|g| generation >= g)
            || options.target_score.is_some_and(|t| best.score >= t)
        {
            break;
        }
        generation += 1;
        bias.advance();

        let mut fresh: Vec<Vec<f64>> = Vec::with_capacity(n_mutant + n_offspring);
        for _ in 0..n_mutant {
            fresh.push(random_keys(&mut mutant_rng, m));
        }
        for _ in 0..n_offspring {
            let elite = &population[cross_rng.random_range(0..n_elite)].keys;
            let other = &population[cross_rng.random_range(n_elite..psi)].keys;
            let child = elite
                .iter()
                .zip(other)
                .map(|(&e, &o)| if cross_rng.random::<f64>() < config.elite_inherit_prob { e } else { o })
                .collect();
            fresh.push(child);
        }

        population.truncate(n_elite);
        population.extend(decode_all(instance, fresh, bias.current(), options.parallel));
        rank(&mut population);
        debug_assert_eq!(population.len(), psi);

        let elapsed = start.elapsed().as_secs_f64();
        if population[0].score() > best.score {
            best = population[0].solution.clone();
            time_to_best = elapsed;
            trace.points.push(TracePoint { elapsed_s: elapsed, generation, best_score: best.score });
        }
        observer(&GenerationReport {
            generation,
            elapsed_s: elapsed,
            best_score: best.score,
            population: &population,
            elites: n_elite,
            mutants: n_mutant,
            offspring: n_offspring,
            bias: bias.current(),
        });
    }

    let runtime = start.elapsed().as_secs_f64();
    if trace.points.last().is_some_and(|p| p.generation != generation) {
        trace.points.push(TracePoint { elapsed_s: runtime, generation, best_score: best.score });
    }
    Ok(EvolveResult { best, trace, generations: generation, time_to_best_s: time_to_best, runtime_s: runtime })
}

fn derive(seed: u64, purpose: u64) -> u64 {
    stream(seed, purpose).random()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brkga::decode_standard;
    use crate::instance::is_feasible;

    fn example() -> LrsInstance {
        LrsInstance::new("example", "ZZBCCZBBBC")
    }

    #[test]
    fn example_reaches_optimum_in_every_mode() {
        let inst = example();
        let cfg = BrkgaConfig::default().with_time_limit(1.0).with_seed(3);
        let opts = EvolveOptions { target_score: Some(7), ..Default::default() };
        let modes = [
            DecoderMode::Standard,
            DecoderMode::Biased(BiasVector::uniform(6)),
            DecoderMode::RandomStatic { seed: 1 },
            DecoderMode::RandomDynamic { seed: 1 },
        ];
        for mode in &modes {
            let res = evolve(&inst, &cfg, mode, &opts).unwrap();
            assert_eq!(res.best.score, 7, "{mode:?}");
            assert!(is_feasible(&inst, &res.best.selected).unwrap());
        }
    }

    #[test]
    fn zero_budget_keeps_initial_population() {
        let inst = crate::instance::generate(200, 8, 1).unwrap();
        let cfg = BrkgaConfig::default().with_time_limit(0.0);
        let res = evolve(&inst, &cfg, &DecoderMode::Standard, &EvolveOptions::default()).unwrap();
        assert_eq!(res.generations, 0);
        assert!(!res.trace.points.is_empty());
    }

    #[test]
    fn empty_instance_is_trivial() {
        let inst = LrsInstance::new("empty", "");
        let res = evolve(&inst, &BrkgaConfig::default(), &DecoderMode::Standard, &EvolveOptions::default()).unwrap();
        assert_eq!(res.best, RunSolution::empty());
        assert_eq!(res.trace.points.len(), 1);
    }

    #[test]
    fn rejects_bad_inputs() {
        let inst = example();
        let bad = BrkgaConfig { population_size: 2, ..Default::default() };
        assert!(evolve(&inst, &bad, &DecoderMode::Standard, &EvolveOptions::default()).is_err());
        let short = DecoderMode::Biased(BiasVector::uniform(3));
        assert!(matches!(
            evolve(&inst, &BrkgaConfig::default(), &short, &EvolveOptions::default()),
            Err(BrkgaError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn cached_scores_match_redecode() {
        let inst = crate::instance::generate(300, 4, 9).unwrap();
        let cfg = BrkgaConfig::default().with_time_limit(60.0);
        let opts = EvolveOptions { max_generations: Some(20), ..Default::default() };
        evolve_observed(&inst, &cfg, &DecoderMode::Standard, &opts, |r| {
            for c in r.population {
                assert_eq!(decode_standard(&c.keys, &inst).unwrap(), c.solution);
            }
        })
        .unwrap();
    }

    #[test]
    fn parallel_matches_sequential() {
        let inst = crate::instance::generate(300, 8, 2).unwrap();
        let cfg = BrkgaConfig::preset("gpt41mini").unwrap().with_time_limit(60.0).with_seed(5);
        let seq = EvolveOptions { max_generations: Some(30), ..Default::default() };
        let par = EvolveOptions { parallel: true, ..seq.clone() };
        let mode = DecoderMode::RandomDynamic { seed: 4 };
        let a = evolve(&inst, &cfg, &mode, &seq).unwrap();
        let b = evolve(&inst, &cfg, &mode, &par).unwrap();
        assert_eq!(a.best, b.best);
        let gens = |r: &EvolveResult| r.trace.points.iter().map(|p| (p.generation, p.best_score)).collect::<Vec<_>>();
        assert_eq!(gens(&a), gens(&b));
    }

    #[test]
    fn trace_csv_header() {
        let inst = example();
        let cfg = BrkgaConfig::default().with_time_limit(0.0);
        let res = evolve(&inst, &cfg, &DecoderMode::Standard, &EvolveOptions::default()).unwrap();
        assert!(res.trace.to_csv().starts_with("elapsed_s,generation,best_score\n"));
    }
}
