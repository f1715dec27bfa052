use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use lrs_core::bench::{
    aggregate, aggregate_csv, blocked_scores, friedman_test, paired_scores, providers_for_spec, read_results,
    run_experiment, wilcoxon_signed_rank, Alternative, ExperimentSpec, TimeBasis, Variant,
};
use lrs_core::brkga::{evolve, BrkgaConfig, DecoderMode, EvolveOptions, EvolveResult, PRESET_NAMES};
use lrs_core::features::{
    build_feature_matrix, DistanceDefault, FeatureMatrix, HeaderStyle, MetricSet, DEFAULT_PRECISION,
};
use lrs_core::guidance::{build_bias, BiasVector, ParseOptions};
use lrs_core::instance::{exact_solve, generate_corpus, read_instance, LrsInstance};
use lrs_core::llm::{
    build_prompt, obtain_guidance_for_prompt, ExchangeLog, Fallback, FixtureProvider, GuidanceFailure, GuidanceOptions,
    GuidanceOutcome, LlmConfig, OpenAiCompatibleProvider, PromptOptions, PromptStyle, Provider,
};

#[derive(Parser)]
#[command(name = "lrs", version, about = "Longest Run Subsequence solver and benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random instance corpus plus manifest.csv.
    Generate {
        #[arg(long, value_delimiter = ',', required = true)]
        lengths: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        sigmas: Vec<usize>,
        #[arg(long, default_value_t = 30)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "instances")]
        out: PathBuf,
    },
    /// Print the per-run metric matrix as CSV.
    Features {
        #[command(flatten)]
        metrics: MetricArgs,
        #[arg(long, value_enum, default_value_t = StyleArg::Cleaned)]
        header: StyleArg,
        #[arg(long, default_value_t = DEFAULT_PRECISION)]
        precision: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the guidance prompt for an instance.
    Prompt {
        #[command(flatten)]
        metrics: MetricArgs,
        #[arg(long, value_enum, default_value_t = StyleArg::Cleaned)]
        style: StyleArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ask a model (or fixture) for alpha-beta coefficients.
    Guide {
        #[command(flatten)]
        metrics: MetricArgs,
        #[command(flatten)]
        llm: LlmArgs,
        #[arg(long, value_enum, default_value_t = StyleArg::Cleaned)]
        style: StyleArg,
    },
    /// Solve one instance with one variant.
    Solve {
        #[command(flatten)]
        run: RunArgs,
        /// Also run the exact solver and report the optimum.
        #[arg(long)]
        exact: bool,
    },
    /// Run a benchmark described by a JSON spec.
    Bench {
        #[arg(long)]
        spec: PathBuf,
        /// Use fixtures instead of the remote endpoint.
        #[arg(long)]
        offline: bool,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Summarise a results.csv and run the rank tests.
    Stats {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_enum, default_value_t = TimeArg::TimeToBest)]
        time_basis: TimeArg,
        /// Variant every other variant is compared against.
        #[arg(long, default_value = "baseline")]
        reference: String,
        #[arg(long, value_enum, default_value_t = AltArg::Greater)]
        alternative: AltArg,
    },
    /// Solve one instance and print the best-so-far trace as CSV.
    Trace {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct MetricArgs {
    #[arg(long)]
    instance: PathBuf,
    /// curated, simple2, random4 or a comma list of metric names.
    #[arg(long, default_value = "curated")]
    metrics: String,
    /// Treat a non-recurring character's distance as 1 instead of the
    /// distance to the string end.
    #[arg(long)]
    distance_one: bool,
}

impl MetricArgs {
    fn load(&self) -> Result<(LrsInstance, MetricSet)> {
        let inst = read_instance(&self.instance).with_context(|| format!("reading {}", self.instance.display()))?;
        let mut set = MetricSet::by_name(&self.metrics)?;
        if self.distance_one {
            set = set.with_distance_default(DistanceDefault::One);
        }
        Ok((inst, set))
    }
}

#[derive(Args)]
struct LlmArgs {
    /// Model id; overrides the config file.
    #[arg(long)]
    model: Option<String>,
    /// JSON endpoint config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of canned responses; no network is used.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Clamp β of exactly 0 or 1 instead of rejecting.
    #[arg(long)]
    lenient: bool,
    /// Append exchanges to this JSON-lines file.
    #[arg(long)]
    log: Option<PathBuf>,
}

impl LlmArgs {
    fn config(&self) -> Result<LlmConfig> {
        let mut cfg = match &self.config {
            Some(p) => LlmConfig::from_json_file(p)?,
            None => LlmConfig::default(),
        };
        if let Some(m) = &self.model {
            cfg.model = m.clone();
        }
        Ok(cfg)
    }

    fn provider(&self, cfg: &LlmConfig) -> Arc<dyn Provider> {
        match &self.fixtures {
            Some(dir) => Arc::new(FixtureProvider::new(dir, cfg.model.clone())),
            None => Arc::new(OpenAiCompatibleProvider::from_config(cfg)),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    metrics: MetricArgs,
    /// baseline, random_static, random_dynamic, llm(MODEL), simple2(MODEL)
    /// or random4(MODEL).
    #[arg(long, default_value = "baseline")]
    variant: String,
    /// Parameter preset; defaults to the one tuned for the variant.
    #[arg(long)]
    preset: Option<String>,
    /// Seconds; defaults to n/5.
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_generations: Option<u64>,
    #[arg(long)]
    parallel: bool,
    #[arg(long, value_enum, default_value_t = FallbackArg::Uniform)]
    fallback: FallbackArg,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum StyleArg {
    Cleaned,
    Verbatim,
}

#[derive(Clone, Copy, ValueEnum)]
enum TimeArg {
    TimeToBest,
    Runtime,
}

#[derive(Clone, Copy, ValueEnum)]
enum AltArg {
    Greater,
    Less,
    TwoSided,
}

#[derive(Clone, Copy, ValueEnum)]
enum FallbackArg {
    Uniform,
    Abort,
}

fn prompt_style(s: StyleArg) -> PromptStyle {
    match s {
        StyleArg::Cleaned => PromptStyle::Cleaned,
        StyleArg::Verbatim => PromptStyle::Verbatim,
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

// Queries the provider and appends the exchanges to the log if one is set.
fn request_guidance(
    inst: &LrsInstance,
    set: &MetricSet,
    llm: &LlmArgs,
    model: Option<&str>,
    style: PromptStyle,
) -> Result<(FeatureMatrix, Result<GuidanceOutcome, GuidanceFailure>)> {
    let mut cfg = llm.config()?;
    if let Some(m) = model {
        cfg.model = m.to_string();
    }
    let provider = llm.provider(&cfg);
    let matrix = build_feature_matrix(inst, set)?;
    let prompt = PromptOptions { style, ..Default::default() };
    let bundle = build_prompt(inst, &matrix, &prompt)?;
    let options = GuidanceOptions {
        prompt,
        parse: ParseOptions { lenient: llm.lenient },
        params: cfg.params.clone(),
        retry: cfg.retry.clone(),
    };
    let outcome = obtain_guidance_for_prompt(provider.as_ref(), &bundle, set.len(), &options);
    if let Some(path) = &llm.log {
        let exchanges = match &outcome {
            Ok(o) => &o.exchanges[..],
            Err(f) => f.exchanges(),
        };
        ExchangeLog::open(path)?.append(exchanges)?;
    }
    Ok((matrix, outcome))
}

fn solve(run: &RunArgs) -> Result<(LrsInstance, EvolveResult, String)> {
    let (inst, _) = run.metrics.load()?;
    let variant: Variant = run.variant.parse()?;
    let preset = run.preset.clone().unwrap_or_else(|| variant.default_preset().to_string());
    if !PRESET_NAMES.contains(&preset.as_str()) {
        bail!("unknown preset {preset:?}; expected one of {PRESET_NAMES:?}");
    }
    let time_limit = run.time_limit.unwrap_or(inst.len() as f64 / 5.0);
    let config = BrkgaConfig::preset(&preset)?.with_time_limit(time_limit).with_seed(run.seed);
    let fallback = match run.fallback {
        FallbackArg::Uniform => Fallback::Uniform,
        FallbackArg::Abort => Fallback::Abort,
    };
    let (mode, guidance) = match &variant {
        Variant::Baseline => (DecoderMode::Standard, "none"),
        Variant::RandomStatic => (DecoderMode::RandomStatic { seed: run.seed }, "random_static"),
        Variant::RandomDynamic => (DecoderMode::RandomDynamic { seed: run.seed }, "random_dynamic"),
        v => {
            let set = v.metric_set().expect("model variant");
            let (matrix, outcome) = request_guidance(&inst, &set, &run.llm, v.model(), PromptStyle::Cleaned)?;
            match (outcome, fallback) {
                (Ok(o), _) => {
                    eprint!("{}", o.alpha_beta.render());
                    (DecoderMode::Biased(build_bias(&matrix, &o.alpha_beta)?), "llm")
                }
                (Err(e), Fallback::Uniform) => {
                    eprintln!("warning: {e}; continuing with a uniform bias");
                    (DecoderMode::Biased(BiasVector::uniform(inst.run_count())), "fallback_uniform")
                }
                (Err(e), Fallback::Abort) => return Err(e.into()),
            }
        }
    };
    let options = EvolveOptions { max_generations: run.max_generations, parallel: run.parallel, ..Default::default() };
    let result = evolve(&inst, &config, &mode, &options)?;
    Ok((inst, result, guidance.to_string()))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate { lengths, sigmas, reps, seed, out } => {
            let records = generate_corpus(&lengths, &sigmas, reps, seed, &out)?;
            println!("wrote {} instances and manifest.csv to {}", records.len(), out.display());
        }
        Command::Features { metrics, header, precision, out } => {
            let (inst, set) = metrics.load()?;
            let style = match header {
                StyleArg::Cleaned => HeaderStyle::Cleaned,
                StyleArg::Verbatim => HeaderStyle::Verbatim,
            };
            emit(out.as_deref(), &build_feature_matrix(&inst, &set)?.to_csv(style, precision))?;
        }
        Command::Prompt { metrics, style, out } => {
            let (inst, set) = metrics.load()?;
            let matrix = build_feature_matrix(&inst, &set)?;
            let bundle = build_prompt(&inst, &matrix, &PromptOptions { style: prompt_style(style), ..Default::default() })?;
            eprintln!("estimated tokens: {}", bundle.token_estimate);
            emit(out.as_deref(), &bundle.rendered)?;
        }
        Command::Guide { metrics, llm, style } => {
            let (inst, set) = metrics.load()?;
            let (_, outcome) = request_guidance(&inst, &set, &llm, None, prompt_style(style))?;
            let outcome = outcome?;
            eprintln!("attempts: {}", outcome.exchanges.len());
            print!("{}", outcome.alpha_beta.render());
        }
        Command::Solve { run, exact } => {
            let (inst, result, guidance) = solve(&run)?;
            println!("instance: {}", inst.name());
            println!("variant: {} (guidance: {guidance})", run.variant);
            println!("score: {}", result.best.score);
            let runs: Vec<String> = result.best.selected.iter().map(|i| format!("R{}", i + 1)).collect();
            println!("runs: {}", runs.join(" "));
            println!("solution: {}", result.best.subsequence(&inst));
            println!(
                "generations: {}  time_to_best_s: {:.3}  runtime_s: {:.3}",
                result.generations, result.time_to_best_s, result.runtime_s
            );
            if exact {
                let opt = exact_solve(&inst)?;
                println!("optimum: {}", opt.score);
            }
        }
        Command::Bench { spec, offline, threads } => {
            let mut spec = ExperimentSpec::from_json_file(&spec)?;
            if let Some(t) = threads {
                spec.threads = t;
            }
            let providers = providers_for_spec(&spec, offline)?;
            let report = run_experiment(&spec, providers.as_ref())?;
            println!(
                "{} rows computed, {} already present, {} failed; results in {}",
                report.rows.len(),
                report.skipped,
                report.failures.len(),
                spec.output_dir.display()
            );
            for f in &report.failures {
                eprintln!("failed: {} / {}: {}", f.instance, f.variant, f.error);
            }
            if !report.failures.is_empty() {
                std::process::exit(2);
            }
        }
        Command::Stats { results, time_basis, reference, alternative } => {
            let rows = read_results(&results)?;
            if rows.is_empty() {
                bail!("{} has no rows", results.display());
            }
            let basis = match time_basis {
                TimeArg::TimeToBest => TimeBasis::TimeToBest,
                TimeArg::Runtime => TimeBasis::Runtime,
            };
            let alt = match alternative {
                AltArg::Greater => Alternative::Greater,
                AltArg::Less => Alternative::Less,
                AltArg::TwoSided => Alternative::TwoSided,
            };
            print!("{}", aggregate_csv(&aggregate(&rows, basis)));
            let mut variants: Vec<String> = rows.iter().map(|r| r.variant.clone()).collect();
            variants.sort();
            variants.dedup();
            println!();
            println!("comparison,n_pairs,statistic,p_value,method");
            for v in variants.iter().filter(|v| **v != reference) {
                let (x, y) = paired_scores(&rows, v, &reference);
                match wilcoxon_signed_rank(&x, &y, alt) {
                    Ok(w) => println!("{v} vs {reference},{},{},{:.6e},{:?}", x.len(), w.statistic, w.p_value, w.method),
                    Err(e) => println!("{v} vs {reference},{},,,{e}", x.len()),
                }
            }
            if variants.len() >= 2 {
                let blocks = blocked_scores(&rows, &variants);
                println!();
                match friedman_test(&blocks) {
                    Ok(f) => {
                        println!("friedman,blocks,treatments,statistic,p_value");
                        println!("all,{},{},{},{:.6e}", f.blocks, f.treatments, f.statistic, f.p_value);
                        println!("variant,mean_rank");
                        for (v, r) in variants.iter().zip(&f.mean_ranks) {
                            println!("{v},{r}");
                        }
                    }
                    Err(e) => println!("friedman: {e}"),
                }
            }
        }
        Command::Trace { run, out } => {
            let (_, result, _) = solve(&run)?;
            emit(out.as_deref(), &result.trace.to_csv())?;
        }
    }
    Ok(())
}
