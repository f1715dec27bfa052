//! Experiment runs, result files and summary statistics.

mod aggregate;
mod stats;

pub use aggregate::{aggregate, aggregate_csv, blocked_scores, paired_scores, GroupRow, TimeBasis};
pub use stats::{
    average_ranks, friedman_test, signed_rank_null_distribution, wilcoxon_signed_rank, Alternative, FriedmanResult,
    StatsError, WilcoxonMethod, WilcoxonResult, WILCOXON_EXACT_MAX, WILCOXON_MIN_PAIRS,
};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, LazyLock, Mutex, OnceLock};

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::brkga::{evolve, BrkgaConfig, BrkgaError, DecoderMode, EvolveOptions};
use crate::features::{build_feature_matrix, MetricSet};
use crate::guidance::{build_bias, AlphaBeta, BiasVector, ParseOptions};
use crate::instance::{generate_corpus, read_instance, LrsInstance};
use crate::llm::{
    build_prompt, model_slug, obtain_guidance_for_prompt, ExchangeLog, Fallback, FixtureProvider, GuidanceOptions,
    InFlightLimiter, Limited, LlmConfig, LlmError, OpenAiCompatibleProvider, PromptOptions, PromptStyle, Provider,
};

pub const RESULTS_FILE: &str = "results.csv";
pub const EXCHANGES_FILE: &str = "exchanges.jsonl";
pub const RESULT_COLUMNS: [&str; 9] =
    ["instance", "n", "sigma", "variant", "score", "time_to_best_s", "runtime_s", "guidance", "seed"];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Instance(#[from] crate::instance::InstanceError),
    #[error(transparent)]
    Brkga(#[from] BrkgaError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("guidance unavailable for {instance} ({variant}): {reason}")]
    GuidanceUnavailable { instance: String, variant: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io { path: path.to_path_buf(), source }
}

/// Algorithm variant run on each instance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    Baseline,
    /// Curated metrics, coefficients from `model`.
    Llm { model: String },
    RandomStatic,
    RandomDynamic,
    /// Length and opportunity only.
    Simple2 { model: String },
    /// The four alternative metrics.
    Random4 { model: String },
}

static MODEL_VARIANT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(llm|simple2|random4)(?:\((.+)\)|:(.+))$").expect("static regex"));

impl Variant {
    pub fn label(&self) -> String {
        match self {
            Variant::Baseline => "baseline".into(),
            Variant::Llm { model } => format!("llm({model})"),
            Variant::RandomStatic => "random_static".into(),
            Variant::RandomDynamic => "random_dynamic".into(),
            Variant::Simple2 { model } => format!("simple2({model})"),
            Variant::Random4 { model } => format!("random4({model})"),
        }
    }

    pub fn model(&self) -> Option<&str> {
        match self {
            Variant::Llm { model } | Variant::Simple2 { model } | Variant::Random4 { model } => Some(model),
            _ => None,
        }
    }

    pub fn metric_set(&self) -> Option<MetricSet> {
        match self {
            Variant::Llm { .. } => Some(MetricSet::curated()),
            Variant::Simple2 { .. } => Some(MetricSet::simple2()),
            Variant::Random4 { .. } => Some(MetricSet::random4()),
            _ => None,
        }
    }

    /// Tuned preset used unless the experiment spec overrides it.
    pub fn default_preset(&self) -> &'static str {
        self.model().map_or("baseline", preset_for_model)
    }
}

/// Preset tuned for a model id, matched on the model name; `baseline` for
/// models without one.
pub fn preset_for_model(model: &str) -> &'static str {
    let m = model.to_ascii_lowercase();
    if m.contains("gpt-4.1-mini") {
        "gpt41mini"
    } else if m.contains("gemini-2.5-flash") {
        "gemini25flash"
    } else if m.contains("llama-3.2-3b") {
        "llama32_3b"
    } else if m.contains("llama-4-maverick") {
        "llama4maverick"
    } else {
        "baseline"
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl std::str::FromStr for Variant {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "baseline" => return Ok(Variant::Baseline),
            "random_static" => return Ok(Variant::RandomStatic),
            "random_dynamic" => return Ok(Variant::RandomDynamic),
            _ => {}
        }
        let caps = MODEL_VARIANT.captures(s).ok_or_else(|| BenchError::Spec(format!("unknown variant {s:?}")))?;
        let model = caps.get(2).or(caps.get(3)).expect("one branch matched").as_str().trim().to_string();
        Ok(match &caps[1] {
            "llm" => Variant::Llm { model },
            "simple2" => Variant::Simple2 { model },
            _ => Variant::Random4 { model },
        })
    }
}

impl TryFrom<String> for Variant {
    type Error = BenchError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> Self {
        v.label()
    }
}

/// Where instances come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstanceSource {
    /// Existing instance files.
    Glob { pattern: String },
    /// A fresh corpus written to `dir` (default `<output_dir>/instances`)
    /// from the experiment's master seed.
    Generate {
        lengths: Vec<usize>,
        sigmas: Vec<usize>,
        reps: usize,
        #[serde(default)]
        dir: Option<PathBuf>,
    },
}

fn one_f64() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum TimeLimitRule {
    /// `scale · n / 5` seconds.
    #[serde(rename = "n_over_5")]
    NOver5 {
        #[serde(default = "one_f64")]
        scale: f64,
    },
    Fixed { seconds: f64 },
}

impl Default for TimeLimitRule {
    fn default() -> Self {
        TimeLimitRule::NOver5 { scale: 1.0 }
    }
}

impl TimeLimitRule {
    pub fn seconds(&self, n: usize) -> f64 {
        match *self {
            TimeLimitRule::NOver5 { scale } => scale * (n as f64 / 5.0),
            TimeLimitRule::Fixed { seconds } => seconds,
        }
    }
}

/// A full benchmark description, usually loaded from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub instances: InstanceSource,
    pub variants: Vec<Variant>,
    /// Preset name per variant label, overriding [`Variant::default_preset`].
    #[serde(default)]
    pub presets: BTreeMap<String, String>,
    #[serde(default)]
    pub time_limit: TimeLimitRule,
    #[serde(default)]
    pub master_seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "one_usize")]
    pub repeats: usize,
    #[serde(default = "one_usize")]
    pub threads: usize,
    #[serde(default)]
    pub fallback: Fallback,
    #[serde(default)]
    pub max_generations: Option<u64>,
    #[serde(default)]
    pub prompt_style: PromptStyle,
    #[serde(default)]
    pub lenient_parse: bool,
    /// Remote endpoint settings for model variants.
    #[serde(default)]
    pub llm: Option<LlmConfig>,
    /// Canned responses used instead of the endpoint.
    #[serde(default)]
    pub fixtures_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    /// Loads a spec, resolving relative paths against the file's directory.
    pub fn from_json_file(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut spec: Self =
            serde_json::from_str(&text).map_err(|e| BenchError::Spec(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        spec.rebase(base);
        Ok(spec)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(d) = &mut self.fixtures_dir {
            fix(d);
        }
        match &mut self.instances {
            InstanceSource::Glob { pattern } => {
                if Path::new(pattern).is_relative() {
                    *pattern = base.join(&*pattern).to_string_lossy().into_owned();
                }
            }
            InstanceSource::Generate { dir: Some(d), .. } => fix(d),
            InstanceSource::Generate { dir: None, .. } => {}
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Spec(m));
        if self.variants.is_empty() {
            return bad("at least one variant is required".into());
        }
        if self.repeats < 1 {
            return bad("repeats must be >= 1".into());
        }
        if self.threads < 1 {
            return bad("threads must be >= 1".into());
        }
        if let InstanceSource::Generate { lengths, sigmas, reps, .. } = &self.instances {
            if lengths.is_empty() || sigmas.is_empty() || *reps < 1 {
                return bad("generation recipe needs lengths, sigmas and reps >= 1".into());
            }
        }
        let labels: HashSet<String> = self.variants.iter().map(Variant::label).collect();
        if labels.len() != self.variants.len() {
            return bad("duplicate variant".into());
        }
        for (label, preset) in &self.presets {
            if !labels.contains(label) {
                return bad(format!("preset given for unknown variant {label:?}"));
            }
            BrkgaConfig::preset(preset)?;
        }
        let secs = self.time_limit.seconds(1);
        if !(secs.is_finite() && secs >= 0.0) {
            return bad("time limit must be a non-negative number".into());
        }
        Ok(())
    }

    pub fn preset_for(&self, variant: &Variant) -> &str {
        self.presets.get(&variant.label()).map_or(variant.default_preset(), String::as_str)
    }

    fn has_model_variants(&self) -> bool {
        self.variants.iter().any(|v| v.model().is_some())
    }
}

/// Hands out a provider per model id.
pub trait ProviderSource: Send + Sync {
    fn provider(&self, model: &str) -> Result<Arc<dyn Provider>, LlmError>;
}

/// Canned responses from a fixture directory; never touches the network.
#[derive(Debug, Clone)]
pub struct FixtureProviders {
    pub dir: PathBuf,
}

impl ProviderSource for FixtureProviders {
    fn provider(&self, model: &str) -> Result<Arc<dyn Provider>, LlmError> {
        Ok(Arc::new(FixtureProvider::new(self.dir.clone(), model)))
    }
}

/// Explicit providers by model id, e.g. mocks in tests.
#[derive(Default, Clone)]
pub struct FixedProviders {
    map: HashMap<String, Arc<dyn Provider>>,
}

impl FixedProviders {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, model: impl Into<String>, provider: Arc<dyn Provider>) -> Self {
        self.map.insert(model.into(), provider);
        self
    }
}

impl ProviderSource for FixedProviders {
    fn provider(&self, model: &str) -> Result<Arc<dyn Provider>, LlmError> {
        self.map.get(model).cloned().ok_or_else(|| LlmError::Config(format!("no provider for model {model:?}")))
    }
}

/// Remote endpoint clients sharing one in-flight cap.
pub struct LiveProviders {
    config: LlmConfig,
    limiter: Arc<InFlightLimiter>,
}

impl LiveProviders {
    pub fn new(config: LlmConfig) -> Self {
        let limiter = Arc::new(InFlightLimiter::new(config.max_in_flight));
        Self { config, limiter }
    }
}

impl ProviderSource for LiveProviders {
    fn provider(&self, model: &str) -> Result<Arc<dyn Provider>, LlmError> {
        let config = LlmConfig { model: model.to_string(), ..self.config.clone() };
        Ok(Arc::new(Limited::new(OpenAiCompatibleProvider::from_config(&config), Arc::clone(&self.limiter))))
    }
}

/// Fixtures when `offline` or when the experiment spec has no endpoint, the endpoint
/// otherwise.
pub fn providers_for_spec(spec: &ExperimentSpec, offline: bool) -> Result<Box<dyn ProviderSource>, BenchError> {
    match (&spec.llm, &spec.fixtures_dir) {
        (Some(cfg), _) if !offline => Ok(Box::new(LiveProviders::new(cfg.clone()))),
        (_, Some(dir)) => Ok(Box::new(FixtureProviders { dir: dir.clone() })),
        _ if !spec.has_model_variants() => Ok(Box::new(FixedProviders::new())),
        _ => Err(BenchError::Spec(if offline {
            "offline run with model variants needs fixtures_dir".into()
        } else {
            "model variants need an llm config or fixtures_dir".into()
        })),
    }
}

/// One solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub instance: String,
    pub n: usize,
    pub sigma: usize,
    pub variant: String,
    pub score: u64,
    pub time_to_best_s: f64,
    pub runtime_s: f64,
    /// `none`, `llm`, `fallback_uniform`, `random_static` or `random_dynamic`.
    pub guidance: String,
    pub seed: u64,
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, BenchError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for r in reader.deserialize() {
        rows.push(r?);
    }
    Ok(rows)
}

/// Reads whatever complete rows exist; a torn final line from an
/// interrupted run is ignored.
fn read_results_lenient(path: &Path) -> Vec<ResultRow> {
    let Ok(mut reader) = csv::Reader::from_path(path) else { return Vec::new() };
    reader.deserialize().filter_map(Result::ok).collect()
}

/// Row seed from the master seed, instance, variant and repeat index.
pub fn row_seed(master: u64, instance: &str, variant: &str, repeat: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(instance.as_bytes());
    h.update([0]);
    h.update(variant.as_bytes());
    h.update((repeat as u64).to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

static CORPUS_NAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^len_(\d+)_sigma_(\d+)_\d+$").expect("static regex"));

/// An instance with its nominal alphabet size.
#[derive(Debug, Clone)]
pub struct InstanceEntry {
    pub path: PathBuf,
    pub instance: LrsInstance,
    pub sigma: usize,
}

fn load_entry(path: &Path) -> Result<InstanceEntry, BenchError> {
    let instance = read_instance(path)?;
    let sigma = CORPUS_NAME
        .captures(instance.name())
        .and_then(|c| c[2].parse().ok())
        .unwrap_or_else(|| instance.sigma());
    Ok(InstanceEntry { path: path.to_path_buf(), instance, sigma })
}

/// Resolves the experiment's instance source to sorted file paths, generating the
/// corpus first if needed.
pub fn instance_paths(spec: &ExperimentSpec) -> Result<Vec<PathBuf>, BenchError> {
    let pattern = match &spec.instances {
        InstanceSource::Glob { pattern } => pattern.clone(),
        InstanceSource::Generate { lengths, sigmas, reps, dir } => {
            let dir = dir.clone().unwrap_or_else(|| spec.output_dir.join("instances"));
            let records = generate_corpus(lengths, sigmas, *reps, spec.master_seed, &dir)?;
            let mut paths: Vec<PathBuf> = records.iter().map(|r| dir.join(&r.file)).collect();
            paths.sort();
            return Ok(paths);
        }
    };
    let mut paths: Vec<PathBuf> = glob::glob(&pattern)
        .map_err(|e| BenchError::Spec(format!("bad glob {pattern:?}: {e}")))?
        .filter_map(Result::ok)
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "txt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(BenchError::Spec(format!("no instance files match {pattern:?}")));
    }
    Ok(paths)
}

#[derive(Debug)]
pub struct RowFailure {
    pub instance: String,
    pub variant: String,
    pub error: BenchError,
}

#[derive(Debug, Default)]
pub struct ExperimentReport {
    /// Rows computed by this call, in instance × variant × repeat order.
    pub rows: Vec<ResultRow>,
    /// Rows already present in the output directory and not recomputed.
    pub skipped: usize,
    pub failures: Vec<RowFailure>,
}

struct Task<'a> {
    entry: &'a Result<InstanceEntry, BenchError>,
    path: &'a Path,
    variant: &'a Variant,
    seed: u64,
}

#[derive(Debug, Clone)]
struct GuidanceResult {
    bias: BiasVector,
    provenance: &'static str,
}

type GuidanceCell = Arc<OnceLock<Result<GuidanceResult, String>>>;

struct Sinks {
    results: Mutex<csv::Writer<File>>,
    exchanges: ExchangeLog,
    alpha_beta: Mutex<HashMap<String, csv::Writer<File>>>,
    out_dir: PathBuf,
}

impl Sinks {
    fn open(out_dir: &Path) -> Result<Self, BenchError> {
        std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        let path = out_dir.join(RESULTS_FILE);
        let fresh = std::fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        if fresh {
            writeln!(file, "{}", RESULT_COLUMNS.join(",")).map_err(io_err(&path))?;
        }
        let results = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        let exchanges_path = out_dir.join(EXCHANGES_FILE);
        let exchanges = ExchangeLog::open(&exchanges_path).map_err(io_err(&exchanges_path))?;
        Ok(Self {
            results: Mutex::new(results),
            exchanges,
            alpha_beta: Mutex::new(HashMap::new()),
            out_dir: out_dir.to_path_buf(),
        })
    }

    fn write_row(&self, row: &ResultRow) -> Result<(), BenchError> {
        let mut w = self.results.lock().expect("results writer");
        w.serialize(row)?;
        w.flush().map_err(io_err(&self.out_dir))?;
        Ok(())
    }

    fn write_alpha_beta(&self, variant: &str, instance: &str, model: &str, ab: &AlphaBeta) -> Result<(), BenchError> {
        let mut writers = self.alpha_beta.lock().expect("alpha-beta writers");
        if !writers.contains_key(variant) {
            let path = self.out_dir.join(format!("alpha_beta_{}.csv", model_slug(variant)));
            let fresh = std::fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
            let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
            if fresh {
                w.write_record(AlphaBeta::csv_header(ab.k()))?;
            }
            writers.insert(variant.to_string(), w);
        }
        let w = writers.get_mut(variant).expect("inserted above");
        w.write_record(ab.csv_record(instance, model))?;
        w.flush().map_err(io_err(&self.out_dir))?;
        Ok(())
    }
}

struct Runner<'a> {
    spec: &'a ExperimentSpec,
    providers: &'a dyn ProviderSource,
    sinks: Sinks,
    guidance: Mutex<HashMap<(String, String), GuidanceCell>>,
}

impl Runner<'_> {
    fn guidance(&self, inst: &LrsInstance, variant: &Variant) -> Result<GuidanceResult, String> {
        let cell = {
            let mut map = self.guidance.lock().expect("guidance cache");
            Arc::clone(map.entry((inst.name().to_string(), variant.label())).or_default())
        };
        cell.get_or_init(|| self.compute_guidance(inst, variant)).clone()
    }

    fn compute_guidance(&self, inst: &LrsInstance, variant: &Variant) -> Result<GuidanceResult, String> {
        let set = variant.metric_set().expect("model variant");
        let model = variant.model().expect("model variant");
        let matrix = build_feature_matrix(inst, &set).map_err(|e| e.to_string())?;
        let prompt_options = PromptOptions { style: self.spec.prompt_style, ..Default::default() };
        let bundle = build_prompt(inst, &matrix, &prompt_options).map_err(|e| e.to_string())?;
        let provider = self.providers.provider(model).map_err(|e| e.to_string())?;
        let retry = self.spec.llm.as_ref().map(|c| c.retry.clone()).unwrap_or_default();
        let params = self.spec.llm.as_ref().map(|c| c.params.clone()).unwrap_or_default();
        let options = GuidanceOptions {
            prompt: prompt_options,
            parse: ParseOptions { lenient: self.spec.lenient_parse },
            params,
            retry,
        };
        let outcome = obtain_guidance_for_prompt(provider.as_ref(), &bundle, set.len(), &options);
        let exchanges = match &outcome {
            Ok(o) => &o.exchanges[..],
            Err(f) => f.exchanges(),
        };
        self.sinks.exchanges.append(exchanges).map_err(|e| e.to_string())?;
        match outcome {
            Ok(o) => {
                self.sinks
                    .write_alpha_beta(&variant.label(), inst.name(), model, &o.alpha_beta)
                    .map_err(|e| e.to_string())?;
                let bias = build_bias(&matrix, &o.alpha_beta).map_err(|e| e.to_string())?;
                Ok(GuidanceResult { bias, provenance: "llm" })
            }
            Err(failure) => match self.spec.fallback {
                Fallback::Uniform => {
                    Ok(GuidanceResult { bias: BiasVector::uniform(inst.run_count()), provenance: "fallback_uniform" })
                }
                Fallback::Abort => Err(failure.to_string()),
            },
        }
    }

    fn run(&self, task: &Task<'_>) -> Result<ResultRow, BenchError> {
        let entry = match task.entry {
            Ok(e) => e,
            Err(e) => return Err(BenchError::Spec(format!("{}: {e}", task.path.display()))),
        };
        let inst = &entry.instance;
        let label = task.variant.label();
        let preset = self.spec.preset_for(task.variant);
        let config = BrkgaConfig::preset(preset)?
            .with_time_limit(self.spec.time_limit.seconds(inst.len()))
            .with_seed(task.seed);
        let options = EvolveOptions { max_generations: self.spec.max_generations, ..Default::default() };
        let (mode, guidance) = match task.variant {
            Variant::Baseline => (DecoderMode::Standard, "none"),
            Variant::RandomStatic => (DecoderMode::RandomStatic { seed: task.seed }, "random_static"),
            Variant::RandomDynamic => (DecoderMode::RandomDynamic { seed: task.seed }, "random_dynamic"),
            v => {
                let g = self.guidance(inst, v).map_err(|reason| BenchError::GuidanceUnavailable {
                    instance: inst.name().to_string(),
                    variant: label.clone(),
                    reason,
                })?;
                (DecoderMode::Biased(g.bias), g.provenance)
            }
        };
        let result = evolve(inst, &config, &mode, &options)?;
        let row = ResultRow {
            instance: inst.name().to_string(),
            n: inst.len(),
            sigma: entry.sigma,
            variant: label,
            score: result.best.score,
            time_to_best_s: result.time_to_best_s,
            runtime_s: result.runtime_s,
            guidance: guidance.to_string(),
            seed: task.seed,
        };
        self.sinks.write_row(&row)?;
        Ok(row)
    }
}

/// Runs every instance × variant × repeat not already recorded in the
/// output directory, appending each finished row to `results.csv`.
pub fn run_experiment(spec: &ExperimentSpec, providers: &dyn ProviderSource) -> Result<ExperimentReport, BenchError> {
    spec.validate()?;
    let paths = instance_paths(spec)?;
    let entries: Vec<Result<InstanceEntry, BenchError>> = paths.iter().map(|p| load_entry(p)).collect();

    let results_path = spec.output_dir.join(RESULTS_FILE);
    let done: HashSet<(String, String, u64)> =
        read_results_lenient(&results_path).into_iter().map(|r| (r.instance, r.variant, r.seed)).collect();

    let mut tasks = Vec::new();
    let mut skipped = 0;
    for (path, entry) in paths.iter().zip(&entries) {
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for variant in &spec.variants {
            let label = variant.label();
            for repeat in 0..spec.repeats {
                let seed = row_seed(spec.master_seed, &name, &label, repeat);
                if done.contains(&(name.clone(), label.clone(), seed)) {
                    skipped += 1;
                } else {
                    tasks.push(Task { entry, path, variant, seed });
                }
            }
        }
    }

    let runner = Runner { spec, providers, sinks: Sinks::open(&spec.output_dir)?, guidance: Mutex::new(HashMap::new()) };
    let outcomes: Vec<Result<ResultRow, BenchError>> = if spec.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(spec.threads)
            .build()
            .map_err(|e| BenchError::Spec(format!("thread pool: {e}")))?;
        pool.install(|| tasks.par_iter().map(|t| runner.run(t)).collect())
    } else {
        tasks.iter().map(|t| runner.run(t)).collect()
    };

    let mut report = ExperimentReport { skipped, ..Default::default() };
    for (task, outcome) in tasks.iter().zip(outcomes) {
        match outcome {
            Ok(row) => report.rows.push(row),
            Err(error) => report.failures.push(RowFailure {
                instance: task.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                variant: task.variant.label(),
                error,
            }),
        }
    }
    Ok(report)
}
