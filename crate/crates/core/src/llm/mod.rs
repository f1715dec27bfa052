//! Prompting a chat model for alpha-beta coefficients.

mod prompt;
mod provider;

pub use prompt::{
    build_prompt, build_prompt_for_set, estimate_tokens, validate_prompt, PromptBundle, PromptOptions, PromptStyle,
    BEGIN_DATA, BEGIN_EVALUATION, BEGIN_PROBLEM, BEGIN_RULES, END_DATA, END_EVALUATION, END_PROBLEM, END_RULES,
    MARKERS,
};
pub use provider::{
    model_slug, parse_completion_response, Completion, FixtureProvider, InFlightLimiter, InFlightPermit, Limited,
    MockProvider, OpenAiCompatibleProvider, Provider, ReplayProvider,
};

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::MetricSet;
use crate::guidance::{parse_alpha_beta, AlphaBeta, ParseOptions};
use crate::instance::LrsInstance;

/// Extra request fields. Empty means provider defaults.
pub type InferenceParams = BTreeMap<String, serde_json::Value>;

pub const DEFAULT_API_KEY_ENV: &str = "OPENROUTER_API_KEY";
pub const DEFAULT_ENDPOINT: &str = "https://openrouter.ai/api/v1";

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("empty completion")]
    EmptyCompletion,
    #[error("credential missing: set {0}")]
    MissingCredential(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("fixture error: {0}")]
    Fixture(String),
    #[error("recorded failure: {0}")]
    Replayed(String),
    #[error("cannot build prompt: {0}")]
    Prompt(String),
}

impl LlmError {
    /// Whether a fresh attempt could succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            LlmError::Transport(_)
                | LlmError::Http { .. }
                | LlmError::Timeout(_)
                | LlmError::EmptyCompletion
                | LlmError::Replayed(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Wait before the second attempt; doubles each further attempt.
    pub initial_backoff_s: f64,
    pub backoff_multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, initial_backoff_s: 1.0, backoff_multiplier: 2.0 }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        Self { max_attempts, initial_backoff_s: 0.0, backoff_multiplier: 2.0 }
    }

    /// Pause before attempt `attempt` (1-based). Zero for the first.
    pub fn delay_before(&self, attempt: u32) -> Duration {
        if attempt <= 1 {
            return Duration::ZERO;
        }
        let s = self.initial_backoff_s * self.backoff_multiplier.powi(attempt as i32 - 2);
        Duration::from_secs_f64(s.max(0.0))
    }
}

/// What to do when no valid coefficients could be obtained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fallback {
    /// Continue with L_i = 0.5 everywhere.
    #[default]
    Uniform,
    Abort,
}

/// Endpoint settings, usually read from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// Base URL; `/chat/completions` is appended.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_s: f64,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    pub params: InferenceParams,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: DEFAULT_ENDPOINT.into(),
            model: "openai/gpt-4.1-mini".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_s: 120.0,
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            params: InferenceParams::new(),
        }
    }
}

impl LlmConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))
    }
}

/// One request/response pair as sent to and received from a provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub model: String,
    pub instance: String,
    pub prompt: String,
    pub response: String,
    pub latency_s: f64,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    /// RFC 3339, UTC.
    pub timestamp: String,
    pub attempt: u32,
    /// Set when the request failed; `response` is then empty.
    #[serde(default)]
    pub error: Option<String>,
}

fn attempt(
    provider: &dyn Provider,
    bundle: &PromptBundle,
    params: &InferenceParams,
    attempt: u32,
) -> (LlmExchange, Result<(), LlmError>) {
    let timestamp = chrono::Utc::now().to_rfc3339();
    let started = Instant::now();
    let result = provider
        .complete(&bundle.instance_name, &bundle.rendered, params)
        .and_then(|c| if c.text.trim().is_empty() { Err(LlmError::EmptyCompletion) } else { Ok(c) });
    let latency_s = started.elapsed().as_secs_f64();
    let mut exchange = LlmExchange {
        model: provider.model().to_string(),
        instance: bundle.instance_name.clone(),
        prompt: bundle.rendered.clone(),
        response: String::new(),
        latency_s,
        prompt_tokens: None,
        completion_tokens: None,
        timestamp,
        attempt,
        error: None,
    };
    match result {
        Ok(c) => {
            exchange.response = c.text;
            exchange.prompt_tokens = c.prompt_tokens;
            exchange.completion_tokens = c.completion_tokens;
            (exchange, Ok(()))
        }
        Err(e) => {
            exchange.error = Some(e.to_string());
            (exchange, Err(e))
        }
    }
}

/// Sends the prompt once and records the round trip.
pub fn execute(
    provider: &dyn Provider,
    bundle: &PromptBundle,
    params: &InferenceParams,
    attempt_number: u32,
) -> Result<LlmExchange, LlmError> {
    let (exchange, result) = attempt(provider, bundle, params, attempt_number.max(1));
    result.map(|()| exchange)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GuidanceOptions {
    pub prompt: PromptOptions,
    pub parse: ParseOptions,
    pub params: InferenceParams,
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceOutcome {
    pub alpha_beta: AlphaBeta,
    pub exchanges: Vec<LlmExchange>,
}

#[derive(Debug, Error)]
pub enum GuidanceFailure {
    #[error(transparent)]
    Prompt(LlmError),
    #[error("guidance unavailable after {attempts} attempts: {last_error}")]
    Unavailable { attempts: u32, last_error: String, exchanges: Vec<LlmExchange> },
    #[error("guidance request failed: {error}")]
    Fatal { error: LlmError, exchanges: Vec<LlmExchange> },
}

impl GuidanceFailure {
    pub fn exchanges(&self) -> &[LlmExchange] {
        match self {
            GuidanceFailure::Prompt(_) => &[],
            GuidanceFailure::Unavailable { exchanges, .. } | GuidanceFailure::Fatal { exchanges, .. } => exchanges,
        }
    }
}

/// Builds the prompt, queries the provider and parses the answer, retrying
/// on transport and parse failures up to the policy's attempt limit.
pub fn obtain_guidance(
    provider: &dyn Provider,
    instance: &LrsInstance,
    metric_set: &MetricSet,
    options: &GuidanceOptions,
) -> Result<GuidanceOutcome, GuidanceFailure> {
    let bundle = build_prompt_for_set(instance, metric_set, &options.prompt).map_err(GuidanceFailure::Prompt)?;
    obtain_guidance_for_prompt(provider, &bundle, metric_set.len(), options)
}

/// [`obtain_guidance`] for an already rendered prompt asking for `k`
/// coefficient pairs.
pub fn obtain_guidance_for_prompt(
    provider: &dyn Provider,
    bundle: &PromptBundle,
    k: usize,
    options: &GuidanceOptions,
) -> Result<GuidanceOutcome, GuidanceFailure> {
    let max_attempts = options.retry.max_attempts.max(1);
    let mut exchanges = Vec::new();
    let mut last_error = String::new();
    for n in 1..=max_attempts {
        std::thread::sleep(options.retry.delay_before(n));
        let (exchange, result) = attempt(provider, bundle, &options.params, n);
        let response = exchange.response.clone();
        exchanges.push(exchange);
        match result {
            Err(error) if !error.is_retryable() => return Err(GuidanceFailure::Fatal { error, exchanges }),
            Err(error) => last_error = error.to_string(),
            Ok(()) => match parse_alpha_beta(&response, k, options.parse) {
                Ok(alpha_beta) => return Ok(GuidanceOutcome { alpha_beta, exchanges }),
                Err(e) => last_error = e.kind.to_string(),
            },
        }
    }
    Err(GuidanceFailure::Unavailable { attempts: max_attempts, last_error, exchanges })
}

/// Append-only JSON-lines exchange log shared by concurrent writers.
#[derive(Debug)]
pub struct ExchangeLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl ExchangeLog {
    pub fn open(path: impl Into<PathBuf>) -> std::io::Result<Self> {
        let path = path.into();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file: Mutex::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes each exchange as one line, all under a single lock.
    pub fn append(&self, exchanges: &[LlmExchange]) -> std::io::Result<()> {
        let mut buf = Vec::new();
        for ex in exchanges {
            serde_json::to_writer(&mut buf, ex)?;
            buf.push(b'\n');
        }
        let mut file = self.file.lock().expect("exchange log");
        file.write_all(&buf)?;
        file.flush()
    }
}

pub fn read_exchanges(path: &Path) -> std::io::Result<Vec<LlmExchange>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(out)
}
