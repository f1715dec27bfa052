//! Chat-completion backends: a remote OpenAI-compatible endpoint plus
//! offline stand-ins for tests and reproducible benchmarks.

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::{InferenceParams, LlmConfig, LlmError, LlmExchange};

/// Text returned by one completion call.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), ..Default::default() }
    }
}

/// A model endpoint. Implementations must be safe to share across threads.
pub trait Provider: Send + Sync {
    fn model(&self) -> &str;

    /// One round trip. `instance` names the instance the prompt was built
    /// for; remote providers ignore it.
    fn complete(&self, instance: &str, prompt: &str, params: &InferenceParams) -> Result<Completion, LlmError>;
}

impl<P: Provider + ?Sized> Provider for Arc<P> {
    fn model(&self) -> &str {
        (**self).model()
    }

    fn complete(&self, instance: &str, prompt: &str, params: &InferenceParams) -> Result<Completion, LlmError> {
        (**self).complete(instance, prompt, params)
    }
}

/// Replies from a script, then from a default reply once the script runs out.
#[derive(Debug)]
pub struct MockProvider {
    model: String,
    script: Mutex<VecDeque<Result<String, LlmError>>>,
    default: Option<String>,
}

impl MockProvider {
    pub fn new(model: impl Into<String>) -> Self {
        Self { model: model.into(), script: Mutex::new(VecDeque::new()), default: None }
    }

    /// Always answers `text`.
    pub fn constant(model: impl Into<String>, text: impl Into<String>) -> Self {
        Self::new(model).with_default(text)
    }

    pub fn with_default(mut self, text: impl Into<String>) -> Self {
        self.default = Some(text.into());
        self
    }

    pub fn then_reply(self, text: impl Into<String>) -> Self {
        self.script.lock().expect("mock script").push_back(Ok(text.into()));
        self
    }

    pub fn then_fail(self, error: LlmError) -> Self {
        self.script.lock().expect("mock script").push_back(Err(error));
        self
    }
}

impl Provider for MockProvider {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, _instance: &str, _prompt: &str, _params: &InferenceParams) -> Result<Completion, LlmError> {
        let next = self.script.lock().expect("mock script").pop_front();
        match next {
            Some(reply) => reply.map(Completion::text),
            None => match &self.default {
                Some(text) => Ok(Completion::text(text.clone())),
                None => Err(LlmError::Fixture("mock script exhausted".into())),
            },
        }
    }
}

/// File-system safe form of a model id, e.g. `openai/gpt-4.1-mini` becomes
/// `openai_gpt-4.1-mini`.
pub fn model_slug(model: &str) -> String {
    model.chars().map(|c| if c.is_ascii_alphanumeric() || "-._".contains(c) { c } else { '_' }).collect()
}

/// Reads canned responses from a directory. For instance `x` and model `m`
/// it tries `x__<slug(m)>.txt`, then `<slug(m)>.txt`.
#[derive(Debug, Clone)]
pub struct FixtureProvider {
    dir: PathBuf,
    model: String,
}

impl FixtureProvider {
    pub fn new(dir: impl Into<PathBuf>, model: impl Into<String>) -> Self {
        Self { dir: dir.into(), model: model.into() }
    }

    pub fn fixture_path(dir: &Path, instance: &str, model: &str) -> PathBuf {
        dir.join(format!("{instance}__{}.txt", model_slug(model)))
    }

    fn lookup(&self, instance: &str) -> Option<PathBuf> {
        let specific = Self::fixture_path(&self.dir, instance, &self.model);
        let shared = self.dir.join(format!("{}.txt", model_slug(&self.model)));
        [specific, shared].into_iter().find(|p| p.is_file())
    }
}

impl Provider for FixtureProvider {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, instance: &str, _prompt: &str, _params: &InferenceParams) -> Result<Completion, LlmError> {
        let path = self.lookup(instance).ok_or_else(|| {
            LlmError::Fixture(format!("no fixture for instance {instance:?} and model {:?} in {}", self.model, self.dir.display()))
        })?;
        std::fs::read_to_string(&path)
            .map(Completion::text)
            .map_err(|e| LlmError::Fixture(format!("{}: {e}", path.display())))
    }
}

/// Plays back a recorded exchange log, per instance, in attempt order.
#[derive(Debug)]
pub struct ReplayProvider {
    model: String,
    queues: Mutex<HashMap<String, VecDeque<Result<Completion, LlmError>>>>,
}

impl ReplayProvider {
    /// Keeps only exchanges recorded for `model`.
    pub fn new(model: impl Into<String>, exchanges: &[LlmExchange]) -> Self {
        let model = model.into();
        let mut queues: HashMap<String, VecDeque<_>> = HashMap::new();
        for ex in exchanges.iter().filter(|e| e.model == model) {
            let reply = match &ex.error {
                Some(msg) => Err(LlmError::Replayed(msg.clone())),
                None => Ok(Completion {
                    text: ex.response.clone(),
                    prompt_tokens: ex.prompt_tokens,
                    completion_tokens: ex.completion_tokens,
                }),
            };
            queues.entry(ex.instance.clone()).or_default().push_back(reply);
        }
        Self { model, queues: Mutex::new(queues) }
    }
}

impl Provider for ReplayProvider {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, instance: &str, _prompt: &str, _params: &InferenceParams) -> Result<Completion, LlmError> {
        let mut queues = self.queues.lock().expect("replay queues");
        queues
            .get_mut(instance)
            .and_then(VecDeque::pop_front)
            .unwrap_or_else(|| Err(LlmError::Fixture(format!("no recorded exchange left for {instance:?}"))))
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
pub struct InFlightLimiter {
    cap: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightPermit<'a> {
    limiter: &'a InFlightLimiter,
}

impl InFlightLimiter {
    pub fn new(cap: usize) -> Self {
        Self { cap: cap.max(1), active: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn acquire(&self) -> InFlightPermit<'_> {
        let mut active = self.active.lock().expect("limiter");
        while *active >= self.cap {
            active = self.freed.wait(active).expect("limiter");
        }
        *active += 1;
        InFlightPermit { limiter: self }
    }

    pub fn active(&self) -> usize {
        *self.active.lock().expect("limiter")
    }
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        *self.limiter.active.lock().expect("limiter") -= 1;
        self.limiter.freed.notify_one();
    }
}

/// Wraps a provider so calls through any clone share one in-flight cap.
#[derive(Debug, Clone)]
pub struct Limited<P> {
    inner: P,
    limiter: Arc<InFlightLimiter>,
}

impl<P: Provider> Limited<P> {
    pub fn new(inner: P, limiter: Arc<InFlightLimiter>) -> Self {
        Self { inner, limiter }
    }
}

impl<P: Provider> Provider for Limited<P> {
    fn model(&self) -> &str {
        self.inner.model()
    }

    fn complete(&self, instance: &str, prompt: &str, params: &InferenceParams) -> Result<Completion, LlmError> {
        let _permit = self.limiter.acquire();
        self.inner.complete(instance, prompt, params)
    }
}

/// Client for `POST {endpoint}/chat/completions`.
pub struct OpenAiCompatibleProvider {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key: Option<String>,
    api_key_env: String,
}

impl std::fmt::Debug for OpenAiCompatibleProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiCompatibleProvider")
            .field("url", &self.url)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<set>"))
            .finish()
    }
}

impl OpenAiCompatibleProvider {
    /// Reads the credential from the environment variable named in the
    /// config. A missing credential is reported on the first request.
    pub fn from_config(config: &LlmConfig) -> Self {
        let key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Self::with_api_key(config, key)
    }

    pub fn with_api_key(config: &LlmConfig, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            url: format!("{}/chat/completions", config.endpoint.trim_end_matches('/')),
            model: config.model.clone(),
            api_key,
            api_key_env: config.api_key_env.clone(),
        }
    }

    /// Request body: the model, one user message and any explicit params.
    pub fn request_body(&self, prompt: &str, params: &InferenceParams) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": prompt }],
        });
        for (k, v) in params {
            body[k] = v.clone();
        }
        body
    }
}

fn map_transport(err: ureq::Error) -> LlmError {
    match err {
        ureq::Error::Timeout(t) => LlmError::Timeout(t.to_string()),
        ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => LlmError::Timeout(e.to_string()),
        other => LlmError::Transport(other.to_string()),
    }
}

/// Pulls the first choice's content and the usage counts out of a
/// chat-completions response.
pub fn parse_completion_response(body: &Value) -> Result<Completion, LlmError> {
    let text = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    if text.trim().is_empty() {
        return Err(LlmError::EmptyCompletion);
    }
    Ok(Completion {
        text,
        prompt_tokens: body.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
        completion_tokens: body.pointer("/usage/completion_tokens").and_then(Value::as_u64),
    })
}

impl Provider for OpenAiCompatibleProvider {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, _instance: &str, prompt: &str, params: &InferenceParams) -> Result<Completion, LlmError> {
        let key = self.api_key.as_ref().ok_or_else(|| LlmError::MissingCredential(self.api_key_env.clone()))?;
        let mut response = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {key}"))
            .send_json(self.request_body(prompt, params))
            .map_err(map_transport)?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(map_transport)?;
        if !(200..300).contains(&status) {
            let body: String = text.chars().take(500).collect();
            return Err(LlmError::Http { status, body });
        }
        let json: Value =
            serde_json::from_str(&text).map_err(|e| LlmError::Transport(format!("invalid response body: {e}")))?;
        parse_completion_response(&json)
    }
}
