//! Translation backends: an OpenAI-compatible chat-completions client and
//! deterministic mocks.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::masking::MaskedHypothesis;
use crate::prompting::{ModelProfile, PromptStyle, RenderedPrompt};

pub const DEFAULT_TIMEOUT_MS: u64 = 60_000;
pub const DEFAULT_MAX_RETRIES: u32 = 3;
pub const DEFAULT_BACKOFF_MS: u64 = 250;
pub const DEFAULT_MAX_TOKENS: u32 = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server answered HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("empty completion")]
    EmptyCompletion,
    #[error("unexpected response: {0}")]
    BadResponse(String),
    #[error("mock fixture missing: {0}")]
    MissingFixture(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Timeout | BackendError::Transport(_) | BackendError::EmptyCompletion => true,
            BackendError::Http { status, .. } => *status == 429 || *status >= 500,
            BackendError::BadResponse(_) | BackendError::MissingFixture(_) => false,
        }
    }
}

/// Successful model output.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateText {
    pub backend_name: String,
    pub text: String,
    pub latency: Duration,
    /// 1-based attempt number that produced `text`.
    pub attempt: u32,
}

/// Everything a backend may need for one call. Remote backends only look at
/// `prompt`; mocks use the rest to stay deterministic and meaningful.
#[derive(Debug, Clone, Copy)]
pub struct TranslationRequest<'a> {
    pub segment_id: &'a str,
    pub target_lang: &'a str,
    pub source: &'a str,
    pub hypothesis: &'a str,
    pub reference: Option<&'a str>,
    /// Present for blank-filling requests.
    pub masked: Option<&'a MaskedHypothesis>,
    pub prompt: &'a RenderedPrompt,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HealthStatus {
    pub backend: String,
    pub reachable: bool,
    pub latency_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

pub trait TranslationBackend: Send + Sync {
    fn profile(&self) -> &ModelProfile;

    fn name(&self) -> &str {
        &self.profile().name
    }

    fn supports(&self, lang: &str) -> bool {
        self.profile().supports(lang)
    }

    fn translate(&self, request: &TranslationRequest<'_>) -> Result<CandidateText, BackendError>;

    fn health_check(&self) -> HealthStatus;
}

/// Runs `call` until it succeeds, fails with a non-retryable error, or has
/// been retried `max_retries` times. The delay doubles after each failure.
pub fn with_retries<F>(max_retries: u32, backoff: Duration, mut call: F) -> Result<(String, u32), BackendError>
where
    F: FnMut(u32) -> Result<String, BackendError>,
{
    let mut delay = backoff;
    let mut attempt = 1;
    loop {
        let result = call(attempt).and_then(|text| {
            let trimmed = text.trim();
            if trimmed.is_empty() {
                Err(BackendError::EmptyCompletion)
            } else {
                Ok(trimmed.to_string())
            }
        });
        match result {
            Ok(text) => return Ok((text, attempt)),
            Err(e) if e.is_retryable() && attempt <= max_retries => {
                tracing::debug!(attempt, error = %e, "retrying backend call");
                std::thread::sleep(delay);
                delay = delay.saturating_mul(2);
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

pub fn prompt_messages(prompt: &RenderedPrompt) -> Vec<ChatMessage> {
    match prompt {
        RenderedPrompt::Chat { system, user } => vec![
            ChatMessage {
                role: "system".into(),
                content: system.clone(),
            },
            ChatMessage {
                role: "user".into(),
                content: user.clone(),
            },
        ],
        RenderedPrompt::Raw(text) => vec![ChatMessage {
            role: "user".into(),
            content: text.clone(),
        }],
    }
}

#[derive(Debug, Serialize)]
pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

pub(crate) fn classify_ureq_error(err: ureq::Error) -> BackendError {
    match err {
        ureq::Error::Status(status, response) => BackendError::Http {
            status,
            body: response.into_string().unwrap_or_default(),
        },
        ureq::Error::Transport(t) => {
            let timed_out = std::error::Error::source(&t)
                .and_then(|s| s.downcast_ref::<std::io::Error>())
                .is_some_and(|io| {
                    matches!(
                        io.kind(),
                        std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
                    )
                });
            if timed_out {
                BackendError::Timeout
            } else {
                BackendError::Transport(t.to_string())
            }
        }
    }
}

/// Client for a chat-completions endpoint (`POST url`, reply in
/// `choices[0].message.content`). Greedy decoding by default.
pub struct ChatCompletionsBackend {
    profile: ModelProfile,
    url: String,
    model: String,
    api_key: Option<String>,
    timeout: Duration,
    max_retries: u32,
    backoff: Duration,
    temperature: f64,
    max_tokens: u32,
    agent: ureq::Agent,
}

impl ChatCompletionsBackend {
    pub fn new(profile: ModelProfile, url: impl Into<String>, model: impl Into<String>) -> Self {
        let timeout = Duration::from_millis(DEFAULT_TIMEOUT_MS);
        Self {
            profile,
            url: url.into(),
            model: model.into(),
            api_key: None,
            timeout,
            max_retries: DEFAULT_MAX_RETRIES,
            backoff: Duration::from_millis(DEFAULT_BACKOFF_MS),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self.agent = ureq::AgentBuilder::new().timeout(timeout).build();
        self
    }

    pub fn max_retries(mut self, n: u32) -> Self {
        self.max_retries = n;
        self
    }

    pub fn backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn sampling(mut self, temperature: f64, max_tokens: u32) -> Self {
        self.temperature = temperature;
        self.max_tokens = max_tokens;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn call_once(&self, prompt: &RenderedPrompt) -> Result<String, BackendError> {
        let body = ChatRequest {
            model: &self.model,
            messages: prompt_messages(prompt),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        };
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = req.send_json(&body).map_err(classify_ureq_error)?;
        let parsed: ChatResponse = resp
            .into_json()
            .map_err(|e| BackendError::BadResponse(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::BadResponse("no choices".into()))?;
        Ok(choice.message.content.unwrap_or_default())
    }
}

impl TranslationBackend for ChatCompletionsBackend {
    fn profile(&self) -> &ModelProfile {
        &self.profile
    }

    fn translate(&self, request: &TranslationRequest<'_>) -> Result<CandidateText, BackendError> {
        let start = Instant::now();
        let (text, attempt) = with_retries(self.max_retries, self.backoff, |_| self.call_once(request.prompt))?;
        Ok(CandidateText {
            backend_name: self.profile.name.clone(),
            text,
            latency: start.elapsed(),
            attempt,
        })
    }

    /// Any HTTP answer, even an error status, counts as reachable.
    fn health_check(&self) -> HealthStatus {
        let start = Instant::now();
        let result = self.agent.get(&self.url).call();
        let latency_ms = start.elapsed().as_secs_f64() * 1000.0;
        let (reachable, detail) = match result {
            Ok(r) => (true, Some(format!("HTTP {}", r.status()))),
            Err(ureq::Error::Status(code, _)) => (true, Some(format!("HTTP {code}"))),
            Err(e) => (false, Some(classify_ureq_error(e).to_string())),
        };
        HealthStatus {
            backend: self.profile.name.clone(),
            reachable,
            latency_ms,
            detail,
        }
    }
}

/// What a [`MockBackend`] does with a request.
#[derive(Debug, Clone, PartialEq)]
pub enum MockKind {
    /// Returns the source text; restores the removed words when filling.
    Identity,
    /// Returns the segment's reference translation.
    Reference,
    /// Seeded character perturbations of the reference (or the hypothesis
    /// when there is none); fills blanks with perturbed removed words.
    Noisy { rate: f64 },
    /// Fixed raw output per segment id.
    Scripted(BTreeMap<String, String>),
    /// Always fails with a transport error.
    Failing,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallRecord {
    pub segment_id: String,
    pub target_lang: String,
}

/// Deterministic backend: output is a pure function of (request, seed).
pub struct MockBackend {
    profile: ModelProfile,
    kind: MockKind,
    seed: u64,
    calls: Mutex<Vec<CallRecord>>,
}

impl MockBackend {
    pub fn new(name: &str, kind: MockKind, langs: &[&str], seed: u64) -> Self {
        let profile = ModelProfile {
            name: name.to_string(),
            prompt_style: PromptStyle::SimpleTranslate,
            supported_langs: langs.iter().map(|s| s.to_string()).collect(),
            endpoint: format!("mock:{name}"),
        };
        Self::with_profile(profile, kind, seed)
    }

    pub fn with_profile(profile: ModelProfile, kind: MockKind, seed: u64) -> Self {
        Self {
            profile,
            kind,
            seed,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.calls.lock().expect("call log").clone()
    }

    fn rng_for(&self, request: &TranslationRequest<'_>) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(request.prompt.full_text().as_bytes());
        let digest = hasher.finalize();
        let mut bytes = [0u8; 32];
        bytes.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(bytes)
    }

    fn produce(&self, request: &TranslationRequest<'_>) -> Result<String, BackendError> {
        let missing_ref = || BackendError::MissingFixture(format!("no reference for {}", request.segment_id));
        match (&self.kind, request.masked) {
            (MockKind::Failing, _) => Err(BackendError::Transport("mock backend configured to fail".into())),
            (MockKind::Scripted(outputs), _) => outputs
                .get(request.segment_id)
                .cloned()
                .ok_or_else(|| BackendError::MissingFixture(format!("no script for {}", request.segment_id))),
            (MockKind::Identity, None) => Ok(request.source.to_string()),
            (MockKind::Identity, Some(masked)) => Ok(masked.unmask()),
            (MockKind::Reference, None) => request.reference.map(str::to_string).ok_or_else(missing_ref),
            (MockKind::Reference, Some(masked)) => {
                Ok(request.reference.map(str::to_string).unwrap_or_else(|| masked.unmask()))
            }
            (MockKind::Noisy { rate }, None) => {
                let base = request.reference.unwrap_or(request.hypothesis);
                Ok(perturb(base, *rate, &mut self.rng_for(request)))
            }
            (MockKind::Noisy { rate }, Some(masked)) => {
                let mut rng = self.rng_for(request);
                let fills: Vec<String> = masked
                    .removed_texts()
                    .iter()
                    .map(|w| perturb(w, rate.max(0.5), &mut rng))
                    .collect();
                masked
                    .fill(&fills)
                    .map_err(|e| BackendError::BadResponse(e.to_string()))
            }
        }
    }
}

/// Applies substitutions, deletions and duplications at roughly `rate` per
/// character. Never returns an empty string for non-empty input.
pub fn perturb(text: &str, rate: f64, rng: &mut impl Rng) -> String {
    let chars: Vec<char> = text.chars().collect();
    if chars.is_empty() {
        return String::new();
    }
    let mut out = String::with_capacity(text.len());
    for &c in &chars {
        if !rng.gen_bool(rate.clamp(0.0, 1.0)) {
            out.push(c);
            continue;
        }
        match rng.gen_range(0..3) {
            0 => out.push(chars[rng.gen_range(0..chars.len())]),
            1 => {}
            _ => {
                out.push(c);
                out.push(c);
            }
        }
    }
    if out.trim().is_empty() {
        out = chars.iter().filter(|c| !c.is_whitespace()).take(1).collect();
        if out.is_empty() {
            out.push('x');
        }
    }
    out
}

impl TranslationBackend for MockBackend {
    fn profile(&self) -> &ModelProfile {
        &self.profile
    }

    fn translate(&self, request: &TranslationRequest<'_>) -> Result<CandidateText, BackendError> {
        self.calls.lock().expect("call log").push(CallRecord {
            segment_id: request.segment_id.to_string(),
            target_lang: request.target_lang.to_string(),
        });
        let (text, attempt) = with_retries(0, Duration::ZERO, |_| self.produce(request))?;
        Ok(CandidateText {
            backend_name: self.profile.name.clone(),
            text,
            latency: Duration::ZERO,
            attempt,
        })
    }

    fn health_check(&self) -> HealthStatus {
        HealthStatus {
            backend: self.profile.name.clone(),
            reachable: true,
            latency_ms: 0.0,
            detail: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Remote,
    MockIdentity,
    MockReference,
    MockNoisy,
    MockFailing,
}

/// One `[[backends]]` entry of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub name: String,
    #[serde(default = "default_kind")]
    pub kind: BackendKind,
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_style")]
    pub prompt_style: PromptStyle,
    pub supported_langs: BTreeSet<String>,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_noise")]
    pub noise_rate: f64,
}

fn default_kind() -> BackendKind {
    BackendKind::Remote
}
fn default_style() -> PromptStyle {
    PromptStyle::SimpleTranslate
}
fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}
fn default_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}
fn default_backoff() -> u64 {
    DEFAULT_BACKOFF_MS
}
fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}
fn default_noise() -> f64 {
    0.1
}

impl BackendConfig {
    pub fn profile(&self) -> ModelProfile {
        ModelProfile {
            name: self.name.clone(),
            prompt_style: self.prompt_style,
            supported_langs: self.supported_langs.clone(),
            endpoint: self.url.clone().unwrap_or_else(|| format!("mock:{}", self.name)),
        }
    }

    /// Environment variable that overrides `url`, e.g. `QEFIX_TOWER_PLUS_URL`.
    pub fn url_env_var(&self) -> String {
        let slug: String = self
            .name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
            .collect();
        format!("QEFIX_{slug}_URL")
    }

    pub fn build(&self, seed: u64) -> Result<Box<dyn TranslationBackend>, String> {
        if self.supported_langs.is_empty() {
            return Err(format!("backend {} supports no languages", self.name));
        }
        let profile = self.profile();
        let mock = |kind| -> Box<dyn TranslationBackend> { Box::new(MockBackend::with_profile(profile.clone(), kind, seed)) };
        Ok(match self.kind {
            BackendKind::MockIdentity => mock(MockKind::Identity),
            BackendKind::MockReference => mock(MockKind::Reference),
            BackendKind::MockNoisy => mock(MockKind::Noisy { rate: self.noise_rate }),
            BackendKind::MockFailing => mock(MockKind::Failing),
            BackendKind::Remote => {
                let url = std::env::var(self.url_env_var())
                    .ok()
                    .or_else(|| self.url.clone())
                    .ok_or_else(|| format!("backend {} needs a url", self.name))?;
                let model = self.model.clone().unwrap_or_else(|| self.name.clone());
                let api_key = self.api_key_env.as_ref().and_then(|v| std::env::var(v).ok());
                Box::new(
                    ChatCompletionsBackend::new(profile, url, model)
                        .timeout(Duration::from_millis(self.timeout_ms))
                        .max_retries(self.max_retries)
                        .backoff(Duration::from_millis(self.backoff_ms))
                        .sampling(self.temperature, self.max_tokens)
                        .api_key(api_key),
                )
            }
        })
    }
}
