//! Prompt templates, model backends and the gateway that ties them together.

mod backend;
mod parse;
mod templates;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dom::{normalize_value, DocumentTree};

pub use backend::{
    Backend, BackendRequest, HttpBackend, RecordingBackend, ScriptEntry, ScriptTable,
    ScriptedBackend,
};
pub use parse::{extract_object, parse_response, ParsedFields};
pub use templates::{render_prompt, TemplateName};

/// Appended to the prompt when the previous reply could not be parsed.
pub const JSON_REMINDER: &str = "\n\nPlease output valid JSON only.";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("request timed out")]
    Timeout,
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed output from {} after {} attempts", .0.template, .0.attempts)]
    MalformedOutput(Box<LlmExchange>),
    #[error("no scripted response for {template} with fingerprint {fingerprint}")]
    ScriptMiss {
        template: TemplateName,
        fingerprint: String,
    },
    #[error("template {template} takes {expected} slots, got {got}")]
    ArityMismatch {
        template: TemplateName,
        expected: usize,
        got: usize,
    },
    #[error("backend configuration: {0}")]
    Config(String),
}

/// One completed model call, including every retry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub template: TemplateName,
    pub fingerprint: String,
    /// Prompt of the final attempt.
    pub prompt: String,
    /// Raw reply per attempt.
    pub responses: Vec<String>,
    pub parsed: Option<ParsedFields>,
    pub attempts: u32,
    /// Issue time of each attempt in milliseconds on the gateway clock.
    pub issued_at_ms: Vec<u64>,
    pub latency_ms: u64,
}

impl LlmExchange {
    pub fn raw_response(&self) -> &str {
        self.responses.last().map(String::as_str).unwrap_or("")
    }

    pub fn fields(&self) -> &ParsedFields {
        self.parsed
            .as_ref()
            .expect("exchange returned by complete() is parsed")
    }
}

/// Stable hash identifying a call for the scripted backend.
pub fn fingerprint(
    template: TemplateName,
    instruction: &str,
    tree_html: &str,
    extra: &str,
) -> String {
    let mut h = Sha256::new();
    for part in [template.as_str(), instruction, tree_html, extra] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
    fn sleep_ms(&self, ms: u64);
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }

    fn sleep_ms(&self, ms: u64) {
        std::thread::sleep(Duration::from_millis(ms));
    }
}

/// Clock that only advances when asked to sleep. Keeps scripted traces
/// reproducible.
#[derive(Default)]
pub struct LogicalClock {
    now: AtomicU64,
}

impl Clock for LogicalClock {
    fn now_ms(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }

    fn sleep_ms(&self, ms: u64) {
        self.now.fetch_add(ms, Ordering::SeqCst);
    }
}

/// Token bucket: `burst` tokens, refilled at `per_minute` tokens per minute.
#[derive(Debug, Clone)]
pub struct TokenBucket {
    per_ms: f64,
    burst: f64,
    tokens: f64,
    last_ms: Option<u64>,
}

impl TokenBucket {
    pub fn new(per_minute: u32, burst: u32) -> Self {
        let burst = f64::from(burst.max(1));
        TokenBucket {
            per_ms: f64::from(per_minute.max(1)) / 60_000.0,
            burst,
            tokens: burst,
            last_ms: None,
        }
    }

    fn refill(&mut self, now: u64) {
        if let Some(last) = self.last_ms {
            let gained = now.saturating_sub(last) as f64 * self.per_ms;
            self.tokens = (self.tokens + gained).min(self.burst);
        }
        self.last_ms = Some(now);
    }

    /// Blocks on `clock` until a token is available and returns the issue
    /// time.
    pub fn acquire(&mut self, clock: &dyn Clock) -> u64 {
        let mut now = clock.now_ms();
        self.refill(now);
        if self.tokens < 1.0 {
            let wait = ((1.0 - self.tokens) / self.per_ms).ceil() as u64;
            clock.sleep_ms(wait);
            now = clock.now_ms();
            self.refill(now);
            // Guard against rounding leaving the bucket a hair short.
            self.tokens = self.tokens.max(1.0);
        }
        self.tokens -= 1.0;
        now
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Scripted,
}

fn default_timeout() -> u64 {
    60
}

fn default_retries() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API credential.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_limit_per_minute: Option<u32>,
    /// Script table file, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
}

impl BackendConfig {
    pub fn scripted(script: impl Into<PathBuf>) -> Self {
        BackendConfig {
            kind: BackendKind::Scripted,
            endpoint: None,
            credential_env: None,
            model: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            rate_limit_per_minute: None,
            script: Some(script.into()),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        match self.kind {
            BackendKind::Http if self.endpoint.is_none() || self.credential_env.is_none() => Err(
                LlmError::Config("http backend requires endpoint and credential_env".into()),
            ),
            BackendKind::Scripted if self.script.is_none() => Err(LlmError::Config(
                "scripted backend requires a script table".into(),
            )),
            _ if self.rate_limit_per_minute == Some(0) => Err(LlmError::Config(
                "rate_limit_per_minute must be positive".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        let cfg: BackendConfig = serde_json::from_str(&text)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A call ready to be sent: template, slot values and the scripted-backend
/// fingerprint.
#[derive(Debug, Clone)]
pub struct PromptCall {
    pub template: TemplateName,
    pub slots: Vec<String>,
    pub fingerprint: String,
}

/// Shared entry point for all model calls. Calls from several threads are
/// serialized through the rate limiter.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    clock: Arc<dyn Clock>,
    limiter: Option<Mutex<TokenBucket>>,
    max_retries: u32,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, clock: Arc<dyn Clock>) -> Self {
        Gateway {
            backend,
            clock,
            limiter: None,
            max_retries: default_retries(),
        }
    }

    /// Scripted gateway with a logical clock and no rate limit.
    pub fn scripted(table: ScriptTable) -> Self {
        Self::new(
            Arc::new(ScriptedBackend::new(table)),
            Arc::new(LogicalClock::default()),
        )
    }

    pub fn with_rate_limit(mut self, per_minute: u32) -> Self {
        self.limiter = Some(Mutex::new(TokenBucket::new(per_minute, 1)));
        self
    }

    pub fn with_max_retries(mut self, n: u32) -> Self {
        self.max_retries = n;
        self
    }

    /// Builds the backend described by `cfg`; relative script paths resolve
    /// against `base_dir`.
    pub fn from_config(cfg: &BackendConfig, base_dir: &Path) -> Result<Self, LlmError> {
        cfg.validate()?;
        let (backend, clock): (Arc<dyn Backend>, Arc<dyn Clock>) = match cfg.kind {
            BackendKind::Http => (
                Arc::new(HttpBackend::new(
                    cfg.endpoint.as_deref().unwrap_or_default(),
                    cfg.credential_env.as_deref().unwrap_or_default(),
                    cfg.model.as_deref().unwrap_or("gpt-4"),
                    Duration::from_secs(cfg.timeout_secs),
                )?),
                Arc::new(SystemClock),
            ),
            BackendKind::Scripted => {
                let path = base_dir.join(cfg.script.as_ref().expect("validated"));
                (
                    Arc::new(ScriptedBackend::new(ScriptTable::load(&path)?)),
                    Arc::new(LogicalClock::default()),
                )
            }
        };
        let mut gw = Gateway::new(backend, clock).with_max_retries(cfg.max_retries);
        if let Some(rpm) = cfg.rate_limit_per_minute {
            gw = gw.with_rate_limit(rpm);
        }
        Ok(gw)
    }

    fn issue(&self) -> u64 {
        match &self.limiter {
            Some(bucket) => bucket
                .lock()
                .expect("rate limiter lock")
                .acquire(self.clock.as_ref()),
            None => self.clock.now_ms(),
        }
    }

    /// Renders, sends and parses one call, retrying malformed replies up to
    /// the configured limit. Backend errors are not retried.
    pub fn complete(&self, call: &PromptCall) -> Result<LlmExchange, LlmError> {
        let slots: Vec<&str> = call.slots.iter().map(String::as_str).collect();
        let base = render_prompt(call.template, &slots)?;
        let mut exchange = LlmExchange {
            template: call.template,
            fingerprint: call.fingerprint.clone(),
            prompt: base.clone(),
            responses: Vec::new(),
            parsed: None,
            attempts: 0,
            issued_at_ms: Vec::new(),
            latency_ms: 0,
        };
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                exchange.prompt = format!("{base}{JSON_REMINDER}");
            }
            let issued = self.issue();
            let raw = self.backend.respond(&BackendRequest {
                template: call.template,
                fingerprint: &call.fingerprint,
                prompt: &exchange.prompt,
                slots: &call.slots,
                attempt,
            })?;
            exchange.latency_ms += self.clock.now_ms().saturating_sub(issued);
            exchange.issued_at_ms.push(issued);
            exchange.attempts = attempt + 1;
            exchange.parsed = parse_response(call.template, &raw);
            exchange.responses.push(raw);
            if exchange.parsed.is_some() {
                return Ok(exchange);
            }
        }
        Err(LlmError::MalformedOutput(Box::new(exchange)))
    }

    pub fn judge_consistent(
        &self,
        mode: JudgeMode,
        extracted: &[String],
        expected: &[String],
    ) -> Result<Verdict, LlmError> {
        match mode {
            JudgeMode::Deterministic => Ok(Verdict::plain(values_consistent(extracted, expected))),
            JudgeMode::Llm => {
                let (a, b) = (list_literal(extracted), list_literal(expected));
                let fp = fingerprint(TemplateName::Judgement, "", "", &format!("{a}\n{b}"));
                let ex = self.complete(&PromptCall {
                    template: TemplateName::Judgement,
                    slots: vec![a, b],
                    fingerprint: fp,
                })?;
                Ok(Verdict::from_exchange(ex))
            }
        }
    }

    pub fn judge_contains(
        &self,
        mode: JudgeMode,
        tree: &DocumentTree,
        values: &[String],
        instruction: &str,
    ) -> Result<Verdict, LlmError> {
        match mode {
            JudgeMode::Deterministic => Ok(Verdict::plain(tree_contains(tree, values))),
            JudgeMode::Llm => {
                let html = tree.to_html();
                let v = list_literal(values);
                let fp = fingerprint(
                    TemplateName::Stepback,
                    instruction,
                    &tree.canonical_html(),
                    &v,
                );
                let ex = self.complete(&PromptCall {
                    template: TemplateName::Stepback,
                    slots: vec![instruction.to_string(), v, html],
                    fingerprint: fp,
                })?;
                Ok(Verdict::from_exchange(ex))
            }
        }
    }
}

/// Renders a value list the way the prompts show it.
pub fn list_literal(values: &[String]) -> String {
    serde_json::to_string(values).expect("strings serialize")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeMode {
    #[default]
    Deterministic,
    Llm,
}

impl std::str::FromStr for JudgeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deterministic" => Ok(JudgeMode::Deterministic),
            "llm" => Ok(JudgeMode::Llm),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub yes: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exchange: Option<LlmExchange>,
}

impl Verdict {
    fn plain(yes: bool) -> Self {
        Verdict {
            yes,
            exchange: None,
        }
    }

    fn from_exchange(ex: LlmExchange) -> Self {
        Verdict {
            yes: ex.fields().judgement.unwrap_or(false),
            exchange: Some(ex),
        }
    }
}

fn normalized_set(values: &[String]) -> std::collections::BTreeSet<String> {
    values
        .iter()
        .map(|v| normalize_value(v))
        .filter(|v| !v.is_empty())
        .collect()
}

/// Normalized set equality; an empty extraction never matches a non-empty
/// expectation.
pub fn values_consistent(extracted: &[String], expected: &[String]) -> bool {
    normalized_set(extracted) == normalized_set(expected)
}

/// Exact, unnormalized list equality.
pub fn values_equal_strict(extracted: &[String], expected: &[String]) -> bool {
    extracted == expected
}

/// True when every normalized value occurs in the tree's text.
pub fn tree_contains(tree: &DocumentTree, values: &[String]) -> bool {
    let text = tree.text_content();
    normalized_set(values)
        .iter()
        .all(|v| text.contains(v.as_str()))
}
