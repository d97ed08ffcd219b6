//! Model-backend abstraction: an OpenAI-compatible chat-completion client
//! plus a fully scriptable deterministic mock for tests.
//!
//! Every completion carries token accounting. When the backend reports
//! usage that count is authoritative; otherwise a local deterministic
//! approximation is used and flagged.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::energy::TokenStats;
use crate::text::approx_token_count;

/// Backend call failures.
#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend `{backend}` timed out after {after_ms} ms")]
    Timeout { backend: String, after_ms: u64 },
    #[error("backend `{backend}` returned HTTP {status}: {detail}")]
    Http { backend: String, status: u16, detail: String },
    #[error("backend `{backend}` transport failure: {detail}")]
    Transport { backend: String, detail: String },
    #[error("backend `{backend}` returned a malformed response: {detail}")]
    Malformed { backend: String, detail: String },
    #[error("mock script for `{backend}` exhausted after {served} responses")]
    ScriptExhausted { backend: String, served: usize },
    #[error("backend `{backend}` is not configured")]
    NotConfigured { backend: String },
    #[error("backend `{backend}` injected fault: {detail}")]
    InjectedFault { backend: String, detail: String },
}

impl BackendError {
    /// Transient transport failures are retried; everything else surfaces.
    fn is_transient(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

/// Chat message role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

/// One generation request against a configured backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub backend_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub want_logprobs: bool,
}

impl GenerationRequest {
    pub fn new(backend_id: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        GenerationRequest {
            backend_id: backend_id.into(),
            messages,
            temperature: 0.0,
            max_tokens: 1024,
            want_logprobs: false,
        }
    }

    /// Flattened prompt text, used for local token counting.
    pub fn prompt_text(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
    }
}

/// A completed generation with token accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Per-generated-token log-probabilities, all <= 0, when the backend
    /// supplies them. Length always equals `generated_tokens` when present.
    pub token_logprobs: Option<Vec<f64>>,
    pub prompt_tokens: u64,
    pub generated_tokens: u64,
    pub latency: Duration,
    /// Token counts came from the local approximation, not backend usage.
    pub token_counts_approximate: bool,
    /// Logprobs were requested but the backend did not supply usable ones.
    pub logprobs_degraded: bool,
}

impl Completion {
    pub fn token_stats(&self) -> TokenStats {
        TokenStats::new(self.prompt_tokens, self.generated_tokens)
    }
}

/// Deterministic local token count; backend-reported usage overrides it.
pub fn count_tokens(text: &str) -> u64 {
    approx_token_count(text)
}

/// A generation backend. Implementations must be shareable across threads.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, req: &GenerationRequest) -> Result<Completion, BackendError>;
    /// Liveness probe for /healthz; never generates.
    fn health(&self) -> BackendHealth;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendHealth {
    Ok,
    Mock,
    Unreachable,
}

// ---------------------------------------------------------------------------
// HTTP backend (OpenAI-compatible chat completions)
// ---------------------------------------------------------------------------

/// Connection settings for one OpenAI-compatible backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_in_flight() -> usize {
    16
}
fn default_retries() -> u32 {
    2
}
fn default_backoff_ms() -> u64 {
    100
}

/// Counting semaphore bounding in-flight requests per backend.
struct InFlightGate {
    available: Mutex<usize>,
    cv: Condvar,
}

impl InFlightGate {
    fn new(cap: usize) -> Self {
        InFlightGate { available: Mutex::new(cap.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> InFlightPermit<'_> {
        let mut available = self.available.lock().expect("gate lock poisoned");
        while *available == 0 {
            available = self.cv.wait(available).expect("gate lock poisoned");
        }
        *available -= 1;
        InFlightPermit { gate: self }
    }
}

struct InFlightPermit<'a> {
    gate: &'a InFlightGate,
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        let mut available = self.gate.available.lock().expect("gate lock poisoned");
        *available += 1;
        self.gate.cv.notify_one();
    }
}

/// OpenAI-compatible chat-completion client with connection pooling,
/// bounded concurrency, and bounded retries (exponential backoff) on
/// transient transport failures.
pub struct HttpBackend {
    id: String,
    cfg: HttpBackendConfig,
    agent: ureq::Agent,
    gate: InFlightGate,
}

#[derive(Serialize)]
struct ChatRequestBody<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    logprobs: bool,
}

#[derive(Deserialize)]
struct ChatResponseBody {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
    #[serde(default)]
    logprobs: Option<ChatLogprobs>,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatLogprobs {
    #[serde(default)]
    content: Option<Vec<ChatTokenLogprob>>,
}

#[derive(Deserialize)]
struct ChatTokenLogprob {
    logprob: f64,
}

#[derive(Deserialize)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

impl HttpBackend {
    pub fn new(id: impl Into<String>, cfg: HttpBackendConfig) -> Self {
        let gate = InFlightGate::new(cfg.max_in_flight);
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .build()
            .new_agent();
        HttpBackend { id: id.into(), cfg, agent, gate }
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.cfg.base_url.trim_end_matches('/'))
    }

    fn send_once(&self, req: &GenerationRequest) -> Result<Completion, BackendError> {
        let started = Instant::now();
        let body = ChatRequestBody {
            model: &self.cfg.model,
            messages: &req.messages,
            temperature: req.temperature,
            max_tokens: req.max_tokens,
            logprobs: req.want_logprobs,
        };
        let mut builder = self.agent.post(self.endpoint());
        if let Some(env_name) = &self.cfg.api_key_env {
            if let Ok(key) = std::env::var(env_name) {
                builder = builder.header("authorization", format!("Bearer {key}"));
            }
        }
        let mut response = builder.send_json(&body).map_err(|e| self.map_ureq_error(e))?;
        let parsed: ChatResponseBody = response.body_mut().read_json().map_err(|e| {
            BackendError::Malformed { backend: self.id.clone(), detail: e.to_string() }
        })?;
        let latency = started.elapsed();

        let choice = parsed.choices.into_iter().next().ok_or_else(|| BackendError::Malformed {
            backend: self.id.clone(),
            detail: "response had no choices".into(),
        })?;
        let text = choice.message.content.unwrap_or_default();

        let mut logprobs: Option<Vec<f64>> = choice
            .logprobs
            .and_then(|lp| lp.content)
            .map(|items| items.into_iter().map(|t| t.logprob).collect());

        let (prompt_tokens, generated_tokens, approximate) = match &parsed.usage {
            Some(u) if u.prompt_tokens.is_some() || u.completion_tokens.is_some() => (
                u.prompt_tokens.unwrap_or_else(|| count_tokens(&req.prompt_text())),
                u.completion_tokens.unwrap_or_else(|| count_tokens(&text)),
                false,
            ),
            _ => (count_tokens(&req.prompt_text()), count_tokens(&text), true),
        };

        // keep |logprobs| == generated_tokens; drop on disagreement
        let mut logprobs_degraded = false;
        if let Some(lp) = &logprobs {
            if lp.len() as u64 != generated_tokens {
                logprobs = None;
                logprobs_degraded = req.want_logprobs;
            }
        } else {
            logprobs_degraded = req.want_logprobs;
        }

        Ok(Completion {
            text,
            token_logprobs: logprobs,
            prompt_tokens,
            generated_tokens,
            latency,
            token_counts_approximate: approximate,
            logprobs_degraded,
        })
    }

    fn map_ureq_error(&self, e: ureq::Error) -> BackendError {
        match e {
            ureq::Error::StatusCode(status) => BackendError::Http {
                backend: self.id.clone(),
                status,
                detail: "non-success status".into(),
            },
            ureq::Error::Timeout(_) => BackendError::Timeout {
                backend: self.id.clone(),
                after_ms: self.cfg.timeout_ms,
            },
            other => BackendError::Transport { backend: self.id.clone(), detail: other.to_string() },
        }
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &GenerationRequest) -> Result<Completion, BackendError> {
        let _permit = self.gate.acquire();
        let mut backoff = Duration::from_millis(self.cfg.retry_backoff_ms);
        let mut attempt = 0;
        loop {
            match self.send_once(req) {
                Ok(c) => return Ok(c),
                Err(e) if e.is_transient() && attempt < self.cfg.retries => {
                    attempt += 1;
                    std::thread::sleep(backoff);
                    backoff *= 4;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn health(&self) -> BackendHealth {
        let url = self.cfg.base_url.trim_start_matches("http://").trim_start_matches("https://");
        let addr = url.split('/').next().unwrap_or(url);
        let reachable = addr
            .parse::<std::net::SocketAddr>()
            .ok()
            .map(|a| std::net::TcpStream::connect_timeout(&a, Duration::from_millis(250)).is_ok())
            .or_else(|| {
                use std::net::ToSocketAddrs;
                addr.to_socket_addrs().ok().and_then(|mut it| it.next()).map(|a| {
                    std::net::TcpStream::connect_timeout(&a, Duration::from_millis(250)).is_ok()
                })
            })
            .unwrap_or(false);
        if reachable {
            BackendHealth::Ok
        } else {
            BackendHealth::Unreachable
        }
    }
}

// ---------------------------------------------------------------------------
// Scriptable mock backend
// ---------------------------------------------------------------------------

/// Injectable fault on one scripted response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fault {
    /// Sleeps the configured deadline, then fails with a timeout error.
    Timeout,
    /// Fails immediately with an HTTP 500.
    Error,
    /// Sleeps `ms`, then responds normally.
    Stall { ms: u64 },
}

/// One scripted response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedResponse {
    pub text: String,
    #[serde(default)]
    pub logprobs: Option<Vec<f64>>,
    #[serde(default)]
    pub fault: Option<Fault>,
}

impl ScriptedResponse {
    pub fn text(text: impl Into<String>) -> Self {
        ScriptedResponse { text: text.into(), logprobs: None, fault: None }
    }

    pub fn with_logprobs(text: impl Into<String>, logprobs: Vec<f64>) -> Self {
        ScriptedResponse { text: text.into(), logprobs: Some(logprobs), fault: None }
    }

    pub fn fault(fault: Fault) -> Self {
        ScriptedResponse { text: String::new(), logprobs: None, fault: Some(fault) }
    }
}

/// What the mock does once the script runs out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExhaustionPolicy {
    RepeatLast,
    Fail,
}

/// Ordered scripted responses with an explicit exhaustion policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    pub responses: Vec<ScriptedResponse>,
    pub on_exhausted: ExhaustionPolicy,
}

impl MockScript {
    pub fn new(responses: Vec<ScriptedResponse>, on_exhausted: ExhaustionPolicy) -> Self {
        MockScript { responses, on_exhausted }
    }

    /// Loads one named script from a JSON file mapping names to scripts.
    pub fn from_file(path: impl AsRef<Path>, key: &str) -> crate::error::Result<MockScript> {
        let data = std::fs::read_to_string(path.as_ref())?;
        let mut scripts: std::collections::BTreeMap<String, MockScript> =
            serde_json::from_str(&data)?;
        scripts.remove(key).ok_or_else(|| {
            crate::error::Error::Config(format!(
                "script file {} has no entry `{key}`",
                path.as_ref().display()
            ))
        })
    }
}

struct MockState {
    cursor: usize,
}

/// Deterministic scripted backend. Script consumption is serialized so
/// replay order is stable under concurrent callers.
pub struct MockBackend {
    id: String,
    script: MockScript,
    state: Mutex<MockState>,
    calls: AtomicUsize,
    /// Deadline emulated by `Fault::Timeout`, kept small for tests.
    pub fault_timeout_ms: u64,
}

impl MockBackend {
    pub fn new(id: impl Into<String>, script: MockScript) -> Self {
        MockBackend {
            id: id.into(),
            script,
            state: Mutex::new(MockState { cursor: 0 }),
            calls: AtomicUsize::new(0),
            fault_timeout_ms: 10,
        }
    }

    /// Total completion calls observed, including faulted ones.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &GenerationRequest) -> Result<Completion, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let scripted = {
            let mut state = self.state.lock().expect("mock lock poisoned");
            let idx = state.cursor;
            if idx < self.script.responses.len() {
                state.cursor += 1;
                self.script.responses[idx].clone()
            } else {
                match self.script.on_exhausted {
                    ExhaustionPolicy::RepeatLast => match self.script.responses.last() {
                        Some(last) => last.clone(),
                        None => {
                            return Err(BackendError::ScriptExhausted {
                                backend: self.id.clone(),
                                served: idx,
                            })
                        }
                    },
                    ExhaustionPolicy::Fail => {
                        return Err(BackendError::ScriptExhausted {
                            backend: self.id.clone(),
                            served: idx,
                        })
                    }
                }
            }
        };

        match &scripted.fault {
            Some(Fault::Timeout) => {
                std::thread::sleep(Duration::from_millis(self.fault_timeout_ms));
                return Err(BackendError::Timeout {
                    backend: self.id.clone(),
                    after_ms: self.fault_timeout_ms,
                });
            }
            Some(Fault::Error) => {
                return Err(BackendError::Http {
                    backend: self.id.clone(),
                    status: 500,
                    detail: "injected fault".into(),
                });
            }
            Some(Fault::Stall { ms }) => std::thread::sleep(Duration::from_millis(*ms)),
            None => {}
        }

        let generated = match &scripted.logprobs {
            Some(lp) => lp.len() as u64,
            None => count_tokens(&scripted.text),
        };
        Ok(Completion {
            text: scripted.text.clone(),
            logprobs_degraded: req.want_logprobs && scripted.logprobs.is_none(),
            token_logprobs: scripted.logprobs,
            prompt_tokens: count_tokens(&req.prompt_text()),
            generated_tokens: generated,
            // fixed so identical scripts replay byte-for-byte
            latency: Duration::ZERO,
            token_counts_approximate: true,
        })
    }

    fn health(&self) -> BackendHealth {
        BackendHealth::Mock
    }
}
