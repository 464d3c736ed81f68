//! Provider-agnostic chat-completion client: configuration, retries with
//! exponential backoff, timeouts, structured-output extraction, and raw
//! request/response capture for session logs.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Inference parameters for one backend role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub provider_id: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_s: f64,
    pub retries: u32,
    /// Name of the environment variable holding the credential.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Provider endpoint for HTTP providers (OpenAI-compatible).
    #[serde(default)]
    pub base_url: Option<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            provider_id: "stub".to_string(),
            model_id: "stub".to_string(),
            temperature: 0.0,
            max_tokens: 1024,
            timeout_s: 30.0,
            retries: 2,
            api_key_env: None,
            base_url: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
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
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }
}

/// Verbatim request/response payloads of one backend call, kept for audit
/// logging in the session JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawExchange {
    pub request: serde_json::Value,
    pub response: serde_json::Value,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempts: {last}")]
    Transport { attempts: u32, last: String },
    #[error("credential environment variable `{0}` is not set")]
    MissingCredential(String),
    #[error("no structured object found in model output")]
    NoObject,
    #[error("structured object missing required field `{0}`")]
    MissingField(String),
    #[error("empty message list")]
    EmptyMessages,
}

/// One chat-completion backend.
pub trait ChatProvider: Send + Sync {
    fn complete_once(
        &self,
        messages: &[ChatMessage],
        cfg: &ModelConfig,
    ) -> Result<String, ProviderFailure>;
}

/// Transient failure of a single attempt; the gateway retries these.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct ProviderFailure(pub String);

/// Client wrapping a provider with retries, backoff, optional rate limiting,
/// and per-attempt latency logging.
pub struct Gateway<P: ChatProvider> {
    provider: P,
    backoff_base: Duration,
    limiter: Option<RateLimiter>,
}

impl<P: ChatProvider> Gateway<P> {
    pub fn new(provider: P) -> Self {
        Gateway {
            provider,
            backoff_base: Duration::from_secs(1),
            limiter: None,
        }
    }

    /// Shrinks the initial backoff; intended for tests.
    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    pub fn with_rate_limit(mut self, requests_per_minute: u32) -> Self {
        self.limiter = Some(RateLimiter::new(requests_per_minute));
        self
    }

    /// Completes the chat, retrying transport errors up to `cfg.retries`
    /// additional attempts with exponential backoff starting at the base.
    /// Returns the text plus the raw exchange of the successful attempt.
    pub fn complete(
        &self,
        messages: &[ChatMessage],
        cfg: &ModelConfig,
    ) -> Result<(String, RawExchange), GatewayError> {
        if messages.is_empty() {
            return Err(GatewayError::EmptyMessages);
        }
        let mut last_err = String::new();
        for attempt in 0..=cfg.retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff_base * 2u32.pow(attempt - 1));
            }
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            let started = Instant::now();
            match self.provider.complete_once(messages, cfg) {
                Ok(text) => {
                    log::debug!(
                        "completion ok: attempt={} latency_ms={}",
                        attempt + 1,
                        started.elapsed().as_millis()
                    );
                    let raw = RawExchange {
                        request: serde_json::json!({
                            "model": cfg.model_id,
                            "temperature": cfg.temperature,
                            "max_tokens": cfg.max_tokens,
                            "messages": messages,
                        }),
                        response: serde_json::json!({ "text": text }),
                    };
                    return Ok((text, raw));
                }
                Err(e) => {
                    log::debug!(
                        "completion failed: attempt={} latency_ms={} error={}",
                        attempt + 1,
                        started.elapsed().as_millis(),
                        e
                    );
                    last_err = e.to_string();
                }
            }
        }
        Err(GatewayError::Transport {
            attempts: cfg.retries + 1,
            last: last_err,
        })
    }
}

/// Sliding-window requests-per-minute limiter shared across sessions.
struct RateLimiter {
    per_minute: u32,
    window: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    fn new(per_minute: u32) -> Self {
        RateLimiter {
            per_minute: per_minute.max(1),
            window: Mutex::new(VecDeque::new()),
        }
    }

    fn acquire(&self) {
        loop {
            let wait = {
                let mut window = self.window.lock().unwrap();
                let cutoff = Instant::now() - Duration::from_secs(60);
                while window.front().is_some_and(|t| *t < cutoff) {
                    window.pop_front();
                }
                if (window.len() as u32) < self.per_minute {
                    window.push_back(Instant::now());
                    None
                } else {
                    Some(Duration::from_secs(60) - window.front().unwrap().elapsed())
                }
            };
            match wait {
                None => return,
                Some(d) => std::thread::sleep(d.min(Duration::from_millis(200))),
            }
        }
    }
}

/// Strips code fences, finds the first balanced JSON object in `text`, and
/// verifies that all `required_fields` are present.
pub fn extract_structured(
    text: &str,
    required_fields: &[&str],
) -> Result<serde_json::Map<String, serde_json::Value>, GatewayError> {
    let cleaned = strip_code_fences(text);
    let object = first_json_object(&cleaned).ok_or(GatewayError::NoObject)?;
    for field in required_fields {
        if !object.contains_key(*field) {
            return Err(GatewayError::MissingField(field.to_string()));
        }
    }
    Ok(object)
}

fn strip_code_fences(text: &str) -> String {
    text.lines()
        .filter(|line| !line.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn first_json_object(text: &str) -> Option<serde_json::Map<String, serde_json::Value>> {
    let bytes = text.as_bytes();
    let mut start = None;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' if start.is_some() => in_string = true,
            b'{' => {
                if start.is_none() {
                    start = Some(i);
                }
                depth += 1;
            }
            b'}' if start.is_some() => {
                depth -= 1;
                if depth == 0 {
                    let candidate = &text[start.unwrap()..=i];
                    if let Ok(serde_json::Value::Object(map)) = serde_json::from_str(candidate) {
                        return Some(map);
                    }
                    // Not valid JSON after all; keep scanning.
                    start = None;
                }
            }
            _ => {}
        }
    }
    None
}

/// Echoes the content of the last message; used in smoke tests.
pub struct EchoProvider;

impl ChatProvider for EchoProvider {
    fn complete_once(
        &self,
        messages: &[ChatMessage],
        _cfg: &ModelConfig,
    ) -> Result<String, ProviderFailure> {
        Ok(messages.last().map(|m| m.content.clone()).unwrap_or_default())
    }
}

/// Canned responses keyed by a hash of the full prompt, loaded from a fixture
/// directory (`<hash>.txt`) or registered programmatically. Lets the whole
/// environment run offline.
pub struct StubProvider {
    responses: BTreeMap<String, String>,
}

impl StubProvider {
    pub fn new() -> Self {
        StubProvider {
            responses: BTreeMap::new(),
        }
    }

    /// Loads `<hash>.txt` fixture files from a directory.
    pub fn from_fixture_dir(dir: &std::path::Path) -> std::io::Result<Self> {
        let mut responses = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("txt") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    responses.insert(stem.to_string(), std::fs::read_to_string(&path)?);
                }
            }
        }
        Ok(StubProvider { responses })
    }

    pub fn insert(&mut self, messages: &[ChatMessage], response: impl Into<String>) {
        self.responses.insert(prompt_hash(messages), response.into());
    }

    pub fn insert_hash(&mut self, hash: impl Into<String>, response: impl Into<String>) {
        self.responses.insert(hash.into(), response.into());
    }
}

impl Default for StubProvider {
    fn default() -> Self {
        Self::new()
    }
}

impl ChatProvider for StubProvider {
    fn complete_once(
        &self,
        messages: &[ChatMessage],
        _cfg: &ModelConfig,
    ) -> Result<String, ProviderFailure> {
        let hash = prompt_hash(messages);
        self.responses
            .get(&hash)
            .cloned()
            .ok_or_else(|| ProviderFailure(format!("no stub response for prompt hash {hash}")))
    }
}

/// Stable hash identifying a prompt; used to key stub fixtures.
pub fn prompt_hash(messages: &[ChatMessage]) -> String {
    let mut hasher = Sha256::new();
    for m in messages {
        hasher.update(match m.role {
            Role::System => b"system:".as_slice(),
            Role::User => b"user:",
            Role::Assistant => b"assistant:",
        });
        hasher.update(m.content.as_bytes());
        hasher.update(b"\n");
    }
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// OpenAI-compatible HTTP chat-completion provider. Credentials come from
/// the environment variable named in the config.
pub struct HttpProvider {
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    pub fn new() -> Self {
        HttpProvider {
            client: reqwest::blocking::Client::new(),
        }
    }

    fn resolve_key(cfg: &ModelConfig) -> Result<String, GatewayError> {
        let var = cfg
            .api_key_env
            .as_deref()
            .ok_or_else(|| GatewayError::MissingCredential("<api_key_env unset>".to_string()))?;
        std::env::var(var).map_err(|_| GatewayError::MissingCredential(var.to_string()))
    }

    /// Fails fast if the credential variable is unresolvable.
    pub fn check_credentials(cfg: &ModelConfig) -> Result<(), GatewayError> {
        Self::resolve_key(cfg).map(|_| ())
    }
}

impl Default for HttpProvider {
    fn default() -> Self {
        Self::new()
    }
}

impl ChatProvider for HttpProvider {
    fn complete_once(
        &self,
        messages: &[ChatMessage],
        cfg: &ModelConfig,
    ) -> Result<String, ProviderFailure> {
        let key = Self::resolve_key(cfg).map_err(|e| ProviderFailure(e.to_string()))?;
        let base = cfg
            .base_url
            .as_deref()
            .unwrap_or("https://api.openai.com/v1");
        let url = format!("{}/chat/completions", base.trim_end_matches('/'));
        let body = serde_json::json!({
            "model": cfg.model_id,
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
            "messages": messages.iter().map(|m| serde_json::json!({
                "role": match m.role {
                    Role::System => "system",
                    Role::User => "user",
                    Role::Assistant => "assistant",
                },
                "content": m.content,
            })).collect::<Vec<_>>(),
        });
        let response = self
            .client
            .post(&url)
            .bearer_auth(key)
            .timeout(Duration::from_secs_f64(cfg.timeout_s))
            .json(&body)
            .send()
            .map_err(|e| ProviderFailure(e.to_string()))?;
        let status = response.status();
        let payload: serde_json::Value =
            response.json().map_err(|e| ProviderFailure(e.to_string()))?;
        if !status.is_success() {
            return Err(ProviderFailure(format!("HTTP {status}: {payload}")));
        }
        payload["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderFailure("response missing choices[0].message.content".into()))
    }
}
