//! Blocking client for chat-completions style endpoints.
//!
//! Requests are `POST {base_url}/chat/completions` with a `messages` array,
//! the model id and generation parameters. Transient failures (transport
//! errors, timeouts, 429 and 5xx) are retried with exponential backoff.
//! An optional on-disk cache keyed by a hash of the full request makes reruns
//! reproducible without touching the endpoint.

use std::fmt;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport failure after {} attempt(s): {}", .attempts.len(), .attempts.join("; "))]
    Transport { attempts: Vec<String> },

    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },

    #[error("malformed endpoint reply ({reason}): {raw}")]
    Protocol { reason: String, raw: String },

    #[error("client configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: "system".into(),
            content: content.into(),
        }
    }
}

/// One completion. `score` is a sequence log-probability when the endpoint
/// volunteers one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Anything that can turn a conversation into `n` candidate replies.
pub trait ChatModel: Send + Sync {
    fn complete(&self, messages: &[Message], n: usize) -> Result<Vec<Candidate>, ClientError>;

    fn model_id(&self) -> &str;

    /// Whether one request may ask for several candidates.
    fn supports_multiple_candidates(&self) -> bool {
        true
    }
}

/// API key wrapper whose `Debug` never shows the value.
#[derive(Clone)]
pub struct Secret(String);

impl Secret {
    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(***)")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub base_url: String,
    pub model_id: String,
    /// Name of the environment variable that holds the API key.
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    pub temperature: f64,
    pub max_tokens: u32,
    pub candidate_count: usize,
    /// Endpoint accepts `n > 1` in one request.
    pub multi_candidate: bool,
    pub cache_dir: Option<PathBuf>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            base_url: "http://localhost:8000/v1".into(),
            model_id: "default".into(),
            api_key_env: "KGREASON_API_KEY".into(),
            timeout_secs: 60.0,
            max_retries: 3,
            max_in_flight: 4,
            backoff_base_ms: 500,
            backoff_max_ms: 8_000,
            temperature: 0.0,
            max_tokens: 512,
            candidate_count: 1,
            multi_candidate: true,
            cache_dir: None,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<(), ClientError> {
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(ClientError::Config("timeout must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(ClientError::Config("max_in_flight must be at least 1".into()));
        }
        if self.candidate_count == 0 {
            return Err(ClientError::Config("candidate_count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn endpoint(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_owned()
        } else {
            format!("{base}/chat/completions")
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor).min(self.backoff_max_ms))
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
pub struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

pub struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.permits.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    max_tokens: u32,
    n: usize,
    stream: bool,
}

/// Extracts candidates from a chat-completions reply body.
///
/// A per-choice score is taken from a numeric `score` field, or else summed
/// from `logprobs.content[].logprob` when present.
pub fn parse_chat_response(body: &str) -> Result<Vec<Candidate>, ClientError> {
    let protocol = |reason: &str| ClientError::Protocol {
        reason: reason.to_owned(),
        raw: body.to_owned(),
    };
    let value: Value = serde_json::from_str(body).map_err(|e| protocol(&format!("invalid JSON: {e}")))?;
    let choices = value
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| protocol("missing choices array"))?;
    if choices.is_empty() {
        return Err(protocol("empty choices array"));
    }
    choices
        .iter()
        .map(|choice| {
            let text = choice
                .pointer("/message/content")
                .or_else(|| choice.get("text"))
                .and_then(Value::as_str)
                .ok_or_else(|| protocol("choice without message content"))?;
            let score = choice.get("score").and_then(Value::as_f64).or_else(|| {
                choice
                    .pointer("/logprobs/content")
                    .and_then(Value::as_array)
                    .map(|toks| {
                        toks.iter()
                            .filter_map(|t| t.get("logprob").and_then(Value::as_f64))
                            .sum()
                    })
            });
            Ok(Candidate {
                text: text.to_owned(),
                score,
            })
        })
        .collect()
}

pub struct HttpChatClient {
    config: ClientConfig,
    api_key: Option<Secret>,
    agent: ureq::Agent,
    limiter: Semaphore,
}

impl fmt::Debug for HttpChatClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpChatClient")
            .field("config", &self.config)
            .field("api_key", &self.api_key)
            .finish()
    }
}

impl HttpChatClient {
    /// Builds a client, reading the API key from `config.api_key_env` if set.
    pub fn new(config: ClientConfig) -> Result<Self, ClientError> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .map(Secret);
        let agent_config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build();
        Ok(HttpChatClient {
            limiter: Semaphore::new(config.max_in_flight),
            agent: ureq::Agent::new_with_config(agent_config),
            api_key,
            config,
        })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    /// `complete` with the configured candidate count.
    pub fn chat(&self, messages: &[Message]) -> Result<Vec<Candidate>, ClientError> {
        self.complete(messages, self.config.candidate_count)
    }

    fn cache_path(&self, body: &str) -> Option<PathBuf> {
        let dir = self.config.cache_dir.as_ref()?;
        let digest = Sha256::digest(body.as_bytes());
        Some(dir.join(format!("{}.json", hex::encode(digest))))
    }

    fn send_once(&self, url: &str, body: &str) -> Result<Result<String, ClientError>, String> {
        let _permit = self.limiter.acquire();
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {}", key.expose()));
        }
        let resp = req.send(body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp.into_body().read_to_string().map_err(|e| e.to_string())?;
        if status == 429 || status >= 500 {
            return Err(format!("HTTP {status}"));
        }
        if !(200..300).contains(&status) {
            return Ok(Err(ClientError::Status { status, body: text }));
        }
        Ok(Ok(text))
    }
}

impl ChatModel for HttpChatClient {
    fn complete(&self, messages: &[Message], n: usize) -> Result<Vec<Candidate>, ClientError> {
        if messages.is_empty() {
            return Err(ClientError::Config("no messages to send".into()));
        }
        let body = serde_json::to_string(&ChatRequest {
            model: &self.config.model_id,
            messages,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
            n: n.max(1),
            stream: false,
        })
        .map_err(|e| ClientError::Config(e.to_string()))?;

        let cache = self.cache_path(&body);
        if let Some(path) = &cache {
            if let Ok(bytes) = std::fs::read(path) {
                if let Ok(hit) = serde_json::from_slice::<Vec<Candidate>>(&bytes) {
                    log::debug!("cache hit {}", path.display());
                    return Ok(hit);
                }
            }
        }

        let url = self.config.endpoint();
        log::debug!("POST {url} body={body}");
        let mut attempts = Vec::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff(attempt - 1));
            }
            match self.send_once(&url, &body) {
                Ok(Ok(text)) => {
                    log::debug!("reply {text}");
                    let candidates = parse_chat_response(&text)?;
                    if let Some(path) = &cache {
                        if let Some(parent) = path.parent() {
                            let _ = std::fs::create_dir_all(parent);
                        }
                        if let Ok(json) = serde_json::to_vec(&candidates) {
                            if let Err(e) = std::fs::write(path, json) {
                                log::warn!("could not write cache entry {}: {e}", path.display());
                            }
                        }
                    }
                    return Ok(candidates);
                }
                Ok(Err(fatal)) => return Err(fatal),
                Err(transient) => {
                    log::warn!("attempt {} failed: {transient}", attempt + 1);
                    attempts.push(format!("attempt {}: {transient}", attempt + 1));
                }
            }
        }
        Err(ClientError::Transport { attempts })
    }

    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn supports_multiple_candidates(&self) -> bool {
        self.config.multi_candidate
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_choices_and_scores() {
        let body = r#"{"choices":[
            {"message":{"role":"assistant","content":"a"},"score":-0.5},
            {"message":{"role":"assistant","content":"b"},"logprobs":{"content":[{"logprob":-1.0},{"logprob":-0.25}]}},
            {"message":{"role":"assistant","content":"c"}}]}"#;
        let got = parse_chat_response(body).unwrap();
        assert_eq!(got.len(), 3);
        assert_eq!(got[0].score, Some(-0.5));
        assert_eq!(got[1].score, Some(-1.25));
        assert_eq!(
            got[2],
            Candidate {
                text: "c".into(),
                score: None
            }
        );
    }

    #[test]
    fn protocol_errors_keep_raw_body() {
        match parse_chat_response("not json") {
            Err(ClientError::Protocol { raw, .. }) => assert_eq!(raw, "not json"),
            other => panic!("{other:?}"),
        }
        assert!(parse_chat_response(r#"{"choices":[]}"#).is_err());
        assert!(parse_chat_response(r#"{"choices":[{"message":{}}]}"#).is_err());
    }

    #[test]
    fn endpoint_and_backoff() {
        let mut c = ClientConfig {
            base_url: "http://x/v1/".into(),
            ..Default::default()
        };
        assert_eq!(c.endpoint(), "http://x/v1/chat/completions");
        c.base_url = "http://x/v1/chat/completions".into();
        assert_eq!(c.endpoint(), "http://x/v1/chat/completions");
        c.backoff_base_ms = 100;
        c.backoff_max_ms = 350;
        assert_eq!(c.backoff(0), Duration::from_millis(100));
        assert_eq!(c.backoff(1), Duration::from_millis(200));
        assert_eq!(c.backoff(2), Duration::from_millis(350));
        assert_eq!(c.backoff(80), Duration::from_millis(350));
    }

    #[test]
    fn secret_is_redacted() {
        let s = Secret("sk-very-secret".into());
        assert!(!format!("{s:?}").contains("sk-"));
    }

    #[test]
    fn invalid_config_rejected() {
        let c = ClientConfig {
            timeout_secs: 0.0,
            ..Default::default()
        };
        assert!(matches!(HttpChatClient::new(c), Err(ClientError::Config(_))));
    }
}
