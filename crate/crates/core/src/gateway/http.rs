//! OpenAI-compatible chat-completions backend.

use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use super::{Backend, GatewayError, GenerationConfig};

/// Environment variable holding the API key.
pub const API_KEY_ENV: &str = "FRAMELENS_API_KEY";
const FALLBACK_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("network error: {0}")]
    Network(String),
}

impl TransportError {
    fn retryable(&self) -> bool {
        match self {
            TransportError::Status { status, .. } => *status == 429 || *status >= 500,
            TransportError::Network(_) => true,
        }
    }
}

/// Minimal JSON-over-HTTP POST, injectable so tests can observe or forbid
/// network use.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self { agent: config.into() }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value, TransportError> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = bearer {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(TransportError::Status { status, body });
        }
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| TransportError::Network(format!("invalid JSON response: {e}")))
    }
}

/// Endpoint settings shared by the chat and embedding clients.
#[derive(Clone)]
pub struct HttpEndpoint {
    pub base_url: String,
    pub api_key: Option<String>,
    pub transport: Arc<dyn Transport>,
    pub max_retries: u32,
    pub backoff: Duration,
}

impl HttpEndpoint {
    pub fn new(base_url: &str, transport: Arc<dyn Transport>) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: std::env::var(API_KEY_ENV)
                .or_else(|_| std::env::var(FALLBACK_API_KEY_ENV))
                .ok(),
            transport,
            max_retries: 3,
            backoff: Duration::from_millis(500),
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_backoff(mut self, retries: u32, backoff: Duration) -> Self {
        self.max_retries = retries;
        self.backoff = backoff;
        self
    }

    /// POST with bounded retries on 429, 5xx and network errors.
    pub fn post(&self, path: &str, body: &Value) -> Result<Value, TransportError> {
        let url = format!("{}/{}", self.base_url, path.trim_start_matches('/'));
        let mut attempt = 0;
        loop {
            match self.transport.post_json(&url, self.api_key.as_deref(), body) {
                Ok(v) => return Ok(v),
                Err(e) if e.retryable() && attempt < self.max_retries => {
                    let wait = self.backoff * 2u32.pow(attempt);
                    log::warn!("{url}: {e}; retrying in {wait:?}");
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

pub struct HttpBackend {
    endpoint: HttpEndpoint,
}

impl HttpBackend {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        Self { endpoint }
    }

    pub fn request_body(model: &str, prompt: &str, cfg: &GenerationConfig) -> Value {
        let mut body = json!({
            "model": model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_new_tokens,
            "seed": cfg.seed,
        });
        if !cfg.sampling_enabled {
            body["top_p"] = json!(1.0);
        }
        body
    }
}

impl Backend for HttpBackend {
    fn describe(&self) -> String {
        format!("http:{}", self.endpoint.base_url)
    }

    fn complete(&self, model: &str, prompt: &str, cfg: &GenerationConfig) -> Result<String, GatewayError> {
        let body = Self::request_body(model, prompt, cfg);
        let resp = self.endpoint.post("chat/completions", &body).map_err(|e| match e {
            TransportError::Status { status, body } => GatewayError::Http { status, body },
            TransportError::Network(m) => GatewayError::Transport(m),
        })?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| GatewayError::Protocol(format!("no choices[0].message.content in {resp}")))
    }
}
