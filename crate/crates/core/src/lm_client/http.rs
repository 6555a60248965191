//! HTTP client for the model gateway.
//!
//! `POST /v1/complete` and `POST /v1/embed`, JSON in and out. Timeouts,
//! connection failures, 429 and 5xx are retried with exponential backoff;
//! other 4xx and malformed bodies fail immediately.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{FinishReason, LmClient, LmError, LmRequest, LmResponse};

pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;
pub const DEFAULT_RETRIES: usize = 2;
const DEFAULT_BACKOFF_MS: u64 = 250;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub base_url: String,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: usize,
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
    #[serde(default)]
    pub bearer_token: Option<String>,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

fn default_retries() -> usize {
    DEFAULT_RETRIES
}

fn default_backoff() -> u64 {
    DEFAULT_BACKOFF_MS
}

impl ClientConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
            retries: DEFAULT_RETRIES,
            backoff_base_ms: DEFAULT_BACKOFF_MS,
            bearer_token: None,
        }
    }

    /// Delay before retry number `retry` (0-based).
    pub fn backoff(&self, retry: usize) -> Duration {
        Duration::from_millis(self.backoff_base_ms.saturating_mul(1u64 << retry.min(16)))
    }
}

#[derive(Serialize)]
struct CompleteBody<'a> {
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    stop: &'a [String],
}

#[derive(Deserialize)]
struct CompleteReply {
    text: String,
    finish_reason: FinishReason,
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedReply {
    vectors: Vec<Vec<f32>>,
    dim: usize,
}

enum Failure {
    Retryable { timeout: bool, message: String },
    Fatal(LmError),
}

pub struct GatewayClient {
    config: ClientConfig,
    http: Client,
}

impl GatewayClient {
    pub fn new(config: ClientConfig) -> Result<Self, LmError> {
        let http = Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| LmError::InvalidRequest(format!("cannot build http client: {e}")))?;
        Ok(Self { config, http })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn attempt<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, Failure> {
        let mut req = self.http.post(self.url(path)).json(body);
        if let Some(token) = &self.config.bearer_token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| Failure::Retryable {
            timeout: e.is_timeout(),
            message: e.to_string(),
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Failure::Retryable {
            timeout: e.is_timeout(),
            message: e.to_string(),
        })?;
        if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
            return Err(Failure::Retryable {
                timeout: false,
                message: format!("HTTP {status}: {text}"),
            });
        }
        if !status.is_success() {
            let detail = serde_json::from_str::<serde_json::Value>(&text)
                .ok()
                .and_then(|v| v.get("error").and_then(|e| e.as_str()).map(str::to_string))
                .unwrap_or(text);
            return Err(Failure::Fatal(LmError::Protocol(format!("HTTP {status}: {detail}"))));
        }
        serde_json::from_str(&text)
            .map_err(|e| Failure::Fatal(LmError::Protocol(format!("bad response body: {e}"))))
    }

    fn call<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, LmError> {
        let attempts = self.config.retries + 1;
        let mut last = Failure::Retryable {
            timeout: false,
            message: String::new(),
        };
        for i in 0..attempts {
            if i > 0 {
                thread::sleep(self.config.backoff(i - 1));
            }
            match self.attempt(path, body) {
                Ok(r) => return Ok(r),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(f) => last = f,
            }
        }
        Err(match last {
            Failure::Retryable { timeout: true, .. } => LmError::Timeout { attempts },
            Failure::Retryable { message, .. } => LmError::Server { attempts, message },
            Failure::Fatal(e) => e,
        })
    }

    /// Embeds a batch of texts through `/v1/embed`.
    pub fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, LmError> {
        let reply: EmbedReply = self.call("/v1/embed", &EmbedBody { texts })?;
        if reply.vectors.len() != texts.len() {
            return Err(LmError::Protocol(format!(
                "{} vectors for {} texts",
                reply.vectors.len(),
                texts.len()
            )));
        }
        if reply.vectors.iter().any(|v| v.len() != reply.dim) {
            return Err(LmError::Protocol("vector length disagrees with dim".into()));
        }
        Ok(reply.vectors)
    }
}

impl LmClient for GatewayClient {
    fn complete(&self, req: &LmRequest) -> Result<LmResponse, LmError> {
        req.validate()?;
        let body = CompleteBody {
            prompt: &req.prompt,
            max_tokens: req.params.max_tokens,
            temperature: req.params.temperature,
            stop: &req.params.stop,
        };
        let reply: CompleteReply = self.call("/v1/complete", &body)?;
        Ok(LmResponse {
            text: reply.text,
            finish_reason: reply.finish_reason,
        })
    }
}
