//! Completion clients.
//!
//! [`LmClient`] is the single seam between the planner and a language model.
//! [`GatewayClient`] speaks the HTTP completion/embedding protocol; the
//! oracles answer in-process and are fully deterministic.

mod http;
mod oracle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{ClientConfig, GatewayClient, DEFAULT_RETRIES, DEFAULT_TIMEOUT_MS};
pub use oracle::{GroundTruthOracle, ScriptEntry, ScriptedOracle};

/// Decoding parameters sent with every completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub max_tokens: usize,
    pub temperature: f64,
    pub stop: Vec<String>,
}

pub fn default_stops() -> Vec<String> {
    vec!["\n".into(), "Question:".into(), "Task:".into()]
}

impl CompletionParams {
    pub fn gosp() -> Self {
        Self {
            max_tokens: 24,
            temperature: 0.0,
            stop: default_stops(),
        }
    }

    pub fn sodp() -> Self {
        Self {
            max_tokens: 32,
            ..Self::gosp()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmRequest {
    pub prompt: String,
    pub params: CompletionParams,
}

impl LmRequest {
    pub fn new(prompt: impl Into<String>, params: CompletionParams) -> Self {
        Self {
            prompt: prompt.into(),
            params,
        }
    }

    pub fn validate(&self) -> Result<(), LmError> {
        if self.prompt.is_empty() {
            return Err(LmError::InvalidRequest("empty prompt".into()));
        }
        if self.params.max_tokens == 0 {
            return Err(LmError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        if self.params.temperature.is_nan() || self.params.temperature < 0.0 {
            return Err(LmError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmResponse {
    pub text: String,
    pub finish_reason: FinishReason,
}

impl LmResponse {
    pub fn stop(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: FinishReason::Stop,
        }
    }

    pub fn error() -> Self {
        Self {
            text: String::new(),
            finish_reason: FinishReason::Error,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmError {
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: usize },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("server error after {attempts} attempt(s): {message}")]
    Server { attempts: usize, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("task is not solvable: {0}")]
    UnsolvableTask(String),
}

/// A text-completion backend. Implementations are stateless per request.
pub trait LmClient: Send + Sync {
    fn complete(&self, req: &LmRequest) -> Result<LmResponse, LmError>;
}

impl<T: LmClient + ?Sized> LmClient for &T {
    fn complete(&self, req: &LmRequest) -> Result<LmResponse, LmError> {
        (**self).complete(req)
    }
}

impl<T: LmClient + ?Sized> LmClient for Box<T> {
    fn complete(&self, req: &LmRequest) -> Result<LmResponse, LmError> {
        (**self).complete(req)
    }
}

impl<T: LmClient + ?Sized> LmClient for std::sync::Arc<T> {
    fn complete(&self, req: &LmRequest) -> Result<LmResponse, LmError> {
        (**self).complete(req)
    }
}
