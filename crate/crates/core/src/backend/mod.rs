//! Generation backends.
//!
//! [`Backend`] is the one interface the strategies talk to. Two
//! implementations ship: [`HttpBackend`] for OpenAI-compatible
//! chat-completion endpoints and [`MockBackend`], a seeded simulator of a
//! length-following model used for desk-scale testing.

mod http;
mod mock;
mod synth;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::PromptPlan;

pub use http::{HttpBackend, HttpConfig};
pub use mock::{BiasCurve, BiasPoint, MockBackend, MockMode, MockProfile};

/// Sampling temperature used unless configured otherwise.
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
/// Tokens reserved for the completion.
pub const DEFAULT_MAX_NEW_TOKENS: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub n: usize,
    pub max_new_tokens: usize,
    /// Only honoured by mock backends (and forwarded to endpoints that accept it).
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            n: 1,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            seed: None,
        }
    }
}

impl GenerationParams {
    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    /// Summary body, with the echoed part of the prefill already in front.
    pub text: String,
    pub backend_id: String,
    pub latency: Duration,
    pub token_usage: Option<TokenUsage>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint rejected the assistant prefill: {0}")]
    PrefillRejected(String),
    #[error("prompt exceeds the model context: {0}")]
    ContextOverflow(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed endpoint response: {0}")]
    InvalidResponse(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("sample count must be at least 1")]
    ZeroSamples,
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    /// Returns exactly `params.n` completions on success.
    fn generate(
        &self,
        plan: &PromptPlan,
        params: &GenerationParams,
    ) -> Result<Vec<Completion>, BackendError>;

    /// Whether multi-turn prefilled revision plans are honoured.
    fn supports_revision(&self) -> bool;
}

pub fn revise_capability(backend: &dyn Backend) -> bool {
    backend.supports_revision()
}
