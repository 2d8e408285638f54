//! OpenAI-compatible chat-completions client.
//!
//! The prefill travels as a trailing assistant message; servers that
//! continue the final assistant message return only the continuation.
//! Transport failures, 429 and 5xx responses are retried with bounded
//! exponential backoff. Context overflows and prefill rejections are
//! reported as distinct errors so callers can react to them.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{debug, warn};

use super::{Backend, BackendError, Completion, GenerationParams, TokenUsage};
use crate::prompting::PromptPlan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Full chat-completions URL, e.g. `http://localhost:8000/v1/chat/completions`.
    pub url: String,
    pub model: String,
    /// Name of the environment variable holding the API key, if any.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub backoff_initial_ms: u64,
    pub backoff_max_ms: u64,
    /// Upper bound on simultaneous requests.
    pub concurrency: usize,
    /// Request all samples in one call via `n`; otherwise one call per sample.
    pub supports_n: bool,
    /// Extra top-level fields merged into every request body.
    pub extra_body: Option<Value>,
    /// Print request and response JSON to stderr.
    pub trace: bool,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            url: "http://localhost:8000/v1/chat/completions".into(),
            model: "default".into(),
            api_key_env: None,
            timeout_secs: 300,
            max_attempts: 5,
            backoff_initial_ms: 500,
            backoff_max_ms: 16_000,
            concurrency: 4,
            supports_n: true,
            extra_body: None,
            trace: false,
        }
    }
}

impl HttpConfig {
    /// Delay before retry number `attempt` (1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(20);
        Duration::from_millis(self.backoff_initial_ms.saturating_mul(factor).min(self.backoff_max_ms))
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self { permits: Mutex::new(permits.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpBackend {
    id: String,
    config: HttpConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    gate: Semaphore,
}

#[derive(Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(BackendError),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        if config.max_attempts == 0 {
            return Err(BackendError::Config("max_attempts must be at least 1".into()));
        }
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            id: format!("http:{}", config.model),
            gate: Semaphore::new(config.concurrency),
            config,
            api_key,
            agent,
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    /// Wire body for one request.
    pub fn request_body(&self, plan: &PromptPlan, params: &GenerationParams, n: usize) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": plan.messages,
            "temperature": params.temperature,
            "max_tokens": params.max_new_tokens,
        });
        if self.config.supports_n {
            body["n"] = json!(n);
        }
        if let Some(seed) = params.seed {
            body["seed"] = json!(seed);
        }
        if let (Some(Value::Object(extra)), Value::Object(map)) = (&self.config.extra_body, &mut body) {
            for (k, v) in extra {
                map.insert(k.clone(), v.clone());
            }
        }
        body
    }

    fn post_once(&self, body: &str, has_prefill: bool) -> Attempt {
        let _permit = self.gate.acquire();
        let mut req = self.agent.post(&self.config.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(format!("reading body: {e}")),
        };
        if self.config.trace {
            eprintln!("<<< {status} {text}");
        }
        classify(status, text, has_prefill)
    }

    fn call(&self, plan: &PromptPlan, params: &GenerationParams, n: usize) -> Result<(Vec<String>, Option<TokenUsage>), BackendError> {
        let body = self.request_body(plan, params, n).to_string();
        if self.config.trace {
            eprintln!(">>> POST {} {body}", self.config.url);
        }
        let mut last = String::new();
        for attempt in 1..=self.config.max_attempts {
            match self.post_once(&body, plan.prefill.is_some()) {
                Attempt::Done(text) => return parse_response(&text),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(msg) => {
                    warn!(attempt, "chat completion failed: {msg}");
                    last = msg;
                    if attempt < self.config.max_attempts {
                        std::thread::sleep(self.config.backoff(attempt));
                    }
                }
            }
        }
        Err(BackendError::Transport { attempts: self.config.max_attempts, message: last })
    }
}

fn classify(status: u16, body: String, has_prefill: bool) -> Attempt {
    match status {
        200..=299 => Attempt::Done(body),
        429 | 500..=599 => Attempt::Retry(format!("HTTP {status}: {body}")),
        400 | 413 | 422 => {
            let lower = body.to_lowercase();
            if ["context length", "context_length", "maximum context", "too many tokens", "prompt is too long"]
                .iter()
                .any(|k| lower.contains(k))
            {
                Attempt::Fatal(BackendError::ContextOverflow(body))
            } else if has_prefill
                && ["assistant", "prefill", "final message", "continue_final_message"]
                    .iter()
                    .any(|k| lower.contains(k))
            {
                Attempt::Fatal(BackendError::PrefillRejected(body))
            } else {
                Attempt::Fatal(BackendError::Http { status, body })
            }
        }
        _ => Attempt::Fatal(BackendError::Http { status, body }),
    }
}

fn parse_response(text: &str) -> Result<(Vec<String>, Option<TokenUsage>), BackendError> {
    let resp: ChatResponse =
        serde_json::from_str(text).map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
    let usage = resp.usage.map(|u| TokenUsage {
        prompt_tokens: u.prompt_tokens,
        completion_tokens: u.completion_tokens,
    });
    let texts = resp
        .choices
        .into_iter()
        .map(|c| c.message.content.unwrap_or_default())
        .collect();
    Ok((texts, usage))
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, plan: &PromptPlan, params: &GenerationParams) -> Result<Vec<Completion>, BackendError> {
        if params.n == 0 {
            return Err(BackendError::ZeroSamples);
        }
        let echo = plan.echo_text();
        let mut out = Vec::with_capacity(params.n);
        let mut empty_rounds = 0;
        while out.len() < params.n {
            let want = if self.config.supports_n { params.n - out.len() } else { 1 };
            let started = Instant::now();
            let (texts, usage) = self.call(plan, params, want)?;
            let latency = started.elapsed();
            debug!(want, got = texts.len(), ?latency, "chat completion");
            if texts.is_empty() {
                empty_rounds += 1;
                if empty_rounds >= self.config.max_attempts {
                    return Err(BackendError::InvalidResponse("response carried no choices".into()));
                }
                continue;
            }
            for t in texts.into_iter().take(params.n - out.len()) {
                out.push(Completion {
                    text: format!("{echo}{t}"),
                    backend_id: self.id.clone(),
                    latency,
                    token_usage: usage,
                });
            }
        }
        Ok(out)
    }

    fn supports_revision(&self) -> bool {
        true
    }
}
