//! Chat-completion gateway: prompt rendering, backends, retries and usage
//! accounting.

mod http;
mod prompt;
mod scripted;

pub use http::{HttpBackend, HttpBackendConfig};
pub use prompt::{render_str, Binding, Bindings, RenderError, TemplateId, TemplateSet};
pub use scripted::{LogitSpec, Matcher, ScriptEntry, ScriptError, ScriptFile, ScriptedBackend};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogit {
    pub token: String,
    pub logit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub template: TemplateId,
    pub bindings: Bindings,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    /// Request the top-K logits at the first generated answer token.
    pub logit_capture: bool,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    /// Sorted descending, at most `top_k` entries; `None` unless requested
    /// and provided by the backend.
    pub first_answer_token_logits: Option<Vec<TokenLogit>>,
    /// False when logits were requested but the backend is black-box.
    pub logits_supported: bool,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency: f64,
}

impl ChatResponse {
    pub fn logit_values(&self) -> Option<Vec<f64>> {
        self.first_answer_token_logits
            .as_ref()
            .map(|l| l.iter().map(|t| t.logit).collect())
    }
}

pub(crate) fn whitespace_tokens(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

/// Per-run usage counters, updated atomically.
#[derive(Debug, Default)]
pub struct UsageCounters {
    llm_calls: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    retries: AtomicU64,
    latency_micros: AtomicU64,
}

/// A frozen copy of [`UsageCounters`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Usage {
    pub llm_calls: u64,
    pub total_prompt_tokens: u64,
    pub total_completion_tokens: u64,
    pub retries: u64,
    /// Sum of backend-reported latencies, in seconds.
    pub wall_time: f64,
}

impl Usage {
    pub fn total_tokens(&self) -> u64 {
        self.total_prompt_tokens + self.total_completion_tokens
    }
}

impl UsageCounters {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&self, response: &ChatResponse) {
        self.llm_calls.fetch_add(1, Ordering::Relaxed);
        self.prompt_tokens
            .fetch_add(response.prompt_tokens, Ordering::Relaxed);
        self.completion_tokens
            .fetch_add(response.completion_tokens, Ordering::Relaxed);
        self.latency_micros
            .fetch_add((response.latency * 1e6).round() as u64, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> Usage {
        Usage {
            llm_calls: self.llm_calls.load(Ordering::Relaxed),
            total_prompt_tokens: self.prompt_tokens.load(Ordering::Relaxed),
            total_completion_tokens: self.completion_tokens.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
            wall_time: self.latency_micros.load(Ordering::Relaxed) as f64 / 1e6,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport failure: {message}")]
    Transport { message: String, retryable: bool },
    #[error("request timed out")]
    Timeout,
    #[error("no scripted response for {key}")]
    NoScript { key: String },
    #[error("malformed backend response: {0}")]
    BadResponse(String),
}

impl BackendError {
    fn retryable(&self) -> bool {
        match self {
            Self::Transport { retryable, .. } => *retryable,
            Self::Timeout => true,
            Self::NoScript { .. } | Self::BadResponse(_) => false,
        }
    }
}

pub trait LlmBackend: Send + Sync {
    fn name(&self) -> &str;
    /// Whether the backend can return first-answer-token logits.
    fn supports_logits(&self) -> bool;
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("{backend} backend failed after {attempts} attempt(s): {source}")]
    Backend {
        backend: String,
        attempts: u32,
        #[source]
        source: BackendError,
    },
    #[error("logit capture requires top_k >= 1")]
    ZeroTopK,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_ms: 250,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 512,
        }
    }
}

#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn LlmBackend>,
    templates: TemplateSet,
    retry: RetryPolicy,
    decoding: Decoding,
}

impl Gateway {
    pub fn new(backend: Arc<dyn LlmBackend>) -> Self {
        Self {
            backend,
            templates: TemplateSet::default(),
            retry: RetryPolicy::default(),
            decoding: Decoding::default(),
        }
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_decoding(mut self, decoding: Decoding) -> Self {
        self.decoding = decoding;
        self
    }

    pub fn backend(&self) -> &Arc<dyn LlmBackend> {
        &self.backend
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn render(&self, template: TemplateId, bindings: &Bindings) -> Result<String, RenderError> {
        self.templates.render(template, bindings)
    }

    /// Renders `template` and builds a request; `top_k` enables logit capture.
    pub fn request(
        &self,
        template: TemplateId,
        bindings: Bindings,
        top_k: Option<usize>,
    ) -> Result<ChatRequest, LlmError> {
        let prompt = self.render(template, &bindings)?;
        Ok(ChatRequest {
            template,
            bindings,
            prompt,
            max_tokens: self.decoding.max_tokens,
            temperature: self.decoding.temperature,
            logit_capture: top_k.is_some(),
            top_k: top_k.unwrap_or(0),
        })
    }

    /// Sends `request`, retrying transient failures with exponential backoff.
    /// Only the successful attempt is counted as a call.
    pub fn complete(&self, request: &ChatRequest, counters: &UsageCounters) -> Result<ChatResponse, LlmError> {
        if request.logit_capture && request.top_k == 0 {
            return Err(LlmError::ZeroTopK);
        }
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.backend.send(request) {
                Ok(mut response) => {
                    self.post_process(request, &mut response);
                    counters.record(&response);
                    return Ok(response);
                }
                Err(err) if err.retryable() && attempt <= self.retry.max_retries => {
                    counters.retries.fetch_add(1, Ordering::Relaxed);
                    let wait = self.retry.backoff_ms.saturating_mul(1 << (attempt - 1).min(10));
                    tracing::warn!(backend = self.backend.name(), attempt, wait_ms = wait, error = %err, "retrying LLM request");
                    std::thread::sleep(Duration::from_millis(wait));
                }
                Err(source) => {
                    return Err(LlmError::Backend {
                        backend: self.backend.name().to_string(),
                        attempts: attempt,
                        source,
                    })
                }
            }
        }
    }

    /// Renders, sends and returns the response in one step.
    pub fn ask(
        &self,
        template: TemplateId,
        bindings: Bindings,
        top_k: Option<usize>,
        counters: &UsageCounters,
    ) -> Result<ChatResponse, LlmError> {
        let request = self.request(template, bindings, top_k)?;
        self.complete(&request, counters)
    }

    fn post_process(&self, request: &ChatRequest, response: &mut ChatResponse) {
        if !request.logit_capture {
            response.first_answer_token_logits = None;
            response.logits_supported = self.backend.supports_logits();
            return;
        }
        if !self.backend.supports_logits() {
            response.first_answer_token_logits = None;
            response.logits_supported = false;
            return;
        }
        response.logits_supported = true;
        if let Some(logits) = response.first_answer_token_logits.as_mut() {
            logits.sort_by(|a, b| b.logit.total_cmp(&a.logit));
            logits.truncate(request.top_k);
        }
    }
}
