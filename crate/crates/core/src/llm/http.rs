//! Remote chat-completions backend (`POST {url}` with a messages array).

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{whitespace_tokens, BackendError, ChatRequest, ChatResponse, LlmBackend, TokenLogit};
use crate::transport::{HttpFailure, JsonClient};

/// Marker in the answer-producing templates after which the first answer
/// token is read.
const ANSWER_MARKER: &str = "answer:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    /// Full chat-completions endpoint URL.
    pub url: String,
    pub model: String,
    /// Environment variable holding a bearer token, if any.
    #[serde(default)]
    pub auth_env: Option<String>,
    /// Whether the server returns `logprobs`/`top_logprobs`.
    #[serde(default)]
    pub supports_logits: bool,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

fn default_timeout() -> f64 {
    60.0
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    client: JsonClient,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        let auth = config
            .auth_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        let client = JsonClient::new(&config.url, Duration::from_secs_f64(config.timeout_s), auth);
        Self { config, client }
    }
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<CompletionUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct CompletionUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Vec<TokenInfo>,
}

#[derive(Deserialize)]
struct TokenInfo {
    token: String,
    #[serde(default)]
    top_logprobs: Vec<TopToken>,
}

#[derive(Deserialize)]
struct TopToken {
    token: String,
    logprob: f64,
}

/// Index of the first non-blank token after the answer marker, or the first
/// non-blank token when the marker never appears.
fn first_answer_token(tokens: &[TokenInfo]) -> Option<usize> {
    let mut text = String::new();
    let mut marker_end = None;
    for (i, t) in tokens.iter().enumerate() {
        let start = text.len();
        text.push_str(&t.token);
        if marker_end.is_none() {
            if let Some(pos) = text.to_lowercase().find(ANSWER_MARKER) {
                marker_end = Some(pos + ANSWER_MARKER.len());
            }
        }
        if let Some(end) = marker_end {
            // The token must start at or after the marker and carry content.
            let visible = &text[start.max(end).min(text.len())..];
            if start + t.token.len() > end && !visible.trim().is_empty() {
                return Some(i);
            }
        }
    }
    tokens.iter().position(|t| !t.token.trim().is_empty())
}

impl LlmBackend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn supports_logits(&self) -> bool {
        self.config.supports_logits
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let want_logits = request.logit_capture && self.config.supports_logits;
        if want_logits {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(request.top_k);
        }
        let started = Instant::now();
        let completion: Completion = self.client.post("", &body).map_err(|f| match f {
            HttpFailure::Timeout => BackendError::Timeout,
            HttpFailure::Decode(m) => BackendError::BadResponse(m),
            other => BackendError::Transport {
                retryable: other.retryable(),
                message: other.to_string(),
            },
        })?;
        let latency = started.elapsed().as_secs_f64();
        let choice = completion
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::BadResponse("no choices".into()))?;
        let text = choice.message.content.unwrap_or_default();
        let first_answer_token_logits = if want_logits {
            choice.logprobs.and_then(|lp| {
                first_answer_token(&lp.content).map(|i| {
                    lp.content[i]
                        .top_logprobs
                        .iter()
                        .map(|t| TokenLogit {
                            token: t.token.clone(),
                            logit: t.logprob,
                        })
                        .collect()
                })
            })
        } else {
            None
        };
        let (prompt_tokens, completion_tokens) = match completion.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            None => (whitespace_tokens(&request.prompt), whitespace_tokens(&text)),
        };
        Ok(ChatResponse {
            text,
            first_answer_token_logits,
            logits_supported: self.config.supports_logits,
            prompt_tokens,
            completion_tokens,
            latency,
        })
    }
}
