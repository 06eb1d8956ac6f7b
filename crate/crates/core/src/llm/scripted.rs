//! Deterministic scripted backend for tests and offline demos.
//!
//! A script is a JSON file `{"entries": [...]}`. Each entry either carries an
//! exact `key` (see [`ScriptedBackend::key_for`]) or a `template` plus
//! optional `match` rules over the request bindings. Exact keys win; rule
//! entries are tried in file order and the first match answers. Responses are
//! fixed per entry, so an identical request always gets an identical reply.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{
    whitespace_tokens, BackendError, Binding, Bindings, ChatRequest, ChatResponse, LlmBackend,
    TemplateId, TokenLogit,
};

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read script {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid script {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("script entry {index} has neither `key` nor `template`")]
    Unanchored { index: usize },
}

/// A condition on one binding's flattened text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Matcher {
    Equals(String),
    Rule {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        equals: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        contains: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        excludes: Option<String>,
    },
}

impl Matcher {
    fn matches(&self, value: Option<&Binding>) -> bool {
        let text = value.map(Binding::flatten);
        match self {
            Self::Equals(want) => text.as_deref() == Some(want.as_str()),
            Self::Rule {
                equals,
                contains,
                excludes,
            } => {
                let text = text.unwrap_or_default();
                equals.as_ref().is_none_or(|e| &text == e)
                    && contains.as_ref().is_none_or(|c| text.contains(c.as_str()))
                    && excludes.as_ref().is_none_or(|x| !text.contains(x.as_str()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogitSpec {
    Value(f64),
    Pair(String, f64),
    Token { token: String, logit: f64 },
}

impl LogitSpec {
    fn to_token_logit(&self, index: usize) -> TokenLogit {
        match self {
            Self::Value(v) => TokenLogit {
                token: format!("<{index}>"),
                logit: *v,
            },
            Self::Pair(t, v) | Self::Token { token: t, logit: v } => TokenLogit {
                token: t.clone(),
                logit: *v,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<TemplateId>,
    #[serde(default, rename = "match", skip_serializing_if = "HashMap::is_empty")]
    pub matchers: HashMap<String, Matcher>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<LogitSpec>>,
    /// Free-form note for fixture authors; ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptFile {
    pub entries: Vec<ScriptEntry>,
}

#[derive(Debug, Default)]
pub struct ScriptedBackend {
    entries: Vec<ScriptEntry>,
    exact: HashMap<String, usize>,
    invocations: AtomicU64,
}

impl ScriptedBackend {
    pub fn from_entries(entries: Vec<ScriptEntry>) -> Result<Self, ScriptError> {
        let mut exact = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            match (&e.key, e.template) {
                (Some(k), _) => {
                    exact.entry(k.clone()).or_insert(i);
                }
                (None, Some(_)) => {}
                (None, None) => return Err(ScriptError::Unanchored { index: i }),
            }
        }
        Ok(Self {
            entries,
            exact,
            invocations: AtomicU64::new(0),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        Self::load_layered(&[path])
    }

    /// Loads several scripts; entries of earlier files take precedence.
    pub fn load_layered<P: AsRef<Path>>(paths: &[P]) -> Result<Self, ScriptError> {
        let mut entries = Vec::new();
        for path in paths {
            let path = path.as_ref();
            let text = std::fs::read_to_string(path).map_err(|e| ScriptError::Io {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            let file: ScriptFile = serde_json::from_str(&text).map_err(|e| ScriptError::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            entries.extend(file.entries);
        }
        Self::from_entries(entries)
    }

    /// `template:digest`, where digest is the first 16 hex digits of SHA-256
    /// over the canonical JSON of the bindings.
    pub fn key_for(template: TemplateId, bindings: &Bindings) -> String {
        let canonical = serde_json::to_string(bindings).expect("bindings serialize");
        let digest = Sha256::digest(canonical.as_bytes());
        format!("{}:{}", template.as_str(), &hex::encode(digest)[..16])
    }

    /// Number of `send` calls served so far.
    pub fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::Relaxed)
    }

    fn lookup(&self, request: &ChatRequest) -> Option<&ScriptEntry> {
        let key = Self::key_for(request.template, &request.bindings);
        if let Some(&i) = self.exact.get(&key) {
            return Some(&self.entries[i]);
        }
        self.entries.iter().find(|e| {
            e.key.is_none()
                && e.template == Some(request.template)
                && e.matchers
                    .iter()
                    .all(|(name, m)| m.matches(request.bindings.get(name)))
        })
    }
}

impl LlmBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn supports_logits(&self) -> bool {
        true
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.invocations.fetch_add(1, Ordering::Relaxed);
        let entry = self.lookup(request).ok_or_else(|| BackendError::NoScript {
            key: Self::key_for(request.template, &request.bindings),
        })?;
        let first_answer_token_logits = entry.logits.as_ref().map(|specs| {
            specs
                .iter()
                .enumerate()
                .map(|(i, s)| s.to_token_logit(i))
                .collect()
        });
        Ok(ChatResponse {
            text: entry.text.clone(),
            first_answer_token_logits,
            logits_supported: true,
            prompt_tokens: whitespace_tokens(&request.prompt),
            completion_tokens: whitespace_tokens(&entry.text),
            latency: 0.0,
        })
    }
}
