//! TOML configuration: engine parameters plus graph, LLM and scorer wiring.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Every section is optional; omitted values take their defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::Normalization;
use crate::llm::{Decoding, HttpBackendConfig, RetryPolicy, TemplateId};
use crate::scoring::HttpScorerConfig;
use crate::uncertainty::{EvidenceTransform, DEFAULT_AU_THRESHOLD};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid setting: {0}")]
    Invalid(String),
}

/// Where the repacked prefixes go relative to the instructions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Most relevant prefix listed first.
    #[default]
    First,
    /// Most relevant prefix listed last, next to the question.
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Relations kept by retrieval.
    pub m: usize,
    /// Relations kept by LLM pruning.
    pub n: usize,
    /// Top-p mass for triple selection.
    pub p: f64,
    pub au_threshold: f64,
    pub au_top_k: usize,
    pub evidence_transform: EvidenceTransform,
    /// Triples passed as evidence when refining an uncertain answer.
    pub l: usize,
    pub beam_width: usize,
    pub max_fallback_rounds: usize,
    /// Resends of the same prompt when a reply cannot be parsed.
    pub parse_retries: usize,
    pub include_inverse: bool,
    /// BFS radius of the per-chain subgraph sent to entity scoring;
    /// defaults to the chain depth plus one.
    pub subgraph_radius: Option<usize>,
    /// Message-passing depth hint forwarded to the entity scorer.
    pub gnn_layers: Option<usize>,
    pub placement: Placement,
    pub dedup_prefixes: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            m: 15,
            n: 3,
            p: 0.9,
            au_threshold: DEFAULT_AU_THRESHOLD,
            au_top_k: 10,
            evidence_transform: EvidenceTransform::Softplus,
            l: 4,
            beam_width: 5,
            max_fallback_rounds: 2,
            parse_retries: 2,
            include_inverse: true,
            subgraph_radius: None,
            gnn_layers: None,
            placement: Placement::First,
            dedup_prefixes: true,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let counts = [
            ("m", self.m),
            ("n", self.n),
            ("au_top_k", self.au_top_k),
            ("l", self.l),
            ("beam_width", self.beam_width),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(ConfigError::Invalid(format!("{name} must be at least 1")));
        }
        if self.n > self.m {
            return Err(ConfigError::Invalid(format!("n ({}) must not exceed m ({})", self.n, self.m)));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(ConfigError::Invalid(format!("p must lie in (0, 1], got {}", self.p)));
        }
        if !self.au_threshold.is_finite() || self.au_threshold < 0.0 {
            return Err(ConfigError::Invalid(format!("au_threshold must be finite and non-negative, got {}", self.au_threshold)));
        }
        if self.subgraph_radius == Some(0) || self.gnn_layers == Some(0) {
            return Err(ConfigError::Invalid("subgraph_radius and gnn_layers must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub triples: PathBuf,
    #[serde(default)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LlmConfig {
    /// Layered script files; earlier files win.
    Scripted { scripts: Vec<PathBuf> },
    Http(HttpBackendConfig),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScorerConfig {
    #[default]
    Lexical,
    Http(HttpScorerConfig),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub normalization: Normalization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub engine: EngineConfig,
    pub graph: GraphConfig,
    pub llm: LlmConfig,
    #[serde(default)]
    pub scorer: ScorerConfig,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub decoding: Decoding,
    /// Template overrides keyed by template name.
    #[serde(default)]
    pub prompts: BTreeMap<TemplateId, PathBuf>,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut config: Config = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: base.to_path_buf(),
            message: e.to_string(),
        })?;
        config.resolve_paths(base);
        config.engine.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.graph.triples);
        if let Some(l) = self.graph.labels.as_mut() {
            fix(l);
        }
        if let LlmConfig::Scripted { scripts } = &mut self.llm {
            scripts.iter_mut().for_each(fix);
        }
        self.prompts.values_mut().for_each(fix);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [graph]
        triples = "kg.tsv"

        [llm]
        kind = "scripted"
        scripts = ["script.json", "/abs/overlay.json"]
    "#;

    #[test]
    fn defaults_and_path_resolution() {
        let c = Config::from_toml(MINIMAL, Path::new("/data/fx")).unwrap();
        let e = &c.engine;
        assert_eq!((e.m, e.n, e.l, e.beam_width, e.max_fallback_rounds), (15, 3, 4, 5, 2));
        assert_eq!((e.p, e.au_threshold, e.au_top_k), (0.9, 1.55, 10));
        assert_eq!(c.graph.triples, PathBuf::from("/data/fx/kg.tsv"));
        assert_eq!(
            c.llm,
            LlmConfig::Scripted {
                scripts: vec!["/data/fx/script.json".into(), "/abs/overlay.json".into()]
            }
        );
        assert_eq!(c.scorer, ScorerConfig::Lexical);
    }

    #[test]
    fn rejects_bad_engine_values() {
        for bad in ["n = 20", "p = 0.0", "p = 1.5", "beam_width = 0", "m = 0"] {
            let text = format!("[engine]\n{bad}\n{MINIMAL}");
            assert!(
                matches!(Config::from_toml(&text, Path::new(".")), Err(ConfigError::Invalid(_))),
                "{bad} accepted"
            );
        }
        let ok = format!("[engine]\np = 1.0\nn = 15\n{MINIMAL}");
        assert!(Config::from_toml(&ok, Path::new(".")).is_ok());
    }

    #[test]
    fn http_sections() {
        let text = r#"
            [graph]
            triples = "kg.tsv"
            [llm]
            kind = "http"
            url = "http://localhost:9/v1/chat/completions"
            model = "m"
            auth_env = "LLM_TOKEN"
            supports_logits = true
            [scorer]
            kind = "http"
            url = "http://localhost:8090"
            [prompts]
            final_answer = "prompts/final.txt"
        "#;
        let c = Config::from_toml(text, Path::new("/cfg")).unwrap();
        assert!(matches!(c.llm, LlmConfig::Http(ref h) if h.supports_logits && h.timeout_s == 60.0));
        assert!(matches!(c.scorer, ScorerConfig::Http(ref s) if s.url.ends_with("8090")));
        assert_eq!(c.prompts[&TemplateId::FinalAnswer], PathBuf::from("/cfg/prompts/final.txt"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("[engine]\nbeam = 3\n{MINIMAL}");
        assert!(matches!(Config::from_toml(&text, Path::new(".")), Err(ConfigError::Parse { .. })));
    }
}
