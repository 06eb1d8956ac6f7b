//! Client for a remote scoring service speaking JSON over HTTP.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Capabilities, EntityScoreRequest, Result, ScorerBackend, ScoringError};
use crate::transport::{HttpFailure, JsonClient};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpScorerConfig {
    /// Base URL, e.g. `http://127.0.0.1:8090`.
    pub url: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

fn default_timeout() -> f64 {
    30.0
}

#[derive(Deserialize)]
struct Health {
    #[serde(default)]
    status: String,
    #[serde(default)]
    capabilities: Vec<String>,
}

#[derive(Deserialize)]
struct Scores {
    scores: Vec<f64>,
}

#[derive(Deserialize)]
struct Vectors {
    vectors: Vec<Vec<f64>>,
}

pub struct HttpScorer {
    endpoint: String,
    client: JsonClient,
    capabilities: Capabilities,
    /// Cleared after a 501 from `/entity_scores`.
    entity_live: AtomicBool,
}

impl HttpScorer {
    /// Probes `GET /healthz` and checks the mandatory capabilities.
    pub fn connect(config: &HttpScorerConfig) -> Result<Self> {
        let client = JsonClient::new(&config.url, Duration::from_secs_f64(config.timeout_s), None);
        let endpoint = config.url.clone();
        let health: Health = client.get("healthz").map_err(|f| failure(&endpoint, f))?;
        if !health.status.is_empty() && health.status != "ok" {
            return Err(ScoringError::Protocol(format!("health status `{}`", health.status)));
        }
        let capabilities = Capabilities::from_names(&health.capabilities);
        if !capabilities.relation_rerank {
            return Err(ScoringError::MissingCapability("relation_rerank"));
        }
        if !capabilities.triple_embed {
            return Err(ScoringError::MissingCapability("triple_embed"));
        }
        Ok(Self {
            endpoint,
            client,
            capabilities,
            entity_live: AtomicBool::new(capabilities.entity_score),
        })
    }
}

fn failure(endpoint: &str, f: HttpFailure) -> ScoringError {
    match f {
        HttpFailure::Unreachable(message) => ScoringError::Unreachable {
            endpoint: endpoint.to_string(),
            message,
        },
        HttpFailure::Timeout => ScoringError::Unreachable {
            endpoint: endpoint.to_string(),
            message: "timed out".into(),
        },
        other => ScoringError::Protocol(other.to_string()),
    }
}

impl ScorerBackend for HttpScorer {
    fn name(&self) -> &str {
        "http"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            entity_score: self.entity_live.load(Ordering::Relaxed),
            ..self.capabilities
        }
    }

    fn rerank(&self, query: &str, documents: &[String]) -> Result<Vec<f64>> {
        let r: Scores = self
            .client
            .post("rerank", &json!({"query": query, "documents": documents}))
            .map_err(|f| failure(&self.endpoint, f))?;
        Ok(r.scores)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let r: Vectors = self
            .client
            .post("embed", &json!({"texts": texts}))
            .map_err(|f| failure(&self.endpoint, f))?;
        Ok(r.vectors)
    }

    fn entity_scores(&self, request: &EntityScoreRequest<'_>) -> Result<Option<Vec<f64>>> {
        if !self.entity_live.load(Ordering::Relaxed) {
            return Ok(None);
        }
        let mut body = json!({
            "query": request.query,
            "subgraph": {"triples": request.subgraph},
            "source": request.source,
            "tails": request.tails,
        });
        if let Some(layers) = request.layers {
            body["layers"] = json!(layers);
        }
        match self.client.post::<_, Scores>("entity_scores", &body) {
            Ok(r) => Ok(Some(r.scores)),
            Err(HttpFailure::Status { code: 501, .. }) => {
                tracing::warn!(endpoint = %self.endpoint, "entity scoring not configured; using uniform structural scores");
                self.entity_live.store(false, Ordering::Relaxed);
                Ok(None)
            }
            Err(f) => Err(failure(&self.endpoint, f)),
        }
    }
}
