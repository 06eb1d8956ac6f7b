//! Blocking JSON-over-HTTP helper shared by the remote LLM and scorer clients.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum HttpFailure {
    /// Could not connect or the connection dropped.
    Unreachable(String),
    Timeout,
    Status { code: u16, body: String },
    Decode(String),
}

impl HttpFailure {
    /// 429, 5xx, connection errors and timeouts are worth retrying.
    pub(crate) fn retryable(&self) -> bool {
        match self {
            Self::Unreachable(_) | Self::Timeout => true,
            Self::Status { code, .. } => *code == 429 || *code >= 500,
            Self::Decode(_) => false,
        }
    }
}

impl std::fmt::Display for HttpFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Unreachable(m) => write!(f, "unreachable: {m}"),
            Self::Timeout => f.write_str("timed out"),
            Self::Status { code, body } => write!(f, "HTTP {code}: {body}"),
            Self::Decode(m) => write!(f, "bad response body: {m}"),
        }
    }
}

#[derive(Clone)]
pub(crate) struct JsonClient {
    agent: ureq::Agent,
    base: String,
    auth: Option<String>,
}

impl JsonClient {
    pub(crate) fn new(base: &str, timeout: Duration, auth: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            base: base.trim_end_matches('/').to_string(),
            auth,
        }
    }

    fn url(&self, path: &str) -> String {
        if path.is_empty() {
            self.base.clone()
        } else {
            format!("{}/{}", self.base, path.trim_start_matches('/'))
        }
    }

    fn finish<T: DeserializeOwned>(
        result: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<T, HttpFailure> {
        let mut response = result.map_err(map_error)?;
        let code = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(map_error)?;
        if !(200..300).contains(&code) {
            return Err(HttpFailure::Status { code, body });
        }
        serde_json::from_str(&body).map_err(|e| HttpFailure::Decode(e.to_string()))
    }

    pub(crate) fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, HttpFailure> {
        let payload = serde_json::to_string(body).map_err(|e| HttpFailure::Decode(e.to_string()))?;
        let mut req = self
            .agent
            .post(&self.url(path))
            .header("Content-Type", "application/json");
        if let Some(token) = &self.auth {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        Self::finish(req.send(payload.as_str()))
    }

    pub(crate) fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, HttpFailure> {
        let mut req = self.agent.get(&self.url(path));
        if let Some(token) = &self.auth {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        Self::finish(req.call())
    }
}

fn map_error(err: ureq::Error) -> HttpFailure {
    match err {
        ureq::Error::Timeout(_) => HttpFailure::Timeout,
        ureq::Error::StatusCode(code) => HttpFailure::Status {
            code,
            body: String::new(),
        },
        ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => HttpFailure::Timeout,
        other => HttpFailure::Unreachable(other.to_string()),
    }
}
