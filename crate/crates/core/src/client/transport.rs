//! Wire access to the observability service. The trait exists so tests
//! can inject transport faults (lost acknowledgments, dead servers).

use std::time::Duration;

use serde::Serialize;

use crate::server::{IngestReport, RecordFilter, RunManifest, RunStatus};
use crate::telemetry::{canonical_decode, BlobRef, RunId, TelemetryRecord};

#[derive(Debug, Clone, thiserror::Error)]
pub enum TransportError {
    #[error("server unreachable: {0}")]
    Unreachable(String),
    #[error("server returned {code}: {message}")]
    Status { code: u16, message: String },
    #[error("undecodable server response: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct CreateRunWire {
    pub name: String,
    pub config_digest: BlobRef,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_id: Option<RunId>,
}

pub trait Transport: Send + Sync {
    fn healthz(&self) -> Result<(), TransportError>;
    fn create_run(&self, request: &CreateRunWire) -> Result<RunManifest, TransportError>;
    fn send_records(&self, run_id: RunId, ndjson: &[u8]) -> Result<IngestReport, TransportError>;
    fn put_blob(&self, digest: &str, bytes: &[u8]) -> Result<bool, TransportError>;
    fn has_blob(&self, digest: &str) -> Result<bool, TransportError>;
    fn get_blob(&self, digest: &str) -> Result<Vec<u8>, TransportError>;
    fn finish_run(&self, run_id: RunId, status: RunStatus) -> Result<RunManifest, TransportError>;
    fn manifest(&self, run_id: RunId) -> Result<RunManifest, TransportError>;
    fn list_runs(&self) -> Result<Vec<RunManifest>, TransportError>;
    fn query_records(
        &self,
        run_id: RunId,
        filter: &RecordFilter,
    ) -> Result<Vec<TelemetryRecord>, TransportError>;
}

/// HTTP client speaking the service's JSON API.
pub struct HttpTransport {
    agent: ureq::Agent,
    base: String,
    token: String,
}

impl HttpTransport {
    pub fn new(endpoint: &str, token: &str) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(10)))
            .http_status_as_error(false)
            .build();
        HttpTransport {
            agent: ureq::Agent::new_with_config(config),
            base: endpoint.trim_end_matches('/').to_owned(),
            token: token.to_owned(),
        }
    }

    fn bearer(&self) -> String {
        format!("Bearer {}", self.token)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn check<T>(
        response: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
        decode: impl FnOnce(Vec<u8>) -> Result<T, TransportError>,
    ) -> Result<T, TransportError> {
        let mut response = response.map_err(|e| TransportError::Unreachable(e.to_string()))?;
        let code = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_vec()
            .map_err(|e| TransportError::Decode(e.to_string()))?;
        if !(200..300).contains(&code) {
            let message = serde_json::from_slice::<serde_json::Value>(&body)
                .ok()
                .and_then(|v| v.get("error").and_then(|e| e.as_str()).map(str::to_owned))
                .unwrap_or_else(|| String::from_utf8_lossy(&body).into_owned());
            return Err(TransportError::Status { code, message });
        }
        decode(body)
    }

    fn json<T: serde::de::DeserializeOwned>(body: Vec<u8>) -> Result<T, TransportError> {
        serde_json::from_slice(&body).map_err(|e| TransportError::Decode(e.to_string()))
    }
}

impl Transport for HttpTransport {
    fn healthz(&self) -> Result<(), TransportError> {
        Self::check(self.agent.get(self.url("/healthz")).call(), |_| Ok(()))
    }

    fn create_run(&self, request: &CreateRunWire) -> Result<RunManifest, TransportError> {
        let body = serde_json::to_vec(request).expect("serializable request");
        Self::check(
            self.agent
                .post(self.url("/api/v1/runs"))
                .header("Authorization", self.bearer())
                .send(&body[..]),
            Self::json,
        )
    }

    fn send_records(&self, run_id: RunId, ndjson: &[u8]) -> Result<IngestReport, TransportError> {
        Self::check(
            self.agent
                .post(self.url(&format!("/api/v1/runs/{run_id}/records")))
                .header("Authorization", self.bearer())
                .header("Content-Type", "application/x-ndjson")
                .send(ndjson),
            Self::json,
        )
    }

    fn put_blob(&self, digest: &str, bytes: &[u8]) -> Result<bool, TransportError> {
        Self::check(
            self.agent
                .put(self.url(&format!("/api/v1/blobs/{digest}")))
                .header("Authorization", self.bearer())
                .header("Content-Type", "application/octet-stream")
                .send(bytes),
            |body| {
                #[derive(serde::Deserialize)]
                struct PutResponse {
                    created: bool,
                }
                Self::json::<PutResponse>(body).map(|r| r.created)
            },
        )
    }

    fn has_blob(&self, digest: &str) -> Result<bool, TransportError> {
        let response = self
            .agent
            .head(self.url(&format!("/api/v1/blobs/{digest}")))
            .header("Authorization", self.bearer())
            .call()
            .map_err(|e| TransportError::Unreachable(e.to_string()))?;
        match response.status().as_u16() {
            200 => Ok(true),
            404 => Ok(false),
            code => Err(TransportError::Status {
                code,
                message: "unexpected blob head status".into(),
            }),
        }
    }

    fn get_blob(&self, digest: &str) -> Result<Vec<u8>, TransportError> {
        Self::check(
            self.agent
                .get(self.url(&format!("/api/v1/blobs/{digest}")))
                .header("Authorization", self.bearer())
                .call(),
            Ok,
        )
    }

    fn finish_run(&self, run_id: RunId, status: RunStatus) -> Result<RunManifest, TransportError> {
        let body = serde_json::to_vec(&serde_json::json!({ "status": status }))
            .expect("serializable status");
        Self::check(
            self.agent
                .post(self.url(&format!("/api/v1/runs/{run_id}/finish")))
                .header("Authorization", self.bearer())
                .send(&body[..]),
            Self::json,
        )
    }

    fn manifest(&self, run_id: RunId) -> Result<RunManifest, TransportError> {
        Self::check(
            self.agent
                .get(self.url(&format!("/api/v1/runs/{run_id}")))
                .header("Authorization", self.bearer())
                .call(),
            Self::json,
        )
    }

    fn list_runs(&self) -> Result<Vec<RunManifest>, TransportError> {
        Self::check(
            self.agent
                .get(self.url("/api/v1/runs"))
                .header("Authorization", self.bearer())
                .call(),
            Self::json,
        )
    }

    fn query_records(
        &self,
        run_id: RunId,
        filter: &RecordFilter,
    ) -> Result<Vec<TelemetryRecord>, TransportError> {
        let mut query = String::new();
        let mut push = |key: &str, value: String| {
            query.push(if query.is_empty() { '?' } else { '&' });
            query.push_str(key);
            query.push('=');
            query.push_str(&value);
        };
        if let Some(level) = filter.level {
            push("level", level.to_string());
        }
        if let Some(kind) = &filter.kind {
            push("kind", kind.clone());
        }
        if let Some(iteration) = filter.iteration {
            push("iteration", iteration.to_string());
        }
        if let Some(population) = filter.population {
            push("population", population.to_string());
        }
        if let Some(since) = filter.since {
            push("since", crate::telemetry::canonical_ts(&since));
        }
        if let Some(until) = filter.until {
            push("until", crate::telemetry::canonical_ts(&until));
        }
        Self::check(
            self.agent
                .get(self.url(&format!("/api/v1/runs/{run_id}/records{query}")))
                .header("Authorization", self.bearer())
                .call(),
            |body| {
                body.split(|&b| b == b'\n')
                    .filter(|line| !line.is_empty())
                    .map(|line| {
                        canonical_decode(line).map_err(|e| TransportError::Decode(e.to_string()))
                    })
                    .collect()
            },
        )
    }
}

impl HttpTransport {
    /// Triggers the server-side pipeline.
    pub fn run_etl(
        &self,
        run_id: RunId,
        metrics: Option<&[String]>,
    ) -> Result<crate::etl::EtlManifest, TransportError> {
        let body = serde_json::to_vec(&serde_json::json!({
            "run_id": run_id,
            "metrics": metrics,
        }))
        .expect("serializable request");
        Self::check(
            self.agent
                .post(self.url("/api/v1/etl/run"))
                .header("Authorization", self.bearer())
                .send(&body[..]),
            Self::json,
        )
    }
}
