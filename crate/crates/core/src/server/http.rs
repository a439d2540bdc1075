//! HTTP/1.1 JSON API in front of the store, served by a small pool of
//! worker threads. All `/api/v1` routes require the shared bearer token;
//! `/healthz` does not.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tiny_http::{Header, Method, Request, Response, Server};

use crate::telemetry::{canonical_decode, canonical_encode, digest_hex, BlobRef, RunId, TelemetryLevel};

use super::store::{RecordFilter, RunStatus, Store, StoreError};

const WORKERS: usize = 4;
/// Requests larger than this are rejected outright.
const MAX_BODY_BYTES: usize = 256 << 20;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Bind address, e.g. `127.0.0.1:8787`; port 0 picks an ephemeral one.
    pub bind: String,
    pub data_dir: PathBuf,
    pub token: String,
}

#[derive(Debug, Deserialize)]
struct CreateRunRequest {
    name: String,
    config_digest: BlobRef,
    #[serde(default)]
    run_id: Option<RunId>,
}

#[derive(Debug, Deserialize)]
struct FinishRunRequest {
    status: RunStatus,
}

#[derive(Debug, Deserialize)]
struct EtlRequest {
    run_id: RunId,
    #[serde(default)]
    metrics: Option<Vec<String>>,
}

#[derive(Debug, Serialize)]
struct BlobPutResponse {
    digest: String,
    created: bool,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

/// A running observability service.
pub struct ObsServer {
    addr: SocketAddr,
    store: Arc<Store>,
    server: Arc<Server>,
    stop_flag: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl ObsServer {
    pub fn start(config: ServerConfig) -> Result<Self, StoreError> {
        let store = Arc::new(Store::open(&config.data_dir)?);
        Self::start_with_store(config, store)
    }

    pub fn start_with_store(config: ServerConfig, store: Arc<Store>) -> Result<Self, StoreError> {
        let server = Server::http(&config.bind).map_err(|e| {
            StoreError::Io(std::io::Error::other(format!("bind {}: {e}", config.bind)))
        })?;
        let server = Arc::new(server);
        let addr = server
            .server_addr()
            .to_ip()
            .expect("tcp listener has an ip address");
        let stop_flag = Arc::new(AtomicBool::new(false));
        let token = Arc::new(config.token);

        let mut workers = Vec::with_capacity(WORKERS);
        for _ in 0..WORKERS {
            let server = server.clone();
            let store = store.clone();
            let stop = stop_flag.clone();
            let token = token.clone();
            workers.push(std::thread::spawn(move || loop {
                match server.recv_timeout(Duration::from_millis(100)) {
                    Ok(Some(request)) => handle(request, &store, &token),
                    Ok(None) => {
                        if stop.load(Ordering::Relaxed) {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }));
        }

        log::info!("observability server listening on {addr}");
        Ok(ObsServer {
            addr,
            store,
            server,
            stop_flag,
            workers,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    /// Graceful shutdown; storage stays reusable by a later instance.
    pub fn stop(mut self) {
        self.stop_flag.store(true, Ordering::Relaxed);
        self.server.unblock();
        for worker in self.workers.drain(..) {
            let _ = worker.join();
        }
    }
}

impl Drop for ObsServer {
    fn drop(&mut self) {
        self.stop_flag.store(true, Ordering::Relaxed);
        self.server.unblock();
        for worker in self.workers.drain(..) {
            let _ = worker.join();
        }
    }
}

fn handle(mut request: Request, store: &Store, token: &str) {
    let url = request.url().to_owned();
    let (path, query) = match url.split_once('?') {
        Some((p, q)) => (p.to_owned(), q.to_owned()),
        None => (url, String::new()),
    };

    if path == "/healthz" && *request.method() == Method::Get {
        Reply {
            status: 200,
            content_type: "text/plain",
            body: b"ok".to_vec(),
        }
        .send(request);
        return;
    }

    if !authorized(&request, token) {
        Reply::error(401, "missing or invalid bearer token".into()).send(request);
        return;
    }

    let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
    let method = request.method().clone();
    let outcome = match (&method, segments.as_slice()) {
        (Method::Post, ["api", "v1", "runs"]) => post_run(&mut request, store),
        (Method::Get, ["api", "v1", "runs"]) => {
            json_ok(200, &store.list_runs())
        }
        (Method::Get, ["api", "v1", "runs", id]) => {
            parse_run(id).and_then(|run_id| json_ok(200, &store.manifest(run_id)?))
        }
        (Method::Post, ["api", "v1", "runs", id, "records"]) => post_records(&mut request, store, id),
        (Method::Get, ["api", "v1", "runs", id, "records"]) => get_records(store, id, &query),
        (Method::Post, ["api", "v1", "runs", id, "finish"]) => post_finish(&mut request, store, id),
        (Method::Put, ["api", "v1", "blobs", digest]) => put_blob(&mut request, store, digest),
        (Method::Get, ["api", "v1", "blobs", digest]) => get_blob(store, digest),
        (Method::Head, ["api", "v1", "blobs", digest]) => head_blob(store, digest),
        (Method::Post, ["api", "v1", "etl", "run"]) => post_etl(&mut request, store),
        _ => Err(Reply::error(404, format!("no route for {method} {path}"))),
    };

    match outcome {
        Ok(reply) | Err(reply) => reply.send(request),
    }
}

/// A fully-formed response body plus status.
struct Reply {
    status: u16,
    content_type: &'static str,
    body: Vec<u8>,
}

impl Reply {
    fn json<T: Serialize>(status: u16, value: &T) -> Reply {
        Reply {
            status,
            content_type: "application/json",
            body: serde_json::to_vec(value).expect("serializable response"),
        }
    }

    fn error(status: u16, message: String) -> Reply {
        Reply::json(status, &ErrorBody { error: message })
    }

    fn send(self, request: Request) {
        let response = Response::from_data(self.body)
            .with_status_code(self.status)
            .with_header(
                Header::from_bytes(&b"Content-Type"[..], self.content_type.as_bytes())
                    .expect("static header"),
            );
        let _ = request.respond(response);
    }
}

type Route = Result<Reply, Reply>;

fn json_ok<T: Serialize>(status: u16, value: &T) -> Route {
    Ok(Reply::json(status, value))
}

fn store_error(err: StoreError) -> Reply {
    let status = match &err {
        StoreError::UnknownRun(_) | StoreError::UnknownBlob(_) => 404,
        StoreError::RunNotActive(_)
        | StoreError::NameConflict { .. }
        | StoreError::InvalidTransition => 409,
        StoreError::MissingConfigBlob(_) | StoreError::BadDigest(_) => 400,
        StoreError::CorruptBlob { .. } | StoreError::Io(_) | StoreError::Manifest(_) => 500,
    };
    Reply::error(status, err.to_string())
}

impl From<StoreError> for Reply {
    fn from(err: StoreError) -> Reply {
        store_error(err)
    }
}

fn authorized(request: &Request, token: &str) -> bool {
    request
        .headers()
        .iter()
        .find(|h| h.field.as_str().as_str().eq_ignore_ascii_case("authorization"))
        .map(|h| h.value.as_str() == format!("Bearer {token}"))
        .unwrap_or(false)
}

fn read_body(request: &mut Request) -> Result<Vec<u8>, Reply> {
    if let Some(len) = request.body_length() {
        if len > MAX_BODY_BYTES {
            return Err(Reply::error(413, format!("body of {len} bytes is too large")));
        }
    }
    let mut body = Vec::new();
    request
        .as_reader()
        .read_to_end(&mut body)
        .map_err(|e| Reply::error(400, format!("failed to read body: {e}")))?;
    Ok(body)
}

fn parse_run(id: &str) -> Result<RunId, Reply> {
    RunId::parse(id).ok_or_else(|| Reply::error(400, format!("malformed run id {id:?}")))
}

fn post_run(request: &mut Request, store: &Store) -> Route {
    let body = read_body(request)?;
    let req: CreateRunRequest = serde_json::from_slice(&body)
        .map_err(|e| Reply::error(400, format!("malformed create-run request: {e}")))?;
    let (manifest, created) = store.create_run(&req.name, req.config_digest, req.run_id)?;
    json_ok(if created { 201 } else { 200 }, &manifest)
}

fn post_records(request: &mut Request, store: &Store, id: &str) -> Route {
    let run_id = parse_run(id)?;
    let body = read_body(request)?;
    let batch: Vec<Result<crate::telemetry::TelemetryRecord, String>> = body
        .split(|&b| b == b'\n')
        .filter(|line| !line.is_empty())
        .map(|line| canonical_decode(line).map_err(|e| e.to_string()))
        .collect();
    let report = store.ingest(run_id, batch)?;
    json_ok(200, &report)
}

fn get_records(store: &Store, id: &str, query: &str) -> Route {
    let run_id = parse_run(id)?;
    let filter = parse_filter(query)?;
    let records = store.query(run_id, &filter)?;
    let mut body = Vec::new();
    for record in &records {
        body.extend_from_slice(&canonical_encode(record));
        body.push(b'\n');
    }
    Ok(Reply {
        status: 200,
        content_type: "application/x-ndjson",
        body,
    })
}

fn parse_filter(query: &str) -> Result<RecordFilter, Reply> {
    let mut filter = RecordFilter::default();
    for pair in query.split('&').filter(|p| !p.is_empty()) {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Reply::error(400, format!("malformed query pair {pair:?}")))?;
        if value.is_empty() {
            continue;
        }
        let bad = |what: &str| Reply::error(400, format!("bad {what} value {value:?}"));
        match key {
            "level" => {
                filter.level = Some(TelemetryLevel::parse(value).ok_or_else(|| bad("level"))?)
            }
            "kind" => filter.kind = Some(value.to_owned()),
            "iteration" => filter.iteration = Some(value.parse().map_err(|_| bad("iteration"))?),
            "population" => {
                filter.population = Some(value.parse().map_err(|_| bad("population"))?)
            }
            "since" => {
                filter.since =
                    Some(crate::telemetry::parse_canonical_ts(value).ok_or_else(|| bad("since"))?)
            }
            "until" => {
                filter.until =
                    Some(crate::telemetry::parse_canonical_ts(value).ok_or_else(|| bad("until"))?)
            }
            other => return Err(Reply::error(400, format!("unknown filter field {other:?}"))),
        }
    }
    Ok(filter)
}

fn post_finish(request: &mut Request, store: &Store, id: &str) -> Route {
    let run_id = parse_run(id)?;
    let body = read_body(request)?;
    let req: FinishRunRequest = serde_json::from_slice(&body)
        .map_err(|e| Reply::error(400, format!("malformed finish request: {e}")))?;
    let manifest = store.finish_run(run_id, req.status)?;
    json_ok(200, &manifest)
}

fn put_blob(request: &mut Request, store: &Store, digest: &str) -> Route {
    let body = read_body(request)?;
    let actual = digest_hex(&body);
    if actual != digest {
        return Err(Reply::error(
            400,
            format!("body hashes to {actual}, not the addressed {digest}"),
        ));
    }
    let (digest, created) = store.put_blob(&body)?;
    json_ok(
        if created { 201 } else { 200 },
        &BlobPutResponse { digest, created },
    )
}

fn get_blob(store: &Store, digest: &str) -> Route {
    let bytes = store.get_blob(digest)?;
    Ok(Reply {
        status: 200,
        content_type: "application/octet-stream",
        body: bytes,
    })
}

fn head_blob(store: &Store, digest: &str) -> Route {
    if store.has_blob(digest)? {
        Ok(Reply {
            status: 200,
            content_type: "application/octet-stream",
            body: Vec::new(),
        })
    } else {
        Err(Reply::error(404, format!("unknown blob {digest}")))
    }
}

fn post_etl(request: &mut Request, store: &Store) -> Route {
    let body = read_body(request)?;
    let req: EtlRequest = serde_json::from_slice(&body)
        .map_err(|e| Reply::error(400, format!("malformed etl request: {e}")))?;
    let out_dir = store
        .data_dir()
        .join("etl")
        .join(req.run_id.to_string());
    let source = crate::etl::StoreSource::new(store, req.run_id);
    let result = crate::etl::run_pipeline(&source, req.metrics.as_deref(), &out_dir)
        .map_err(|e| Reply::error(409, e.to_string()))?;
    json_ok(200, &result)
}
