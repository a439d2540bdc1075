//! Client instrumentation library for the computing platform: run/task
//! lifecycle capture (L3), job-metric rows (L2) and domain artifact upload
//! (L4), with a background flusher and a disk spool so telemetry never
//! perturbs or outlives-blocks the workload.
//!
//! Every record is written to the spool before any network delivery is
//! attempted; the replay cursor advances only on server acknowledgment,
//! and the server deduplicates by record id, so delivery is exactly-once
//! end to end under crashes, dead servers and lost acknowledgments.

mod spool;
mod transport;

pub use spool::Spool;
pub use transport::{CreateRunWire, HttpTransport, Transport, TransportError};

use std::collections::HashMap;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicI64, AtomicU64, Ordering};
use std::sync::mpsc::{Receiver, SyncSender};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::server::RunStatus;
use crate::telemetry::{
    canonical_encode, digest, is_artifact_name, kind, media, now_micros, pack_bitstrings,
    pack_vector, BitstringSet, BlobRef, Payload, PayloadValue, RunId, TelemetryLevel,
    TelemetryRecord,
};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("rejected locally: {0}")]
    Validation(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("intent file is unreadable: {0}")]
    Intent(String),
    #[error("telemetry worker is gone")]
    WorkerGone,
}

/// Client-side configuration for one workload process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub endpoint: String,
    pub token: String,
    /// Base directory; each run spools under `<spool_dir>/<run_id>`.
    pub spool_dir: PathBuf,
    /// Bounded in-memory queue between workload threads and the flusher.
    pub queue_bound: usize,
    /// Records per delivery batch.
    pub batch_max: usize,
    /// Flusher wake interval in milliseconds.
    pub flush_interval_ms: u64,
}

impl ClientConfig {
    pub fn new(endpoint: impl Into<String>, token: impl Into<String>, spool_dir: impl Into<PathBuf>) -> Self {
        ClientConfig {
            endpoint: endpoint.into(),
            token: token.into(),
            spool_dir: spool_dir.into(),
            queue_bound: 1024,
            batch_max: 256,
            flush_interval_ms: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunIntent {
    run_id: RunId,
    name: String,
    config_digest: BlobRef,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FinishIntent {
    status: RunStatus,
}

/// Outcome of one delivery pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeliveryCounts {
    /// Record lines acknowledged during this pass.
    pub delivered: u64,
    /// Record lines still spooled after this pass.
    pub remaining: u64,
    /// Whether a pending finish intent has been applied.
    pub finished: bool,
    pub last_error: Option<String>,
}

enum WorkerMsg {
    Record(Box<TelemetryRecord>),
    Flush(SyncSender<DeliveryCounts>),
    Shutdown,
}

struct Shared {
    emitted: AtomicU64,
    attempts: Mutex<HashMap<String, u32>>,
    last_ts_micros: AtomicI64,
}

struct Inner {
    shared: Arc<Shared>,
    sender: Mutex<Option<SyncSender<WorkerMsg>>>,
    worker: Mutex<Option<std::thread::JoinHandle<()>>>,
    deliverer: Arc<Deliverer>,
    spool: Arc<Spool>,
}

impl Drop for Inner {
    fn drop(&mut self) {
        if let Some(sender) = self.sender.lock().expect("sender lock").take() {
            let _ = sender.try_send(WorkerMsg::Shutdown);
            drop(sender);
        }
        if let Some(worker) = self.worker.lock().expect("worker lock").take() {
            let _ = worker.join();
        }
    }
}

/// Handle to one instrumented run. Cheap to clone; safe to share across
/// workload threads. The disabled variant swallows all telemetry while
/// leaving workload behavior untouched.
#[derive(Clone)]
pub struct RunHandle {
    inner: Option<Arc<Inner>>,
    run_id: RunId,
}

impl RunHandle {
    /// Starts instrumentation for a new run. The run registration, the
    /// frozen configuration blob and all records flow through the spool,
    /// so an unreachable server never fails this call.
    pub fn start(
        config: &ClientConfig,
        name: &str,
        run_config_bytes: &[u8],
    ) -> Result<RunHandle, ClientError> {
        let transport: Arc<dyn Transport> =
            Arc::new(HttpTransport::new(&config.endpoint, &config.token));
        Self::start_with_transport(config, name, run_config_bytes, transport)
    }

    /// As `start`, with an injected transport (used by fault tests).
    pub fn start_with_transport(
        config: &ClientConfig,
        name: &str,
        run_config_bytes: &[u8],
        transport: Arc<dyn Transport>,
    ) -> Result<RunHandle, ClientError> {
        let run_id = RunId::generate();
        let spool = Arc::new(Spool::open(config.spool_dir.join(run_id.to_string()))?);

        let config_ref = digest(media::TOML, run_config_bytes);
        std::fs::write(spool.blob_path(&config_ref.digest), run_config_bytes)?;
        let intent = RunIntent {
            run_id,
            name: name.to_owned(),
            config_digest: config_ref,
        };
        std::fs::write(
            spool.dir().join(spool::RUN_INTENT_FILE),
            serde_json::to_vec(&intent).expect("serializable intent"),
        )?;

        let shared = Arc::new(Shared {
            emitted: AtomicU64::new(0),
            attempts: Mutex::new(HashMap::new()),
            last_ts_micros: AtomicI64::new(0),
        });
        let deliverer = Arc::new(Deliverer {
            spool: spool.clone(),
            transport,
            run_created: AtomicBool::new(false),
        });

        let (sender, receiver) = std::sync::mpsc::sync_channel(config.queue_bound.max(1));
        let worker = Worker {
            receiver,
            spool: spool.clone(),
            deliverer: deliverer.clone(),
            batch_max: config.batch_max.max(1),
            flush_interval: Duration::from_millis(config.flush_interval_ms.max(1)),
        };
        let thread = std::thread::Builder::new()
            .name("qcobs-flusher".into())
            .spawn(move || worker.run())
            .map_err(ClientError::Io)?;

        Ok(RunHandle {
            inner: Some(Arc::new(Inner {
                shared,
                sender: Mutex::new(Some(sender)),
                worker: Mutex::new(Some(thread)),
                deliverer,
                spool,
            })),
            run_id,
        })
    }

    /// A no-op handle: telemetry disabled, workload untouched.
    pub fn disabled() -> RunHandle {
        RunHandle {
            inner: None,
            run_id: RunId::generate(),
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.inner.is_some()
    }

    pub fn run_id(&self) -> RunId {
        self.run_id
    }

    /// Records handed to the flusher so far.
    pub fn emitted_count(&self) -> u64 {
        self.inner
            .as_ref()
            .map(|i| i.shared.emitted.load(Ordering::SeqCst))
            .unwrap_or(0)
    }

    pub fn spool_dir(&self) -> Option<PathBuf> {
        self.inner.as_ref().map(|i| i.spool.dir().to_owned())
    }

    /// Monotone per-handle timestamp: never decreases even if the wall
    /// clock steps back.
    fn next_timestamp(&self) -> chrono::DateTime<chrono::Utc> {
        let now = now_micros().timestamp_micros();
        match &self.inner {
            None => chrono::DateTime::from_timestamp_micros(now).expect("valid instant"),
            Some(inner) => {
                let clamped = inner
                    .shared
                    .last_ts_micros
                    .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |last| {
                        Some(last.max(now))
                    })
                    .map(|last| last.max(now))
                    .unwrap_or(now);
                chrono::DateTime::from_timestamp_micros(clamped).expect("valid instant")
            }
        }
    }

    /// Queues a fully-formed record. Never fails the caller: queue or
    /// worker trouble is logged and dropped.
    pub fn emit_record(&self, mut record: TelemetryRecord) {
        let Some(inner) = &self.inner else {
            return;
        };
        record.run_id = self.run_id;
        record.timestamp = self.next_timestamp();
        if let Err(err) = record.validate() {
            log::warn!("telemetry record rejected locally: {err}");
            return;
        }
        let sender = inner.sender.lock().expect("sender lock").clone();
        match sender {
            None => log::warn!("telemetry worker already shut down; record dropped"),
            Some(sender) => {
                inner.shared.emitted.fetch_add(1, Ordering::SeqCst);
                if sender.send(WorkerMsg::Record(Box::new(record))).is_err() {
                    log::warn!("telemetry worker gone; record dropped");
                    inner.shared.emitted.fetch_sub(1, Ordering::SeqCst);
                }
            }
        }
    }

    /// Opens a task span; attempts are numbered per task name.
    pub fn begin_task(&self, task_name: &str) -> TaskSpan {
        let attempt = match &self.inner {
            None => 0,
            Some(inner) => {
                let mut attempts = inner.shared.attempts.lock().expect("attempts lock");
                let slot = attempts.entry(task_name.to_owned()).or_insert(0);
                let attempt = *slot;
                *slot += 1;
                attempt
            }
        };
        TaskSpan {
            handle: self.clone(),
            task_name: task_name.to_owned(),
            attempt,
            started_wall: now_micros(),
            started_mono: Instant::now(),
            finished: false,
        }
    }

    /// Runs `body` inside a task span. The body executes exactly once;
    /// the span is emitted whether it returns or panics, and panics are
    /// re-raised unchanged.
    pub fn record_task<T>(&self, task_name: &str, body: impl FnOnce() -> T) -> T {
        let mut span = self.begin_task(task_name);
        match catch_unwind(AssertUnwindSafe(body)) {
            Ok(value) => {
                span.finish_inner(true);
                value
            }
            Err(panic) => {
                span.finish_inner(false);
                resume_unwind(panic)
            }
        }
    }

    /// As `record_task` for fallible bodies: an `Err` marks the span
    /// failed and propagates unchanged.
    pub fn try_record_task<T, E>(
        &self,
        task_name: &str,
        body: impl FnOnce() -> Result<T, E>,
    ) -> Result<T, E> {
        let mut span = self.begin_task(task_name);
        match catch_unwind(AssertUnwindSafe(body)) {
            Ok(result) => {
                span.finish_inner(result.is_ok());
                result
            }
            Err(panic) => {
                span.finish_inner(false);
                resume_unwind(panic)
            }
        }
    }

    /// Emits one L2 job-table row after checking the kind's required
    /// keys. Rejection is local: an error return, a log line, no record.
    pub fn log_job_row(
        &self,
        row_kind: &str,
        row: Payload,
        iteration: Option<u32>,
        population: Option<u32>,
    ) -> Result<(), ClientError> {
        let required = crate::sched::required_job_keys(row_kind).ok_or_else(|| {
            ClientError::Validation(format!("unknown job table kind {row_kind:?}"))
        })?;
        for key in required {
            if !row.contains_key(*key) {
                let message = format!("{row_kind} row is missing required key {key:?}");
                log::warn!("{message}");
                return Err(ClientError::Validation(message));
            }
        }
        let mut record = TelemetryRecord::new(
            self.run_id,
            "job_table",
            TelemetryLevel::L2,
            row_kind,
            now_micros(),
        );
        record.payload = row;
        record.iteration = iteration;
        record.population = population;
        self.emit_record(record);
        Ok(())
    }

    /// Uploads a domain artifact blob (or spools it when the server is
    /// unreachable) and emits the L4 record linking it to the keying.
    pub fn put_artifact(
        &self,
        name: &str,
        iteration: u32,
        population: Option<u32>,
        payload: ArtifactPayload<'_>,
    ) -> Result<BlobRef, ClientError> {
        if !is_artifact_name(name) {
            let message = format!("unknown artifact name {name:?}");
            log::warn!("{message}");
            return Err(ClientError::Validation(message));
        }
        let (bytes, media_type) = match payload {
            ArtifactPayload::Bitstrings(set) => (pack_bitstrings(set), media::BITSET),
            ArtifactPayload::Vector(values) => (pack_vector(values), media::VECTOR),
        };
        let blob_ref = digest(media_type, &bytes);

        if let Some(inner) = &self.inner {
            // Prefer a direct upload; fall back to the spool so replay
            // can deliver it later.
            let uploaded = inner
                .deliverer
                .transport
                .put_blob(&blob_ref.digest, &bytes)
                .is_ok();
            if !uploaded {
                std::fs::write(inner.spool.blob_path(&blob_ref.digest), &bytes)?;
            }
        }

        let mut record = TelemetryRecord::new(
            self.run_id,
            "artifact",
            TelemetryLevel::L4,
            kind::SQD_ARTIFACT,
            now_micros(),
        )
        .with_iteration(iteration)
        .with_payload("artifact", name)
        .with_blob(blob_ref.clone());
        record.population = population;
        self.emit_record(record);
        Ok(blob_ref)
    }

    /// Drains the queue and attempts a full delivery pass, waiting up to
    /// `timeout` for the flusher to respond.
    pub fn flush(&self, timeout: Duration) -> Result<DeliveryCounts, ClientError> {
        let Some(inner) = &self.inner else {
            return Ok(DeliveryCounts::default());
        };
        let sender = inner
            .sender
            .lock()
            .expect("sender lock")
            .clone()
            .ok_or(ClientError::WorkerGone)?;
        let (ack, ack_rx) = std::sync::mpsc::sync_channel(1);
        sender
            .send(WorkerMsg::Flush(ack))
            .map_err(|_| ClientError::WorkerGone)?;
        ack_rx
            .recv_timeout(timeout)
            .map_err(|_| ClientError::WorkerGone)
    }

    /// Records the terminal status and flushes; the status is applied
    /// server-side only after every record has been delivered.
    pub fn finish(&self, status: RunStatus, timeout: Duration) -> Result<DeliveryCounts, ClientError> {
        let Some(inner) = &self.inner else {
            return Ok(DeliveryCounts::default());
        };
        std::fs::write(
            inner.spool.dir().join(spool::FINISH_INTENT_FILE),
            serde_json::to_vec(&FinishIntent { status }).expect("serializable intent"),
        )?;
        self.flush(timeout)
    }
}

/// Borrowed artifact content for upload.
pub enum ArtifactPayload<'a> {
    Bitstrings(&'a BitstringSet),
    Vector(&'a [f64]),
}

/// An open L3 task span. Dropping an unfinished span records a failure.
pub struct TaskSpan {
    handle: RunHandle,
    task_name: String,
    attempt: u32,
    started_wall: chrono::DateTime<chrono::Utc>,
    started_mono: Instant,
    finished: bool,
}

impl TaskSpan {
    pub fn attempt(&self) -> u32 {
        self.attempt
    }

    pub fn finish(mut self, ok: bool) {
        self.finish_inner(ok);
    }

    fn finish_inner(&mut self, ok: bool) {
        if self.finished {
            return;
        }
        self.finished = true;
        let wall_clock_s = self.started_mono.elapsed().as_secs_f64();
        let ended_wall = now_micros();
        let record = TelemetryRecord::new(
            self.handle.run_id,
            self.task_name.clone(),
            TelemetryLevel::L3,
            kind::TASK_TIMING,
            ended_wall,
        )
        .with_payload("attempt", PayloadValue::Int(i64::from(self.attempt)))
        .with_payload("outcome", if ok { "ok" } else { "failed" })
        .with_payload("wall_clock_s", wall_clock_s)
        .with_payload(
            "started_at",
            crate::telemetry::canonical_ts(&self.started_wall),
        )
        .with_payload("ended_at", crate::telemetry::canonical_ts(&ended_wall));
        self.handle.emit_record(record);
    }
}

impl Drop for TaskSpan {
    fn drop(&mut self) {
        self.finish_inner(false);
    }
}

/// Delivery engine shared by the background flusher and explicit replay:
/// run intent, then spooled blobs, then record batches, then the finish
/// intent. Transport failures stop the pass and are reported in the
/// counts, never panicked or surfaced to the workload.
struct Deliverer {
    spool: Arc<Spool>,
    transport: Arc<dyn Transport>,
    run_created: AtomicBool,
}

impl Deliverer {
    fn deliver_all(&self, batch_max: usize) -> DeliveryCounts {
        let mut counts = DeliveryCounts::default();
        if let Err(err) = self.try_deliver(batch_max, &mut counts) {
            log::debug!("delivery pass stopped: {err}");
            counts.last_error = Some(err.to_string());
        }
        counts.remaining = self.spool.pending_lines().unwrap_or(0) as u64;
        counts
    }

    fn try_deliver(&self, batch_max: usize, counts: &mut DeliveryCounts) -> Result<(), ClientError> {
        self.ensure_run()?;
        self.push_blobs()?;
        loop {
            let (chunk, lines, next) = self.spool.read_pending(batch_max)?;
            if lines == 0 {
                break;
            }
            self.transport
                .send_records(self.run_intent()?.run_id, &chunk)?;
            self.spool.set_cursor(next)?;
            counts.delivered += lines as u64;
        }
        counts.finished = self.apply_finish()?;
        Ok(())
    }

    fn run_intent(&self) -> Result<RunIntent, ClientError> {
        let path = self.spool.dir().join(spool::RUN_INTENT_FILE);
        let bytes = std::fs::read(&path)?;
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Intent(e.to_string()))
    }

    fn ensure_run(&self) -> Result<(), ClientError> {
        if self.run_created.load(Ordering::SeqCst) {
            return Ok(());
        }
        let intent = self.run_intent()?;
        let config_blob = self.spool.blob_path(&intent.config_digest.digest);
        if config_blob.exists() {
            let bytes = std::fs::read(&config_blob)?;
            self.transport
                .put_blob(&intent.config_digest.digest, &bytes)?;
        }
        self.transport.create_run(&CreateRunWire {
            name: intent.name.clone(),
            config_digest: intent.config_digest.clone(),
            run_id: Some(intent.run_id),
        })?;
        self.run_created.store(true, Ordering::SeqCst);
        Ok(())
    }

    fn push_blobs(&self) -> Result<(), ClientError> {
        let blobs_dir = self.spool.dir().join("blobs");
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&blobs_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        for path in paths {
            let digest = path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_owned();
            let bytes = std::fs::read(&path)?;
            self.transport.put_blob(&digest, &bytes)?;
            let _ = std::fs::remove_file(&path);
        }
        Ok(())
    }

    fn apply_finish(&self) -> Result<bool, ClientError> {
        let path = self.spool.dir().join(spool::FINISH_INTENT_FILE);
        if !path.exists() {
            return Ok(false);
        }
        if self.spool.pending_lines()? > 0 {
            return Ok(false);
        }
        let intent: FinishIntent = serde_json::from_slice(&std::fs::read(&path)?)
            .map_err(|e| ClientError::Intent(e.to_string()))?;
        match self.transport.finish_run(self.run_intent()?.run_id, intent.status) {
            Ok(_) => {}
            // Replays meet an already-finished run; that's success.
            Err(TransportError::Status { code: 409, .. }) => {}
            Err(err) => return Err(err.into()),
        }
        let _ = std::fs::remove_file(&path);
        Ok(true)
    }
}

struct Worker {
    receiver: Receiver<WorkerMsg>,
    spool: Arc<Spool>,
    deliverer: Arc<Deliverer>,
    batch_max: usize,
    flush_interval: Duration,
}

impl Worker {
    fn run(self) {
        let mut backoff = Duration::from_millis(250);
        let mut next_attempt = Instant::now();
        let deliver = |force: bool, backoff: &mut Duration, next_attempt: &mut Instant| {
            if !force && Instant::now() < *next_attempt {
                return DeliveryCounts::default();
            }
            let counts = self.deliverer.deliver_all(self.batch_max);
            if counts.last_error.is_some() {
                *backoff = (*backoff * 2).min(Duration::from_secs(5));
                *next_attempt = Instant::now() + *backoff;
            } else {
                *backoff = Duration::from_millis(250);
                *next_attempt = Instant::now();
            }
            counts
        };

        deliver(true, &mut backoff, &mut next_attempt);
        loop {
            match self.receiver.recv_timeout(self.flush_interval) {
                Ok(WorkerMsg::Record(record)) => {
                    // Drain a burst to the spool in one durable append.
                    let mut lines = vec![canonical_encode(&record)];
                    let mut flush_acks = Vec::new();
                    let mut shutdown = false;
                    while lines.len() < self.batch_max {
                        match self.receiver.try_recv() {
                            Ok(WorkerMsg::Record(r)) => lines.push(canonical_encode(&r)),
                            Ok(WorkerMsg::Flush(ack)) => {
                                flush_acks.push(ack);
                                break;
                            }
                            Ok(WorkerMsg::Shutdown) => {
                                shutdown = true;
                                break;
                            }
                            Err(_) => break,
                        }
                    }
                    if let Err(err) = self.spool.append(&lines) {
                        log::error!("spool append failed: {err}");
                    }
                    if flush_acks.is_empty() {
                        deliver(false, &mut backoff, &mut next_attempt);
                    } else {
                        let counts = deliver(true, &mut backoff, &mut next_attempt);
                        for ack in flush_acks {
                            let _ = ack.send(counts.clone());
                        }
                    }
                    if shutdown {
                        break;
                    }
                }
                Ok(WorkerMsg::Flush(ack)) => {
                    let counts = deliver(true, &mut backoff, &mut next_attempt);
                    let _ = ack.send(counts);
                }
                Ok(WorkerMsg::Shutdown) => break,
                Err(std::sync::mpsc::RecvTimeoutError::Timeout) => {
                    deliver(false, &mut backoff, &mut next_attempt);
                }
                Err(std::sync::mpsc::RecvTimeoutError::Disconnected) => break,
            }
        }
        // Final best-effort pass on shutdown.
        self.deliverer.deliver_all(self.batch_max);
    }
}

/// Replays a run's spool directory against the server: registration,
/// blobs, records, finish intent. Returns the delivery counts; an empty
/// spool yields zero deliveries.
pub fn replay_spool(
    endpoint: &str,
    token: &str,
    run_spool_dir: impl Into<PathBuf>,
) -> Result<DeliveryCounts, ClientError> {
    let transport: Arc<dyn Transport> = Arc::new(HttpTransport::new(endpoint, token));
    replay_spool_with_transport(run_spool_dir, transport)
}

pub fn replay_spool_with_transport(
    run_spool_dir: impl Into<PathBuf>,
    transport: Arc<dyn Transport>,
) -> Result<DeliveryCounts, ClientError> {
    let spool = Arc::new(Spool::open(run_spool_dir)?);
    let deliverer = Deliverer {
        spool,
        transport,
        run_created: AtomicBool::new(false),
    };
    let counts = deliverer.deliver_all(512);
    if let Some(err) = &counts.last_error {
        log::warn!("replay incomplete: {err}");
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disabled_handle_is_inert() {
        let handle = RunHandle::disabled();
        assert!(!handle.is_enabled());
        let out = handle.record_task("t", || 42);
        assert_eq!(out, 42);
        assert_eq!(handle.emitted_count(), 0);
        assert_eq!(handle.flush(Duration::from_secs(1)).unwrap(), DeliveryCounts::default());
    }

    #[test]
    fn unknown_artifact_name_is_rejected_locally() {
        let handle = RunHandle::disabled();
        let set = BitstringSet::empty(4);
        let err = handle
            .put_artifact("mystery", 0, None, ArtifactPayload::Bitstrings(&set))
            .unwrap_err();
        assert!(matches!(err, ClientError::Validation(_)));
    }
}
