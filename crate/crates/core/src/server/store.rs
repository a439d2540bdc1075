//! Durable run/record/blob storage: append-only record logs with an
//! in-memory index rebuilt on startup, and a content-addressed blob store.
//! Nothing is ever mutated or deleted; acknowledged writes are synced to
//! disk before the acknowledgment.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{
    canonical_decode, canonical_encode, digest_hex, BlobRef, RecordId, RunId, TelemetryLevel,
    TelemetryRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Active,
    Completed,
    Failed,
}

/// Registered workflow execution with its frozen configuration blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: RunId,
    pub name: String,
    pub created_at: DateTime<Utc>,
    pub config_digest: BlobRef,
    pub status: RunStatus,
}

/// Conjunctive record filter; `since` is inclusive, `until` exclusive.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordFilter {
    pub level: Option<TelemetryLevel>,
    pub kind: Option<String>,
    pub iteration: Option<u32>,
    pub population: Option<u32>,
    pub since: Option<DateTime<Utc>>,
    pub until: Option<DateTime<Utc>>,
}

impl RecordFilter {
    pub fn matches(&self, record: &TelemetryRecord) -> bool {
        if let Some(level) = self.level {
            if record.level != level {
                return false;
            }
        }
        if let Some(kind) = &self.kind {
            if &record.kind != kind {
                return false;
            }
        }
        if let Some(iteration) = self.iteration {
            if record.iteration != Some(iteration) {
                return false;
            }
        }
        if let Some(population) = self.population {
            if record.population != Some(population) {
                return false;
            }
        }
        if let Some(since) = self.since {
            if record.timestamp < since {
                return false;
            }
        }
        if let Some(until) = self.until {
            if record.timestamp >= until {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestError {
    /// Zero-based position in the submitted batch.
    pub index: usize,
    pub record_id: Option<RecordId>,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub deduplicated: usize,
    pub errors: Vec<IngestError>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown run {0}")]
    UnknownRun(RunId),
    #[error("run {0} is not active")]
    RunNotActive(RunId),
    #[error("run {run_id} already exists under the name {existing:?}")]
    NameConflict { run_id: RunId, existing: String },
    #[error("status can only move from active to completed or failed")]
    InvalidTransition,
    #[error("config blob {0} has not been uploaded")]
    MissingConfigBlob(String),
    #[error("malformed blob digest {0:?}")]
    BadDigest(String),
    #[error("unknown blob {0}")]
    UnknownBlob(String),
    #[error("blob {digest} is corrupt on disk (stored bytes hash to {actual})")]
    CorruptBlob { digest: String, actual: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest parse error: {0}")]
    Manifest(#[from] serde_json::Error),
}

struct RunState {
    manifest: RunManifest,
    records: Vec<TelemetryRecord>,
    ids: HashSet<RecordId>,
    log: File,
}

/// The storage engine behind the observability service.
pub struct Store {
    data_dir: PathBuf,
    runs: RwLock<HashMap<RunId, Arc<RwLock<RunState>>>>,
}

impl Store {
    /// Opens (or initializes) a data directory, rebuilding the in-memory
    /// index from the manifests and record logs.
    pub fn open(data_dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let data_dir = data_dir.into();
        fs::create_dir_all(data_dir.join("runs"))?;
        fs::create_dir_all(data_dir.join("blobs"))?;

        let mut runs = HashMap::new();
        for entry in fs::read_dir(data_dir.join("runs"))? {
            let dir = entry?.path();
            if !dir.is_dir() {
                continue;
            }
            let manifest_path = dir.join("manifest.json");
            if !manifest_path.exists() {
                log::warn!("run directory {dir:?} has no manifest; skipping");
                continue;
            }
            let manifest: RunManifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
            let log_path = dir.join("records.log");
            let mut records = Vec::new();
            let mut ids = HashSet::new();
            if log_path.exists() {
                let reader = BufReader::new(File::open(&log_path)?);
                for (lineno, line) in reader.split(b'\n').enumerate() {
                    let line = line?;
                    if line.is_empty() {
                        continue;
                    }
                    match canonical_decode(&line) {
                        Ok(record) => {
                            if ids.insert(record.record_id) {
                                records.push(record);
                            }
                        }
                        Err(err) => {
                            // A torn final line can only come from a crash
                            // mid-append of an unacknowledged batch.
                            log::warn!(
                                "{}: undecodable line {} dropped ({err})",
                                log_path.display(),
                                lineno + 1
                            );
                        }
                    }
                }
            }
            let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
            runs.insert(
                manifest.run_id,
                Arc::new(RwLock::new(RunState {
                    manifest,
                    records,
                    ids,
                    log,
                })),
            );
        }
        Ok(Store {
            data_dir,
            runs: RwLock::new(runs),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    fn run_dir(&self, run_id: RunId) -> PathBuf {
        self.data_dir.join("runs").join(run_id.to_string())
    }

    fn run_state(&self, run_id: RunId) -> Result<Arc<RwLock<RunState>>, StoreError> {
        self.runs
            .read()
            .expect("runs lock")
            .get(&run_id)
            .cloned()
            .ok_or(StoreError::UnknownRun(run_id))
    }

    /// Registers a run. A client-supplied `run_id` doubles as the
    /// idempotency key: re-creating an existing run with the same name
    /// returns the original manifest and `created = false`.
    pub fn create_run(
        &self,
        name: &str,
        config_digest: BlobRef,
        requested: Option<RunId>,
    ) -> Result<(RunManifest, bool), StoreError> {
        if !self.has_blob(&config_digest.digest)? {
            return Err(StoreError::MissingConfigBlob(config_digest.digest));
        }
        if let Some(run_id) = requested {
            if let Ok(state) = self.run_state(run_id) {
                let manifest = state.read().expect("run lock").manifest.clone();
                if manifest.name != name {
                    return Err(StoreError::NameConflict {
                        run_id,
                        existing: manifest.name,
                    });
                }
                return Ok((manifest, false));
            }
        }

        let manifest = RunManifest {
            run_id: requested.unwrap_or_else(RunId::generate),
            name: name.to_owned(),
            created_at: crate::telemetry::now_micros(),
            config_digest,
            status: RunStatus::Active,
        };

        let dir = self.run_dir(manifest.run_id);
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join("manifest.json"), &serde_json::to_vec(&manifest)?)?;
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("records.log"))?;

        let state = Arc::new(RwLock::new(RunState {
            manifest: manifest.clone(),
            records: Vec::new(),
            ids: HashSet::new(),
            log,
        }));
        let mut runs = self.runs.write().expect("runs lock");
        // A racing create with the same requested id loses here.
        if let Some(existing) = runs.get(&manifest.run_id) {
            let existing = existing.read().expect("run lock").manifest.clone();
            return Ok((existing, false));
        }
        runs.insert(manifest.run_id, state);
        Ok((manifest, true))
    }

    pub fn manifest(&self, run_id: RunId) -> Result<RunManifest, StoreError> {
        Ok(self.run_state(run_id)?.read().expect("run lock").manifest.clone())
    }

    pub fn list_runs(&self) -> Vec<RunManifest> {
        let mut manifests: Vec<RunManifest> = self
            .runs
            .read()
            .expect("runs lock")
            .values()
            .map(|s| s.read().expect("run lock").manifest.clone())
            .collect();
        manifests.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.run_id.cmp(&b.run_id)));
        manifests
    }

    pub fn finish_run(&self, run_id: RunId, status: RunStatus) -> Result<RunManifest, StoreError> {
        if status == RunStatus::Active {
            return Err(StoreError::InvalidTransition);
        }
        let state = self.run_state(run_id)?;
        let mut state = state.write().expect("run lock");
        if state.manifest.status != RunStatus::Active {
            return Err(StoreError::InvalidTransition);
        }
        state.manifest.status = status;
        let dir = self.run_dir(run_id);
        write_atomic(
            &dir.join("manifest.json"),
            &serde_json::to_vec(&state.manifest)?,
        )?;
        Ok(state.manifest.clone())
    }

    /// Appends a batch. Acceptance is per record: malformed entries are
    /// reported individually and never block the rest; replayed record ids
    /// count as deduplicated. Accepted records are synced to disk before
    /// the report is returned.
    pub fn ingest(
        &self,
        run_id: RunId,
        batch: Vec<Result<TelemetryRecord, String>>,
    ) -> Result<IngestReport, StoreError> {
        let state = self.run_state(run_id)?;
        let mut state = state.write().expect("run lock");
        if state.manifest.status != RunStatus::Active {
            return Err(StoreError::RunNotActive(run_id));
        }

        let mut report = IngestReport::default();
        let mut pending: Vec<TelemetryRecord> = Vec::new();
        let mut buffer: Vec<u8> = Vec::new();
        for (index, entry) in batch.into_iter().enumerate() {
            match entry {
                Err(message) => report.errors.push(IngestError {
                    index,
                    record_id: None,
                    message,
                }),
                Ok(record) => {
                    if record.run_id != run_id {
                        report.errors.push(IngestError {
                            index,
                            record_id: Some(record.record_id),
                            message: format!(
                                "record belongs to run {}, not {run_id}",
                                record.run_id
                            ),
                        });
                        continue;
                    }
                    if let Err(err) = record.validate() {
                        report.errors.push(IngestError {
                            index,
                            record_id: Some(record.record_id),
                            message: err.to_string(),
                        });
                        continue;
                    }
                    if state.ids.contains(&record.record_id)
                        || pending.iter().any(|r| r.record_id == record.record_id)
                    {
                        report.deduplicated += 1;
                        continue;
                    }
                    buffer.extend_from_slice(&canonical_encode(&record));
                    buffer.push(b'\n');
                    pending.push(record);
                }
            }
        }

        if !pending.is_empty() {
            state.log.write_all(&buffer)?;
            state.log.sync_data()?;
            report.accepted = pending.len();
            for record in pending {
                state.ids.insert(record.record_id);
                state.records.push(record);
            }
        }
        Ok(report)
    }

    /// Records matching the filter, ordered by (timestamp, record_id).
    pub fn query(
        &self,
        run_id: RunId,
        filter: &RecordFilter,
    ) -> Result<Vec<TelemetryRecord>, StoreError> {
        let state = self.run_state(run_id)?;
        let state = state.read().expect("run lock");
        let mut out: Vec<TelemetryRecord> = state
            .records
            .iter()
            .filter(|r| filter.matches(r))
            .cloned()
            .collect();
        out.sort_by(|a, b| {
            a.timestamp
                .cmp(&b.timestamp)
                .then_with(|| a.record_id.cmp(&b.record_id))
        });
        Ok(out)
    }

    pub fn record_count(&self, run_id: RunId) -> Result<usize, StoreError> {
        Ok(self.run_state(run_id)?.read().expect("run lock").records.len())
    }

    fn blob_path(&self, digest: &str) -> Result<PathBuf, StoreError> {
        if digest.len() != 64
            || !digest
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
        {
            return Err(StoreError::BadDigest(digest.to_owned()));
        }
        Ok(self.data_dir.join("blobs").join(&digest[..2]).join(digest))
    }

    /// Stores a blob under its content address. Idempotent: storing the
    /// same bytes twice keeps a single object.
    pub fn put_blob(&self, bytes: &[u8]) -> Result<(String, bool), StoreError> {
        let digest = digest_hex(bytes);
        let path = self.blob_path(&digest)?;
        if path.exists() {
            return Ok((digest, false));
        }
        fs::create_dir_all(path.parent().expect("blob shard dir"))?;
        match write_atomic(&path, bytes) {
            Ok(()) => Ok((digest, true)),
            // A concurrent writer of identical content may win the rename.
            Err(_) if path.exists() => Ok((digest, false)),
            Err(err) => Err(err.into()),
        }
    }

    /// Fetches and re-verifies a blob.
    pub fn get_blob(&self, digest: &str) -> Result<Vec<u8>, StoreError> {
        let path = self.blob_path(digest)?;
        if !path.exists() {
            return Err(StoreError::UnknownBlob(digest.to_owned()));
        }
        let bytes = fs::read(&path)?;
        let actual = digest_hex(&bytes);
        if actual != digest {
            return Err(StoreError::CorruptBlob {
                digest: digest.to_owned(),
                actual,
            });
        }
        Ok(bytes)
    }

    pub fn has_blob(&self, digest: &str) -> Result<bool, StoreError> {
        Ok(self.blob_path(digest)?.exists())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut file = File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_data()?;
    }
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::{digest, kind, media, now_micros};

    fn record(run_id: RunId, kind_name: &str, level: TelemetryLevel) -> TelemetryRecord {
        TelemetryRecord::new(run_id, "task", level, kind_name, now_micros())
            .with_payload("x", 1i64)
    }

    fn new_store() -> (tempfile::TempDir, Store) {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        (dir, store)
    }

    fn register(store: &Store, name: &str) -> RunId {
        let (digest, _) = store.put_blob(b"config = 1\n").unwrap();
        let config = BlobRef {
            digest,
            media_type: media::TOML.into(),
            size_bytes: 11,
        };
        store.create_run(name, config, None).unwrap().0.run_id
    }

    #[test]
    fn create_requires_the_config_blob() {
        let (_tmp, store) = new_store();
        let missing = digest(media::TOML, b"never uploaded");
        assert!(matches!(
            store.create_run("r", missing, None),
            Err(StoreError::MissingConfigBlob(_))
        ));
    }

    #[test]
    fn client_run_id_is_an_idempotency_key() {
        let (_tmp, store) = new_store();
        let (d, _) = store.put_blob(b"cfg").unwrap();
        let config = BlobRef {
            digest: d,
            media_type: media::TOML.into(),
            size_bytes: 3,
        };
        let id = RunId::generate();
        let (m1, created1) = store.create_run("demo", config.clone(), Some(id)).unwrap();
        let (m2, created2) = store.create_run("demo", config.clone(), Some(id)).unwrap();
        assert!(created1 && !created2);
        assert_eq!(m1, m2);
        assert!(matches!(
            store.create_run("other", config, Some(id)),
            Err(StoreError::NameConflict { .. })
        ));
    }

    #[test]
    fn ingest_dedups_and_reports_bad_records() {
        let (_tmp, store) = new_store();
        let run_id = register(&store, "r");
        let good1 = record(run_id, kind::TASK_TIMING, TelemetryLevel::L3);
        let good2 = record(run_id, kind::QPU_JOB, TelemetryLevel::L2);
        let foreign = record(RunId::generate(), kind::QPU_JOB, TelemetryLevel::L2);

        let report = store
            .ingest(
                run_id,
                vec![
                    Ok(good1.clone()),
                    Ok(good2.clone()),
                    Err("line 3: not json".into()),
                    Ok(foreign.clone()),
                ],
            )
            .unwrap();
        assert_eq!(report.accepted, 2);
        assert_eq!(report.errors.len(), 2);
        assert_eq!(report.errors[0].index, 2);
        assert_eq!(report.errors[1].record_id, Some(foreign.record_id));

        // Full replay: nothing new lands.
        let replay = store
            .ingest(run_id, vec![Ok(good1), Ok(good2)])
            .unwrap();
        assert_eq!(replay.accepted, 0);
        assert_eq!(replay.deduplicated, 2);
        assert_eq!(store.record_count(run_id).unwrap(), 2);
    }

    #[test]
    fn query_filters_and_orders() {
        let (_tmp, store) = new_store();
        let run_id = register(&store, "r");
        let mut batch = Vec::new();
        for i in 0..6u32 {
            let r = record(run_id, kind::SQD_ARTIFACT, TelemetryLevel::L4)
                .with_iteration(i % 3)
                .with_population(i % 2);
            batch.push(Ok(r));
        }
        store.ingest(run_id, batch).unwrap();

        let filter = RecordFilter {
            level: Some(TelemetryLevel::L4),
            kind: Some(kind::SQD_ARTIFACT.into()),
            iteration: Some(1),
            ..RecordFilter::default()
        };
        let hits = store.query(run_id, &filter).unwrap();
        assert_eq!(hits.len(), 2);
        assert!(hits.windows(2).all(|w| {
            (w[0].timestamp, w[0].record_id) <= (w[1].timestamp, w[1].record_id)
        }));

        let none = store
            .query(
                run_id,
                &RecordFilter {
                    kind: Some("nope".into()),
                    ..RecordFilter::default()
                },
            )
            .unwrap();
        assert!(none.is_empty());

        let all = store.query(run_id, &RecordFilter::default()).unwrap();
        assert_eq!(all.len(), 6);
    }

    #[test]
    fn restart_loses_nothing_after_acknowledged_ingest() {
        let tmp = tempfile::tempdir().unwrap();
        let run_id;
        {
            let store = Store::open(tmp.path()).unwrap();
            run_id = register(&store, "durable");
            let batch = (0..25)
                .map(|_| Ok(record(run_id, kind::TASK_TIMING, TelemetryLevel::L3)))
                .collect();
            let report = store.ingest(run_id, batch).unwrap();
            assert_eq!(report.accepted, 25);
            // Dropped without any explicit shutdown.
        }
        let reopened = Store::open(tmp.path()).unwrap();
        assert_eq!(reopened.record_count(run_id).unwrap(), 25);
        assert_eq!(reopened.manifest(run_id).unwrap().name, "durable");
    }

    #[test]
    fn torn_trailing_line_is_dropped_on_restart() {
        let tmp = tempfile::tempdir().unwrap();
        let run_id;
        {
            let store = Store::open(tmp.path()).unwrap();
            run_id = register(&store, "torn");
            store
                .ingest(run_id, vec![Ok(record(run_id, kind::TASK_TIMING, TelemetryLevel::L3))])
                .unwrap();
        }
        let log_path = tmp
            .path()
            .join("runs")
            .join(run_id.to_string())
            .join("records.log");
        let mut file = OpenOptions::new().append(true).open(&log_path).unwrap();
        file.write_all(b"{\"blob_refs\":[],\"trunc").unwrap();
        drop(file);

        let reopened = Store::open(tmp.path()).unwrap();
        assert_eq!(reopened.record_count(run_id).unwrap(), 1);
    }

    #[test]
    fn blob_round_trip_and_idempotent_put() {
        let (_tmp, store) = new_store();
        let payload = vec![7u8; 4096];
        let (d1, created1) = store.put_blob(&payload).unwrap();
        let (d2, created2) = store.put_blob(&payload).unwrap();
        assert_eq!(d1, d2);
        assert!(created1 && !created2);
        assert_eq!(store.get_blob(&d1).unwrap(), payload);
        assert!(matches!(
            store.get_blob(&"0".repeat(64)),
            Err(StoreError::UnknownBlob(_))
        ));
        assert!(matches!(
            store.get_blob("../../etc/passwd"),
            Err(StoreError::BadDigest(_))
        ));
    }

    #[test]
    fn corrupted_blob_is_detected_on_read() {
        let (tmp, store) = new_store();
        let (d, _) = store.put_blob(b"pristine bytes").unwrap();
        let path = tmp.path().join("blobs").join(&d[..2]).join(&d);
        fs::write(&path, b"tampered").unwrap();
        assert!(matches!(
            store.get_blob(&d),
            Err(StoreError::CorruptBlob { .. })
        ));
    }

    #[test]
    fn concurrent_creates_yield_distinct_ids() {
        let (_tmp, store) = new_store();
        let (d, _) = store.put_blob(b"cfg").unwrap();
        let store = std::sync::Arc::new(store);
        let mut handles = Vec::new();
        for t in 0..8 {
            let store = store.clone();
            let config = BlobRef {
                digest: d.clone(),
                media_type: media::TOML.into(),
                size_bytes: 3,
            };
            handles.push(std::thread::spawn(move || {
                (0..16)
                    .map(|i| {
                        store
                            .create_run(&format!("run-{t}-{i}"), config.clone(), None)
                            .unwrap()
                            .0
                            .run_id
                    })
                    .collect::<Vec<_>>()
            }));
        }
        let mut all = HashSet::new();
        for h in handles {
            for id in h.join().unwrap() {
                assert!(all.insert(id));
            }
        }
        assert_eq!(all.len(), 128);
    }

    #[test]
    fn finish_transitions_once() {
        let (_tmp, store) = new_store();
        let run_id = register(&store, "r");
        store.finish_run(run_id, RunStatus::Completed).unwrap();
        assert!(matches!(
            store.finish_run(run_id, RunStatus::Failed),
            Err(StoreError::InvalidTransition)
        ));
        assert!(matches!(
            store.ingest(run_id, vec![Ok(record(run_id, kind::TASK_TIMING, TelemetryLevel::L3))]),
            Err(StoreError::RunNotActive(_))
        ));
    }
}
