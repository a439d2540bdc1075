//! Shared telemetry vocabulary: levels, identifiers, the record schema,
//! canonical serialization, and the packed bitstring container.
//!
//! Everything in this module is immutable after construction and safe to
//! share across threads. The canonical byte encodings defined here are the
//! on-wire and on-disk formats for every other component.

mod bitset;
mod blob;
mod canon;

pub use bitset::{pack_bitstrings, unpack_bitstrings, BitsetError, Bitstring, BitstringSet};
pub use blob::{digest, digest_hex, media, pack_vector, unpack_vector, BlobRef, VectorError};
pub use canon::{canonical_decode, canonical_encode, CanonError};

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

/// Level of the workflow metrics pyramid a record belongs to.
///
/// `L0`/`L1` exist in the taxonomy but no collector in this stack emits
/// them; collectors here produce `L2` (job), `L3` (task) and `L4` (domain)
/// records only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TelemetryLevel {
    L0,
    L1,
    L2,
    L3,
    L4,
}

impl TelemetryLevel {
    pub const ALL: [TelemetryLevel; 5] = [
        TelemetryLevel::L0,
        TelemetryLevel::L1,
        TelemetryLevel::L2,
        TelemetryLevel::L3,
        TelemetryLevel::L4,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TelemetryLevel::L0 => "L0",
            TelemetryLevel::L1 => "L1",
            TelemetryLevel::L2 => "L2",
            TelemetryLevel::L3 => "L3",
            TelemetryLevel::L4 => "L4",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|l| l.as_str() == s)
    }
}

impl fmt::Display for TelemetryLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// 128-bit identifier of one workflow execution.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct RunId(pub Uuid);

impl RunId {
    pub fn generate() -> Self {
        RunId(Uuid::new_v4())
    }

    pub fn parse(s: &str) -> Option<Self> {
        Uuid::parse_str(s).ok().map(RunId)
    }
}

impl fmt::Display for RunId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// 128-bit identifier of one telemetry record; also the server-side
/// deduplication key, so clients may deliver at-least-once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecordId(pub Uuid);

impl RecordId {
    pub fn generate() -> Self {
        RecordId(Uuid::new_v4())
    }
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Scalar payload value. Integers and reals are distinct on the wire
/// (`5` vs `5.0`) so the canonical encoding stays injective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PayloadValue {
    Bool(bool),
    Int(i64),
    Real(f64),
    Str(String),
}

impl PayloadValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            PayloadValue::Int(i) => Some(*i as f64),
            PayloadValue::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            PayloadValue::Str(s) => Some(s),
            _ => None,
        }
    }
}

impl From<&str> for PayloadValue {
    fn from(s: &str) -> Self {
        PayloadValue::Str(s.to_owned())
    }
}
impl From<String> for PayloadValue {
    fn from(s: String) -> Self {
        PayloadValue::Str(s)
    }
}
impl From<i64> for PayloadValue {
    fn from(i: i64) -> Self {
        PayloadValue::Int(i)
    }
}
impl From<u32> for PayloadValue {
    fn from(i: u32) -> Self {
        PayloadValue::Int(i64::from(i))
    }
}
impl From<f64> for PayloadValue {
    fn from(r: f64) -> Self {
        PayloadValue::Real(r)
    }
}
impl From<bool> for PayloadValue {
    fn from(b: bool) -> Self {
        PayloadValue::Bool(b)
    }
}

pub type Payload = BTreeMap<String, PayloadValue>;

/// Record kinds emitted by this stack.
pub mod kind {
    /// L2 row extracted from a quantum primitive execution.
    pub const QPU_JOB: &str = "qpu_job";
    /// L2 row extracted from a batch scheduler job.
    pub const HPC_JOB: &str = "hpc_job";
    /// L3 task lifecycle span.
    pub const TASK_TIMING: &str = "task_timing";
    /// L4 domain artifact reference (bitstring sets, parameter vectors, ...).
    pub const SQD_ARTIFACT: &str = "sqd_artifact";
    /// L4 per-population solver outcome (energies, subspace dimension).
    pub const SQD_RESULT: &str = "sqd_result";
    /// L4 run-level problem parameters, emitted once per run.
    pub const RUN_PARAMS: &str = "run_params";
}

/// The six domain artifact names an SQD trial stores per iteration.
pub const ARTIFACT_NAMES: [&str; 6] = [
    "ucj_parameter",
    "raw_bitstrings",
    "recovered_bitstrings",
    "alphadets",
    "avg_occupancy",
    "carryover",
];

pub fn is_artifact_name(name: &str) -> bool {
    ARTIFACT_NAMES.contains(&name)
}

/// One timestamped observation bound to a run, at a single pyramid level.
///
/// Fields are declared in lexicographic order; the canonical encoding
/// relies on this so that encoded records have sorted keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub blob_refs: Vec<BlobRef>,
    pub iteration: Option<u32>,
    pub kind: String,
    pub level: TelemetryLevel,
    pub payload: Payload,
    pub population: Option<u32>,
    pub record_id: RecordId,
    pub run_id: RunId,
    pub task_name: String,
    #[serde(with = "canon::ts_micros")]
    pub timestamp: DateTime<Utc>,
}

impl TelemetryRecord {
    pub fn new(
        run_id: RunId,
        task_name: impl Into<String>,
        level: TelemetryLevel,
        kind: impl Into<String>,
        timestamp: DateTime<Utc>,
    ) -> Self {
        TelemetryRecord {
            blob_refs: Vec::new(),
            iteration: None,
            kind: kind.into(),
            level,
            payload: Payload::new(),
            population: None,
            record_id: RecordId::generate(),
            run_id,
            task_name: task_name.into(),
            // Microsecond precision is the contract for every timestamp
            // that crosses a process boundary.
            timestamp: timestamp.trunc_subsecs(6),
        }
    }

    pub fn with_iteration(mut self, iteration: u32) -> Self {
        self.iteration = Some(iteration);
        self
    }

    pub fn with_population(mut self, population: u32) -> Self {
        self.population = Some(population);
        self
    }

    pub fn with_payload(mut self, key: impl Into<String>, value: impl Into<PayloadValue>) -> Self {
        self.payload.insert(key.into(), value.into());
        self
    }

    pub fn with_blob(mut self, blob: BlobRef) -> Self {
        self.blob_refs.push(blob);
        self
    }

    /// Checks the structural invariants a record must satisfy before it is
    /// accepted for storage.
    pub fn validate(&self) -> Result<(), RecordInvalid> {
        if self.kind.is_empty() {
            return Err(RecordInvalid::EmptyKind);
        }
        if self.task_name.is_empty() {
            return Err(RecordInvalid::EmptyTaskName);
        }
        if self.timestamp.timestamp_subsec_nanos() % 1_000 != 0 {
            return Err(RecordInvalid::SubMicrosecondTimestamp);
        }
        for (key, value) in &self.payload {
            if key.is_empty() {
                return Err(RecordInvalid::EmptyPayloadKey);
            }
            if let PayloadValue::Real(r) = value {
                if !r.is_finite() {
                    return Err(RecordInvalid::NonFiniteReal { key: key.clone() });
                }
            }
        }
        for blob in &self.blob_refs {
            blob.validate().map_err(RecordInvalid::BadBlobRef)?;
        }
        if self.level == TelemetryLevel::L4
            && self.kind == kind::SQD_ARTIFACT
            && self.blob_refs.is_empty()
            && self.payload.is_empty()
        {
            return Err(RecordInvalid::EmptyArtifact);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordInvalid {
    #[error("record kind must be non-empty")]
    EmptyKind,
    #[error("task name must be non-empty")]
    EmptyTaskName,
    #[error("timestamps carry at most microsecond precision")]
    SubMicrosecondTimestamp,
    #[error("payload keys must be non-empty")]
    EmptyPayloadKey,
    #[error("payload value {key:?} is not a finite real")]
    NonFiniteReal { key: String },
    #[error("invalid blob reference: {0}")]
    BadBlobRef(String),
    #[error("sqd_artifact records need at least one blob ref or a non-empty payload")]
    EmptyArtifact,
}

/// Truncates an instant to the microsecond precision used on the wire.
pub fn to_micros(ts: DateTime<Utc>) -> DateTime<Utc> {
    ts.trunc_subsecs(6)
}

/// Current instant at wire precision.
pub fn now_micros() -> DateTime<Utc> {
    to_micros(Utc::now())
}

/// Renders an instant in the canonical wire format.
pub fn canonical_ts(ts: &DateTime<Utc>) -> String {
    canon::ts_micros::format(ts)
}

/// Parses an instant from the canonical wire format.
pub fn parse_canonical_ts(raw: &str) -> Option<DateTime<Utc>> {
    canon::ts_micros::parse(raw)
}
