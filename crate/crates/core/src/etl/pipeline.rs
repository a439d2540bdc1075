//! Metric registry and the extract-transform-load driver.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::server::{RecordFilter, RunManifest, RunStatus, Store, StoreError};
use crate::telemetry::{
    digest_hex, kind, unpack_bitstrings, unpack_vector, BitstringSet, BlobRef, Payload, RecordId,
    RunId, TelemetryLevel, TelemetryRecord,
};

use super::export::metric_table_csv;
use super::{metrics, EtlError};

/// Row keying of a metric table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keying {
    Iteration,
    IterationPopulation,
}

/// A registered metric: a versioned pure function of stored raw data.
#[derive(Debug, Clone, Copy)]
pub struct MetricDefinition {
    pub name: &'static str,
    pub level: TelemetryLevel,
    pub version: u32,
    pub inputs: &'static [&'static str],
    pub keying: Keying,
}

/// The built-in registry. `(name, version)` pairs are unique.
pub fn builtin_definitions() -> &'static [MetricDefinition] {
    &[
        MetricDefinition {
            name: "carryover_acquisition",
            level: TelemetryLevel::L4,
            version: 1,
            inputs: &["carryover"],
            keying: Keying::Iteration,
        },
        MetricDefinition {
            name: "parameter_convergence",
            level: TelemetryLevel::L4,
            version: 1,
            inputs: &["ucj_parameter"],
            keying: Keying::Iteration,
        },
        MetricDefinition {
            name: "hamming_to_rhf",
            level: TelemetryLevel::L4,
            version: 1,
            inputs: &["carryover", "run_params"],
            keying: Keying::Iteration,
        },
        MetricDefinition {
            name: "sample_preservation",
            level: TelemetryLevel::L4,
            version: 1,
            inputs: &["raw_bitstrings", "recovered_bitstrings"],
            keying: Keying::IterationPopulation,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iteration: Option<u32>,
    pub population: Option<u32>,
    /// `None` renders as null: a prescribed boundary (e.g. the first
    /// iteration of an acquisition metric) or a missing input.
    pub value: Option<f64>,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub name: String,
    pub version: u32,
    pub run_id: RunId,
    pub rows: Vec<MetricRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableSummary {
    pub name: String,
    pub version: u32,
    pub file: String,
    pub rows: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EtlManifest {
    pub run_id: RunId,
    pub tables: Vec<TableSummary>,
}

/// Read access to one run's stored raw data, however it is reached.
pub trait RunDataSource {
    fn manifest(&self) -> Result<RunManifest, EtlError>;
    fn records(&self, filter: &RecordFilter) -> Result<Vec<TelemetryRecord>, EtlError>;
    fn blob(&self, digest: &str) -> Result<Vec<u8>, EtlError>;
}

/// Direct store access (server side).
pub struct StoreSource<'a> {
    store: &'a Store,
    run_id: RunId,
}

impl<'a> StoreSource<'a> {
    pub fn new(store: &'a Store, run_id: RunId) -> Self {
        StoreSource { store, run_id }
    }
}

fn map_store_err(err: StoreError) -> EtlError {
    match err {
        StoreError::UnknownBlob(d) => EtlError::MissingInput(format!("blob {d}")),
        other => EtlError::Source(other.to_string()),
    }
}

impl RunDataSource for StoreSource<'_> {
    fn manifest(&self) -> Result<RunManifest, EtlError> {
        self.store.manifest(self.run_id).map_err(map_store_err)
    }

    fn records(&self, filter: &RecordFilter) -> Result<Vec<TelemetryRecord>, EtlError> {
        self.store.query(self.run_id, filter).map_err(map_store_err)
    }

    fn blob(&self, digest: &str) -> Result<Vec<u8>, EtlError> {
        self.store.get_blob(digest).map_err(map_store_err)
    }
}

/// Indexed view of a run's L4 artifacts and run-level parameters.
pub(crate) struct ArtifactIndex {
    by_key: BTreeMap<(String, Option<u32>, Option<u32>), (RecordId, BlobRef)>,
    pub iterations: Vec<u32>,
    pub populations: Vec<u32>,
    pub run_params: Payload,
}

impl ArtifactIndex {
    pub fn load(source: &dyn RunDataSource) -> Result<Self, EtlError> {
        let filter = RecordFilter {
            level: Some(TelemetryLevel::L4),
            kind: Some(kind::SQD_ARTIFACT.into()),
            ..RecordFilter::default()
        };
        let mut by_key = BTreeMap::new();
        let mut iterations = BTreeSet::new();
        let mut populations = BTreeSet::new();
        for record in source.records(&filter)? {
            let Some(name) = record.payload.get("artifact").and_then(|v| v.as_str()) else {
                continue;
            };
            let Some(blob) = record.blob_refs.first() else {
                continue;
            };
            if let Some(g) = record.iteration {
                iterations.insert(g);
            }
            if let Some(i) = record.population {
                populations.insert(i);
            }
            by_key.insert(
                (name.to_owned(), record.iteration, record.population),
                (record.record_id, blob.clone()),
            );
        }

        let params_filter = RecordFilter {
            level: Some(TelemetryLevel::L4),
            kind: Some(kind::RUN_PARAMS.into()),
            ..RecordFilter::default()
        };
        let run_params = source
            .records(&params_filter)?
            .into_iter()
            .next()
            .map(|r| r.payload)
            .unwrap_or_default();

        Ok(ArtifactIndex {
            by_key,
            iterations: iterations.into_iter().collect(),
            populations: populations.into_iter().collect(),
            run_params,
        })
    }

    pub fn param_i64(&self, key: &str) -> Option<i64> {
        match self.run_params.get(key) {
            Some(crate::telemetry::PayloadValue::Int(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn param_f64(&self, key: &str) -> Option<f64> {
        self.run_params.get(key).and_then(|v| v.as_f64())
    }

    fn lookup(
        &self,
        name: &str,
        iteration: Option<u32>,
        population: Option<u32>,
    ) -> Option<&(RecordId, BlobRef)> {
        self.by_key
            .get(&(name.to_owned(), iteration, population))
    }

    /// Fetches and unpacks one bitstring-set artifact; errors are folded
    /// into a provenance note so the pipeline can continue.
    pub fn bitset(
        &self,
        source: &dyn RunDataSource,
        name: &str,
        iteration: Option<u32>,
        population: Option<u32>,
    ) -> Result<(BitstringSet, String), String> {
        let key_desc = describe(name, iteration, population);
        let (record_id, blob) = self
            .lookup(name, iteration, population)
            .ok_or(format!("missing:{key_desc}"))?;
        let bytes = source
            .blob(&blob.digest)
            .map_err(|e| format!("missing:{key_desc} ({e})"))?;
        let set = unpack_bitstrings(&bytes)
            .map_err(|e| format!("malformed:{key_desc} ({e})"))?;
        Ok((set, format!("record={record_id};blob={}", blob.digest)))
    }

    pub fn vector(
        &self,
        source: &dyn RunDataSource,
        name: &str,
        iteration: Option<u32>,
        population: Option<u32>,
    ) -> Result<(Vec<f64>, String), String> {
        let key_desc = describe(name, iteration, population);
        let (record_id, blob) = self
            .lookup(name, iteration, population)
            .ok_or(format!("missing:{key_desc}"))?;
        let bytes = source
            .blob(&blob.digest)
            .map_err(|e| format!("missing:{key_desc} ({e})"))?;
        let vector = unpack_vector(&bytes).map_err(|e| format!("malformed:{key_desc} ({e})"))?;
        Ok((vector, format!("record={record_id};blob={}", blob.digest)))
    }
}

fn describe(name: &str, iteration: Option<u32>, population: Option<u32>) -> String {
    match (iteration, population) {
        (Some(g), Some(i)) => format!("{name}@g={g};p={i}"),
        (Some(g), None) => format!("{name}@g={g}"),
        _ => name.to_owned(),
    }
}

/// Computes one metric's rows from stored data. A failure to obtain an
/// input yields a null row with a provenance note, never an abort.
pub(crate) fn compute_metric_series(
    def: &MetricDefinition,
    source: &dyn RunDataSource,
    idx: &ArtifactIndex,
) -> Result<Vec<MetricRow>, EtlError> {
    let mut rows = Vec::new();
    match def.name {
        "carryover_acquisition" => {
            for &g in &idx.iterations {
                if g == 0 {
                    rows.push(MetricRow {
                        iteration: Some(g),
                        population: None,
                        value: None,
                        provenance: "defined for g > 0 only".into(),
                    });
                    continue;
                }
                let cur = idx.bitset(source, "carryover", Some(g), None);
                let prev = idx.bitset(source, "carryover", Some(g - 1), None);
                rows.push(match (cur, prev) {
                    (Ok((cur, p1)), Ok((prev, p2))) => {
                        let value = metrics::carryover_acquisition(&prev, &cur)?;
                        MetricRow {
                            iteration: Some(g),
                            population: None,
                            value: Some(value as f64),
                            provenance: format!("{p1};{p2}"),
                        }
                    }
                    (cur, prev) => MetricRow {
                        iteration: Some(g),
                        population: None,
                        value: None,
                        provenance: cur.err().or(prev.err()).unwrap_or_default(),
                    },
                });
            }
        }
        "parameter_convergence" => {
            for &g in &idx.iterations {
                let mut thetas = Vec::new();
                let mut provenance = Vec::new();
                for &i in &idx.populations {
                    if let Ok((theta, p)) = idx.vector(source, "ucj_parameter", Some(g), Some(i)) {
                        thetas.push(theta);
                        provenance.push(p);
                    }
                }
                rows.push(if thetas.len() >= 2 {
                    MetricRow {
                        iteration: Some(g),
                        population: None,
                        value: Some(metrics::parameter_convergence(&thetas)?),
                        provenance: provenance.join(";"),
                    }
                } else {
                    MetricRow {
                        iteration: Some(g),
                        population: None,
                        value: None,
                        provenance: format!(
                            "missing:ucj_parameter@g={g} (only {} vectors)",
                            thetas.len()
                        ),
                    }
                });
            }
        }
        "hamming_to_rhf" => {
            let n_e = idx.param_i64("n_alpha");
            for &g in &idx.iterations {
                let row = match (n_e, idx.bitset(source, "carryover", Some(g), None)) {
                    (Some(n_e), Ok((set, provenance))) => MetricRow {
                        iteration: Some(g),
                        population: None,
                        value: Some(metrics::hamming_to_rhf(&set, n_e as usize)?),
                        provenance,
                    },
                    (None, _) => MetricRow {
                        iteration: Some(g),
                        population: None,
                        value: None,
                        provenance: "missing:run_params.n_alpha".into(),
                    },
                    (_, Err(note)) => MetricRow {
                        iteration: Some(g),
                        population: None,
                        value: None,
                        provenance: note,
                    },
                };
                rows.push(row);
            }
        }
        "sample_preservation" => {
            for &g in &idx.iterations {
                for &i in &idx.populations {
                    let raw = idx.bitset(source, "raw_bitstrings", Some(g), Some(i));
                    let recovered = idx.bitset(source, "recovered_bitstrings", Some(g), Some(i));
                    rows.push(match (raw, recovered) {
                        (Ok((raw, p1)), Ok((rec, p2))) => MetricRow {
                            iteration: Some(g),
                            population: Some(i),
                            value: Some(metrics::sample_preservation(&raw, &rec)?),
                            provenance: format!("{p1};{p2}"),
                        },
                        (raw, rec) => MetricRow {
                            iteration: Some(g),
                            population: Some(i),
                            value: None,
                            provenance: raw.err().or(rec.err()).unwrap_or_default(),
                        },
                    });
                }
            }
        }
        other => return Err(EtlError::UnknownMetric(other.to_owned())),
    }
    Ok(rows)
}

/// Extracts the referenced records and blobs, computes each requested
/// definition (all built-ins when `metrics` is `None`), and loads the
/// tables into `out_dir`. Re-running over the same raw data writes
/// byte-identical exports.
pub fn run_pipeline(
    source: &dyn RunDataSource,
    metrics: Option<&[String]>,
    out_dir: &Path,
) -> Result<EtlManifest, EtlError> {
    let manifest = source.manifest()?;
    if manifest.status != RunStatus::Completed {
        return Err(EtlError::RunNotCompleted(manifest.run_id));
    }

    let definitions: Vec<&MetricDefinition> = match metrics {
        None => builtin_definitions().iter().collect(),
        Some(names) => {
            let mut picked = Vec::with_capacity(names.len());
            for name in names {
                let def = builtin_definitions()
                    .iter()
                    .find(|d| d.name == name)
                    .ok_or_else(|| EtlError::UnknownMetric(name.clone()))?;
                picked.push(def);
            }
            picked
        }
    };

    let idx = ArtifactIndex::load(source)?;
    std::fs::create_dir_all(out_dir)?;

    let mut tables = Vec::with_capacity(definitions.len());
    for def in definitions {
        let rows = compute_metric_series(def, source, &idx)?;
        let table = MetricTable {
            name: def.name.to_owned(),
            version: def.version,
            run_id: manifest.run_id,
            rows,
        };
        let bytes = metric_table_csv(&table);
        let file = format!("{}.v{}.csv", def.name, def.version);
        std::fs::write(out_dir.join(&file), &bytes)?;
        tables.push(TableSummary {
            name: def.name.to_owned(),
            version: def.version,
            file,
            rows: table.rows.len(),
            sha256: digest_hex(&bytes),
        });
    }
    tables.sort_by(|a, b| a.name.cmp(&b.name));

    let etl_manifest = EtlManifest {
        run_id: manifest.run_id,
        tables,
    };
    std::fs::write(
        out_dir.join("etl_manifest.json"),
        serde_json::to_vec_pretty(&etl_manifest).expect("serializable manifest"),
    )?;
    Ok(etl_manifest)
}
