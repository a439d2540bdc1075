//! Server-side ETL: transforms stored raw telemetry into metric tables
//! and report datasets. Every output is a pure function of (records,
//! blobs, definition version), so recomputation is byte-identical and new
//! metrics can be evaluated long after the workflow finished.

mod export;
mod metrics;
mod pipeline;
mod report;

pub use export::format_real;
pub use metrics::{
    avg_occupancy, carryover_acquisition, hamming_to_rhf, parameter_convergence,
    sample_preservation,
};
pub use pipeline::{
    builtin_definitions, run_pipeline, EtlManifest, Keying, MetricDefinition, MetricRow,
    MetricTable, RunDataSource, StoreSource, TableSummary,
};
pub use report::{build_report, PanelSummary, ReportManifest};

use thiserror::Error;

use crate::telemetry::RunId;

#[derive(Debug, Error)]
pub enum EtlError {
    #[error("bitstring widths differ: {left} vs {right}")]
    WidthMismatch { left: u16, right: u16 },
    #[error("need at least two vectors, got {0}")]
    TooFewVectors(usize),
    #[error("lengths differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("metric input set is empty")]
    EmptySet,
    #[error("{electrons} electrons do not fit width {width}")]
    ElectronCount { electrons: usize, width: u16 },
    #[error("amplitudes are not normalized (|c|^2 sums to {norm})")]
    Unnormalized { norm: f64 },
    #[error("run {0} has not completed; the pipeline only reads quiesced runs")]
    RunNotCompleted(RunId),
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error("input artifact unavailable: {0}")]
    MissingInput(String),
    #[error("data source error: {0}")]
    Source(String),
    #[error("artifact container is malformed: {0}")]
    Container(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
