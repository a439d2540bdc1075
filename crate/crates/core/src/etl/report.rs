//! Static report bundle: one tabular dataset per dashboard panel plus a
//! manifest. Domain panels overlay every supplied run; performance panels
//! are computed from the L2 job rows, with queueing recomputed from the
//! scheduler field names.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::server::RecordFilter;
use crate::telemetry::{kind, parse_canonical_ts, PayloadValue, RunId, TelemetryLevel};

use super::export::format_real;
use super::pipeline::{builtin_definitions, compute_metric_series, ArtifactIndex, RunDataSource};
use super::EtlError;

const DEFAULT_QPU_QUOTA_S: f64 = 60_000.0;
const DEFAULT_HPC_QUOTA_TOKENS: f64 = 8_640.0;
const FALLBACK_BINS: usize = 20;
const MAX_BINS: usize = 200;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanelSummary {
    pub panel: String,
    pub file: String,
    pub present: bool,
    pub rows: usize,
    pub runs: Vec<RunId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportManifest {
    pub runs: Vec<RunId>,
    pub panels: Vec<PanelSummary>,
}

struct Panel {
    name: &'static str,
    header: &'static str,
    rows: Vec<String>,
    runs: BTreeSet<RunId>,
}

impl Panel {
    fn new(name: &'static str, header: &'static str) -> Self {
        Panel {
            name,
            header,
            rows: Vec::new(),
            runs: BTreeSet::new(),
        }
    }

    fn push(&mut self, run: RunId, row: String) {
        self.rows.push(row);
        self.runs.insert(run);
    }
}

/// Builds the full panel set for the supplied runs under `out_dir`.
pub fn build_report(
    sources: &[&dyn RunDataSource],
    out_dir: &Path,
) -> Result<ReportManifest, EtlError> {
    let mut panels = vec![
        Panel::new(
            "energy_vs_iteration",
            "run_id,iteration,population,trial_energy,accepted_energy",
        ),
        Panel::new("carryover_acquisition", "run_id,iteration,value"),
        Panel::new("parameter_convergence", "run_id,iteration,value"),
        Panel::new("hamming_to_rhf", "run_id,iteration,value"),
        Panel::new(
            "sample_preservation",
            "run_id,iteration,population,value",
        ),
        Panel::new("avg_occupancy", "run_id,iteration,orbital,value"),
        Panel::new(
            "qpu_usage",
            "run_id,jobs,total_usage_s,quota_s,pct_of_quota",
        ),
        Panel::new("qpu_queueing_hist", "run_id,bin_lo,bin_hi,count"),
        Panel::new("qpu_wallclock_hist", "run_id,bin_lo,bin_hi,count"),
        Panel::new(
            "hpc_usage",
            "run_id,jobs,total_tokens,quota_tokens,pct_of_quota",
        ),
        Panel::new("hpc_queueing_hist", "run_id,bin_lo,bin_hi,count"),
        Panel::new("hpc_walltime_hist", "run_id,bin_lo,bin_hi,count"),
        Panel::new("hpc_vmem_hist", "run_id,bin_lo,bin_hi,count"),
        Panel::new("hpc_cpupercent_hist", "run_id,bin_lo,bin_hi,count"),
        Panel::new("task_durations", "run_id,task_name,count,total_s,mean_s"),
    ];

    let mut all_runs = Vec::new();
    for source in sources {
        let run_id = source.manifest()?.run_id;
        all_runs.push(run_id);
        add_run(&mut panels, *source, run_id)?;
    }

    let panels_dir = out_dir.join("panels");
    std::fs::create_dir_all(&panels_dir)?;
    let mut summaries = Vec::with_capacity(panels.len());
    for panel in &panels {
        let file = format!("panels/{}.csv", panel.name);
        let mut body = String::with_capacity(64 + panel.rows.len() * 48);
        body.push_str(panel.header);
        body.push('\n');
        for row in &panel.rows {
            body.push_str(row);
            body.push('\n');
        }
        std::fs::write(out_dir.join(&file), body.as_bytes())?;
        summaries.push(PanelSummary {
            panel: panel.name.to_owned(),
            file,
            present: !panel.rows.is_empty(),
            rows: panel.rows.len(),
            runs: panel.runs.iter().copied().collect(),
            note: if panel.rows.is_empty() {
                Some("no input data for this panel".to_owned())
            } else {
                None
            },
        });
    }

    let manifest = ReportManifest {
        runs: all_runs,
        panels: summaries,
    };
    std::fs::write(
        out_dir.join("report_manifest.json"),
        serde_json::to_vec_pretty(&manifest).expect("serializable manifest"),
    )?;
    Ok(manifest)
}

fn add_run(panels: &mut [Panel], source: &dyn RunDataSource, run: RunId) -> Result<(), EtlError> {
    let idx = ArtifactIndex::load(source)?;

    // Domain panels.
    let results = source.records(&RecordFilter {
        level: Some(TelemetryLevel::L4),
        kind: Some(kind::SQD_RESULT.into()),
        ..RecordFilter::default()
    })?;
    for record in &results {
        let (Some(g), Some(i)) = (record.iteration, record.population) else {
            continue;
        };
        let trial = record.payload.get("trial_energy").and_then(|v| v.as_f64());
        let accepted = record.payload.get("accepted_energy").and_then(|v| v.as_f64());
        if let (Some(trial), Some(accepted)) = (trial, accepted) {
            panels[0].push(
                run,
                format!("{run},{g},{i},{},{}", format_real(trial), format_real(accepted)),
            );
        }
    }

    for (panel_index, metric) in [
        (1usize, "carryover_acquisition"),
        (2, "parameter_convergence"),
        (3, "hamming_to_rhf"),
        (4, "sample_preservation"),
    ] {
        let def = builtin_definitions()
            .iter()
            .find(|d| d.name == metric)
            .expect("registry holds all panel metrics");
        for row in compute_metric_series(def, source, &idx)? {
            let value = row
                .value
                .map(format_real)
                .unwrap_or_else(|| "null".to_owned());
            let line = match row.population {
                Some(p) => format!("{run},{},{p},{value}", row.iteration.unwrap_or(0)),
                None => format!("{run},{},{value}", row.iteration.unwrap_or(0)),
            };
            panels[panel_index].push(run, line);
        }
    }

    for &g in &idx.iterations {
        if let Ok((occupancy, _)) = idx.vector(source, "avg_occupancy", Some(g), None) {
            for (orbital, value) in occupancy.iter().enumerate() {
                panels[5].push(run, format!("{run},{g},{orbital},{}", format_real(*value)));
            }
        }
    }

    // QPU panels.
    let qpu_rows = source.records(&RecordFilter {
        level: Some(TelemetryLevel::L2),
        kind: Some(kind::QPU_JOB.into()),
        ..RecordFilter::default()
    })?;
    let mut usage_total = 0.0;
    let mut queueing = Vec::new();
    let mut wallclock = Vec::new();
    for record in &qpu_rows {
        if let Some(u) = record.payload.get("usage_s").and_then(|v| v.as_f64()) {
            usage_total += u;
        }
        let t = |key: &str| {
            record
                .payload
                .get(key)
                .and_then(|v| v.as_str())
                .and_then(parse_canonical_ts)
        };
        if let (Some(created), Some(started), Some(ended)) =
            (t("created_at"), t("started_at"), t("ended_at"))
        {
            queueing.push(seconds_between(created, started));
            wallclock.push(seconds_between(started, ended));
        }
    }
    if !qpu_rows.is_empty() {
        let quota = idx.param_f64("quota_qpu_seconds").unwrap_or(DEFAULT_QPU_QUOTA_S);
        panels[6].push(
            run,
            format!(
                "{run},{},{},{},{}",
                qpu_rows.len(),
                format_real(usage_total),
                format_real(quota),
                format_real(usage_total / quota * 100.0)
            ),
        );
    }
    push_histogram(&mut panels[7], run, &queueing);
    push_histogram(&mut panels[8], run, &wallclock);

    // HPC panels.
    let hpc_rows = source.records(&RecordFilter {
        level: Some(TelemetryLevel::L2),
        kind: Some(kind::HPC_JOB.into()),
        ..RecordFilter::default()
    })?;
    let mut tokens_total = 0.0;
    let mut hpc_queueing = Vec::new();
    let mut walltime = Vec::new();
    let mut vmem = Vec::new();
    let mut cpupercent = Vec::new();
    for record in &hpc_rows {
        if let Some(t) = record.payload.get("tokens").and_then(|v| v.as_f64()) {
            tokens_total += t;
        }
        let ts = |key: &str| {
            record
                .payload
                .get(key)
                .and_then(|v| v.as_str())
                .and_then(parse_canonical_ts)
        };
        if let (Some(etime), Some(stime)) = (ts("etime"), ts("stime")) {
            hpc_queueing.push(seconds_between(etime, stime));
        }
        if let Some(w) = record.payload.get("walltime").and_then(|v| v.as_f64()) {
            walltime.push(w);
        }
        if let Some(PayloadValue::Int(v)) = record.payload.get("resources_used.vmem") {
            vmem.push(*v as f64);
        }
        if let Some(PayloadValue::Int(c)) = record.payload.get("resources_used.cpupercent") {
            cpupercent.push(*c as f64);
        }
    }
    if !hpc_rows.is_empty() {
        let quota = idx
            .param_f64("quota_hpc_tokens")
            .unwrap_or(DEFAULT_HPC_QUOTA_TOKENS);
        panels[9].push(
            run,
            format!(
                "{run},{},{},{},{}",
                hpc_rows.len(),
                format_real(tokens_total),
                format_real(quota),
                format_real(tokens_total / quota * 100.0)
            ),
        );
    }
    push_histogram(&mut panels[10], run, &hpc_queueing);
    push_histogram(&mut panels[11], run, &walltime);
    push_histogram(&mut panels[12], run, &vmem);
    push_histogram(&mut panels[13], run, &cpupercent);

    // Task duration totals.
    let spans = source.records(&RecordFilter {
        level: Some(TelemetryLevel::L3),
        kind: Some(kind::TASK_TIMING.into()),
        ..RecordFilter::default()
    })?;
    let mut totals: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for record in &spans {
        if let Some(w) = record.payload.get("wall_clock_s").and_then(|v| v.as_f64()) {
            let entry = totals.entry(record.task_name.clone()).or_insert((0, 0.0));
            entry.0 += 1;
            entry.1 += w;
        }
    }
    for (task, (count, total)) in totals {
        panels[14].push(
            run,
            format!(
                "{run},{task},{count},{},{}",
                format_real(total),
                format_real(total / count as f64)
            ),
        );
    }
    Ok(())
}

fn seconds_between(a: chrono::DateTime<chrono::Utc>, b: chrono::DateTime<chrono::Utc>) -> f64 {
    (b - a).num_microseconds().map(|us| us as f64 / 1e6).unwrap_or(0.0)
}

/// Freedman-Diaconis binning with a fixed 20-bin fallback when the IQR
/// degenerates.
pub(crate) fn histogram(values: &[f64]) -> Vec<(f64, f64, u64)> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = sorted.len();
    let min = sorted[0];
    let max = sorted[n - 1];
    if min == max {
        return vec![(min, max, n as u64)];
    }
    let quartile = |q: f64| {
        let pos = q * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        if lo + 1 < n {
            sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
        } else {
            sorted[lo]
        }
    };
    let iqr = quartile(0.75) - quartile(0.25);
    let fd_width = 2.0 * iqr / (n as f64).cbrt();
    let bins = if fd_width > 0.0 {
        (((max - min) / fd_width).ceil() as usize).clamp(1, MAX_BINS)
    } else {
        FALLBACK_BINS
    };
    let width = (max - min) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in &sorted {
        let k = (((v - min) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (min + k as f64 * width, min + (k + 1) as f64 * width, c))
        .collect()
}

fn push_histogram(panel: &mut Panel, run: RunId, values: &[f64]) {
    for (lo, hi, count) in histogram(values) {
        panel.push(
            run,
            format!("{run},{},{},{count}", format_real(lo), format_real(hi)),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_covers_all_samples() {
        let values: Vec<f64> = (0..500).map(|i| (i as f64 * 0.37).sin() * 10.0 + 20.0).collect();
        let bins = histogram(&values);
        let total: u64 = bins.iter().map(|(_, _, c)| c).sum();
        assert_eq!(total, 500);
        assert!(bins.len() <= MAX_BINS);
        for w in bins.windows(2) {
            assert!((w[0].1 - w[1].0).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_histograms_fall_back() {
        assert_eq!(histogram(&[]).len(), 0);
        assert_eq!(histogram(&[5.0, 5.0, 5.0]), vec![(5.0, 5.0, 3)]);
        // All mass at two points: IQR can be zero, fallback engages.
        let mut values = vec![1.0; 50];
        values.extend(vec![2.0; 3]);
        let bins = histogram(&values);
        assert_eq!(bins.len(), FALLBACK_BINS);
        let total: u64 = bins.iter().map(|(_, _, c)| c).sum();
        assert_eq!(total, 53);
    }
}
