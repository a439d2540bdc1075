//! Simulated QPU and batch schedulers: queueing and service times are
//! drawn on a synthetic timeline while the submitted closures execute in
//! real time, so desk-scale runs finish in minutes yet produce job
//! telemetry with realistic shapes. Quotas are debited atomically.

use std::sync::Mutex;

use chrono::{DateTime, Duration, Utc};
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{canonical_ts, Payload, PayloadValue};

/// Queue/service time distribution. The constant-zero form exists so
/// deterministic tests can strip all timing randomness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DistSpec {
    Constant { value: f64 },
    LogNormal { median: f64, sigma: f64 },
}

impl DistSpec {
    pub fn constant(value: f64) -> Self {
        DistSpec::Constant { value }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            DistSpec::Constant { value } => *value,
            DistSpec::LogNormal { median, sigma } => {
                let dist = LogNormal::new(median.max(f64::MIN_POSITIVE).ln(), *sigma)
                    .expect("sigma is finite and non-negative");
                dist.sample(rng)
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            DistSpec::Constant { value } if *value < 0.0 => {
                Err(format!("constant delay {value} is negative"))
            }
            DistSpec::LogNormal { median, sigma } if *median <= 0.0 || *sigma < 0.0 => {
                Err(format!("lognormal(median={median}, sigma={sigma}) is invalid"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueueModel {
    pub queue_delay: DistSpec,
    pub service_time: DistSpec,
}

impl Default for QueueModel {
    fn default() -> Self {
        QueueModel {
            queue_delay: DistSpec::Constant { value: 0.0 },
            service_time: DistSpec::Constant { value: 300.0 },
        }
    }
}

/// Full scheduler configuration. Quota defaults mirror the reference
/// allocation: 60,000 QPU seconds and 8,640 HPC tokens on 64 nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerModel {
    pub qpu: QueueModel,
    pub hpc: QueueModel,
    pub quota_qpu_seconds: f64,
    pub quota_hpc_tokens: f64,
    pub hpc_nodes: u32,
    /// Tokens charged per node-hour of walltime.
    pub token_rate: f64,
    pub cores_per_node: u32,
    /// Fraction of QPU wall-clock billed as usage.
    pub qpu_usage_fraction: f64,
    pub vmem_base_bytes: u64,
    pub vmem_per_determinant: u64,
}

impl Default for SchedulerModel {
    fn default() -> Self {
        SchedulerModel {
            qpu: QueueModel {
                queue_delay: DistSpec::LogNormal {
                    median: 45.0,
                    sigma: 0.8,
                },
                service_time: DistSpec::LogNormal {
                    median: 300.0,
                    sigma: 0.35,
                },
            },
            hpc: QueueModel {
                queue_delay: DistSpec::LogNormal {
                    median: 120.0,
                    sigma: 1.0,
                },
                service_time: DistSpec::LogNormal {
                    median: 600.0,
                    sigma: 0.3,
                },
            },
            quota_qpu_seconds: 60_000.0,
            quota_hpc_tokens: 8_640.0,
            hpc_nodes: 64,
            token_rate: 1.0,
            cores_per_node: 112,
            qpu_usage_fraction: 0.5,
            vmem_base_bytes: 6 << 30,
            vmem_per_determinant: 4 << 20,
        }
    }
}

impl SchedulerModel {
    /// Constant-zero queueing everywhere, for deterministic runs.
    pub fn zero_delay(mut self) -> Self {
        self.qpu.queue_delay = DistSpec::constant(0.0);
        self.hpc.queue_delay = DistSpec::constant(0.0);
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        for d in [
            &self.qpu.queue_delay,
            &self.qpu.service_time,
            &self.hpc.queue_delay,
            &self.hpc.service_time,
        ] {
            d.validate()?;
        }
        if self.quota_qpu_seconds <= 0.0 || self.quota_hpc_tokens <= 0.0 {
            return Err("quotas must be positive".into());
        }
        if self.hpc_nodes == 0 || self.token_rate <= 0.0 {
            return Err("hpc_nodes and token_rate must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.qpu_usage_fraction) {
            return Err("qpu_usage_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedError {
    #[error("{resource} quota exhausted: job needs {needed:.3}, {remaining:.3} remaining")]
    QuotaExhausted {
        resource: &'static str,
        needed: f64,
        remaining: f64,
    },
}

/// One quantum primitive execution.
#[derive(Debug, Clone, PartialEq)]
pub struct QpuJobRecord {
    pub job_id: String,
    pub created_at: DateTime<Utc>,
    pub started_at: DateTime<Utc>,
    pub ended_at: DateTime<Utc>,
    pub usage_s: f64,
    pub shots: u64,
}

impl QpuJobRecord {
    pub fn queueing_s(&self) -> f64 {
        duration_s(self.started_at - self.created_at)
    }

    pub fn wall_clock_s(&self) -> f64 {
        duration_s(self.ended_at - self.started_at)
    }
}

/// One batch job, with the scheduler's own field names.
#[derive(Debug, Clone, PartialEq)]
pub struct HpcJobRecord {
    pub job_id: String,
    /// Instant the job became eligible to run.
    pub etime: DateTime<Utc>,
    /// Instant the job started.
    pub stime: DateTime<Utc>,
    pub walltime_s: f64,
    pub vmem_bytes: u64,
    pub cpupercent: u32,
    pub nodes: u32,
    pub tokens: f64,
}

impl HpcJobRecord {
    pub fn queueing_s(&self) -> f64 {
        duration_s(self.stime - self.etime)
    }

    pub fn ended_at(&self) -> DateTime<Utc> {
        self.stime + from_seconds(self.walltime_s)
    }
}

fn duration_s(d: Duration) -> f64 {
    d.num_microseconds()
        .map(|us| us as f64 / 1e6)
        .unwrap_or(f64::MAX)
}

fn from_seconds(s: f64) -> Duration {
    Duration::microseconds((s * 1e6).round() as i64)
}

/// Shared quota ledger plus the distribution models.
pub struct Scheduler {
    model: SchedulerModel,
    qpu_remaining: Mutex<f64>,
    hpc_remaining: Mutex<f64>,
}

impl Scheduler {
    pub fn new(model: SchedulerModel) -> Self {
        let qpu = model.quota_qpu_seconds;
        let hpc = model.quota_hpc_tokens;
        Scheduler {
            model,
            qpu_remaining: Mutex::new(qpu),
            hpc_remaining: Mutex::new(hpc),
        }
    }

    pub fn model(&self) -> &SchedulerModel {
        &self.model
    }

    pub fn qpu_seconds_remaining(&self) -> f64 {
        *self.qpu_remaining.lock().expect("ledger lock")
    }

    pub fn hpc_tokens_remaining(&self) -> f64 {
        *self.hpc_remaining.lock().expect("ledger lock")
    }

    fn debit(ledger: &Mutex<f64>, resource: &'static str, amount: f64) -> Result<(), SchedError> {
        let mut remaining = ledger.lock().expect("ledger lock");
        if *remaining < amount {
            return Err(SchedError::QuotaExhausted {
                resource,
                needed: amount,
                remaining: *remaining,
            });
        }
        *remaining -= amount;
        Ok(())
    }

    /// Runs a sampling closure as a QPU job submitted at `now` on the
    /// synthetic timeline. The draw order is queue delay then service
    /// time; quota is debited before the closure runs.
    pub fn submit_qpu<T, R: Rng>(
        &self,
        job_id: impl Into<String>,
        now: DateTime<Utc>,
        shots: u64,
        rng: &mut R,
        work: impl FnOnce() -> T,
    ) -> Result<(T, QpuJobRecord), SchedError> {
        let queue = self.model.qpu.queue_delay.sample(rng);
        let service = self.model.qpu.service_time.sample(rng);
        let usage = service * self.model.qpu_usage_fraction;
        Self::debit(&self.qpu_remaining, "qpu_seconds", usage)?;
        let result = work();
        let started_at = now + from_seconds(queue);
        let record = QpuJobRecord {
            job_id: job_id.into(),
            created_at: now,
            started_at,
            ended_at: started_at + from_seconds(service),
            usage_s: usage,
            shots,
        };
        Ok((result, record))
    }

    /// Runs a diagonalization closure as a batch job over `dimension`
    /// determinants submitted at `now`. Tokens = nodes x walltime/3600 x
    /// token_rate, debited before the closure runs; vmem scales with the
    /// subspace dimension.
    pub fn submit_hpc<T, R: Rng>(
        &self,
        job_id: impl Into<String>,
        now: DateTime<Utc>,
        dimension: usize,
        rng: &mut R,
        work: impl FnOnce() -> T,
    ) -> Result<(T, HpcJobRecord), SchedError> {
        let queue = self.model.hpc.queue_delay.sample(rng);
        let service = self.model.hpc.service_time.sample(rng);
        let tokens = f64::from(self.model.hpc_nodes) * (service / 3600.0) * self.model.token_rate;
        Self::debit(&self.hpc_remaining, "hpc_tokens", tokens)?;

        let vmem_jitter = 0.9 + 0.2 * rng.random::<f64>();
        let vmem_bytes = ((self.model.vmem_base_bytes
            + self.model.vmem_per_determinant * dimension as u64) as f64
            * vmem_jitter) as u64;
        let cores_total = u64::from(self.model.hpc_nodes) * u64::from(self.model.cores_per_node);
        let max_cpupercent = cores_total * 100;
        let utilization = 0.25 + 0.15 * rng.random::<f64>();
        let cpupercent = (((max_cpupercent as f64) * utilization) as u64).min(max_cpupercent) as u32;

        let result = work();
        let record = HpcJobRecord {
            job_id: job_id.into(),
            etime: now,
            stime: now + from_seconds(queue),
            walltime_s: service,
            vmem_bytes,
            cpupercent,
            nodes: self.model.hpc_nodes,
            tokens,
        };
        Ok((result, record))
    }
}

/// Flat L2 payload for a batch job, mirroring the scheduler's status
/// output key names. vmem is serialized as integer bytes, no unit suffix.
pub fn qstat_row(record: &HpcJobRecord) -> Payload {
    let mut row = Payload::new();
    row.insert("job_id".into(), record.job_id.clone().into());
    row.insert("etime".into(), canonical_ts(&record.etime).into());
    row.insert("stime".into(), canonical_ts(&record.stime).into());
    row.insert("walltime".into(), record.walltime_s.into());
    row.insert(
        "resources_used.vmem".into(),
        PayloadValue::Int(record.vmem_bytes as i64),
    );
    row.insert(
        "resources_used.cpupercent".into(),
        PayloadValue::Int(i64::from(record.cpupercent)),
    );
    row.insert("nodes".into(), PayloadValue::Int(i64::from(record.nodes)));
    row.insert("tokens".into(), record.tokens.into());
    row
}

/// Flat L2 payload for a QPU job.
pub fn qpu_row(record: &QpuJobRecord) -> Payload {
    let mut row = Payload::new();
    row.insert("job_id".into(), record.job_id.clone().into());
    row.insert("created_at".into(), canonical_ts(&record.created_at).into());
    row.insert("started_at".into(), canonical_ts(&record.started_at).into());
    row.insert("ended_at".into(), canonical_ts(&record.ended_at).into());
    row.insert("usage_s".into(), record.usage_s.into());
    row.insert("shots".into(), PayloadValue::Int(record.shots as i64));
    row
}

/// Required keys for each job-table kind, enforced client-side.
pub fn required_job_keys(kind: &str) -> Option<&'static [&'static str]> {
    match kind {
        "qpu_job" => Some(&[
            "job_id",
            "created_at",
            "started_at",
            "ended_at",
            "usage_s",
            "shots",
        ]),
        "hpc_job" => Some(&[
            "job_id",
            "etime",
            "stime",
            "walltime",
            "resources_used.vmem",
            "resources_used.cpupercent",
        ]),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixed_model(qpu_service: f64, hpc_service: f64) -> SchedulerModel {
        SchedulerModel {
            qpu: QueueModel {
                queue_delay: DistSpec::constant(0.0),
                service_time: DistSpec::constant(qpu_service),
            },
            hpc: QueueModel {
                queue_delay: DistSpec::constant(0.0),
                service_time: DistSpec::constant(hpc_service),
            },
            ..SchedulerModel::default()
        }
    }

    #[test]
    fn zero_delay_gives_exactly_zero_queueing() {
        let sched = Scheduler::new(fixed_model(300.0, 600.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let now = crate::telemetry::now_micros();
        let (_, record) = sched.submit_qpu("q1", now, 100, &mut rng, || ()).unwrap();
        assert_eq!(record.queueing_s(), 0.0);
        assert_eq!(record.wall_clock_s(), 300.0);
        assert!(record.usage_s <= record.wall_clock_s());
    }

    #[test]
    fn hpc_token_formula_matches_hand_arithmetic() {
        let sched = Scheduler::new(fixed_model(300.0, 600.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let now = crate::telemetry::now_micros();
        let before = sched.hpc_tokens_remaining();
        let (_, record) = sched.submit_hpc("h1", now, 500, &mut rng, || ()).unwrap();
        let expected = 64.0 * 600.0 / 3600.0;
        assert!((record.tokens - expected).abs() < 1e-9);
        assert!((before - sched.hpc_tokens_remaining() - expected).abs() < 1e-9);
        assert_eq!(record.queueing_s(), 0.0);
    }

    #[test]
    fn quota_below_one_job_fails_before_running_work() {
        let mut model = fixed_model(300.0, 600.0);
        model.quota_qpu_seconds = 10.0;
        let sched = Scheduler::new(model);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ran = false;
        let err = sched
            .submit_qpu("q", crate::telemetry::now_micros(), 1, &mut rng, || {
                ran = true;
            })
            .unwrap_err();
        assert!(!ran);
        match err {
            SchedError::QuotaExhausted {
                resource,
                needed,
                remaining,
            } => {
                assert_eq!(resource, "qpu_seconds");
                assert_eq!(needed, 150.0);
                assert_eq!(remaining, 10.0);
            }
        }
    }

    #[test]
    fn ledger_is_exact_over_many_submissions() {
        let sched = Scheduler::new(fixed_model(100.0, 60.0));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let now = crate::telemetry::now_micros();
        let mut spent = 0.0;
        for i in 0..40 {
            let (_, r) = sched
                .submit_qpu(format!("q{i}"), now, 10, &mut rng, || ())
                .unwrap();
            spent += r.usage_s;
        }
        assert!((sched.qpu_seconds_remaining() - (60_000.0 - spent)).abs() < 1e-9);
        assert!(sched.qpu_seconds_remaining() >= 0.0);
    }

    #[test]
    fn concurrent_debits_never_go_negative() {
        let mut model = fixed_model(100.0, 600.0);
        model.quota_qpu_seconds = 10.0 * 50.0; // room for exactly 10 jobs
        let sched = std::sync::Arc::new(Scheduler::new(model));
        let mut handles = Vec::new();
        let successes = std::sync::Arc::new(std::sync::atomic::AtomicUsize::new(0));
        for t in 0..8u64 {
            let sched = sched.clone();
            let successes = successes.clone();
            handles.push(std::thread::spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + t);
                let now = crate::telemetry::now_micros();
                for i in 0..4 {
                    if sched
                        .submit_qpu(format!("t{t}-{i}"), now, 1, &mut rng, || ())
                        .is_ok()
                    {
                        successes.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    }
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(successes.load(std::sync::atomic::Ordering::SeqCst), 10);
        assert!(sched.qpu_seconds_remaining().abs() < 1e-9);
    }

    #[test]
    fn lognormal_median_is_roughly_right() {
        let spec = DistSpec::LogNormal {
            median: 300.0,
            sigma: 0.8,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut samples: Vec<f64> = (0..400).map(|_| spec.sample(&mut rng)).collect();
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = samples[samples.len() / 2];
        assert!(
            (median - 300.0).abs() / 300.0 < 0.25,
            "empirical median {median}"
        );
    }

    #[test]
    fn qstat_row_has_the_scheduler_field_names() {
        let sched = Scheduler::new(fixed_model(300.0, 600.0));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (_, record) = sched
            .submit_hpc("h", crate::telemetry::now_micros(), 100, &mut rng, || ())
            .unwrap();
        let row = qstat_row(&record);
        for key in [
            "etime",
            "stime",
            "walltime",
            "resources_used.vmem",
            "resources_used.cpupercent",
        ] {
            assert!(row.contains_key(key), "missing {key}");
        }
        assert!(matches!(row["resources_used.vmem"], PayloadValue::Int(_)));
        let etime = crate::telemetry::parse_canonical_ts(row["etime"].as_str().unwrap()).unwrap();
        let stime = crate::telemetry::parse_canonical_ts(row["stime"].as_str().unwrap()).unwrap();
        assert_eq!((stime - etime).num_seconds(), 0);
    }

    #[test]
    fn cpupercent_stays_in_range() {
        let sched = Scheduler::new(SchedulerModel::default());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for i in 0..50 {
            let (_, r) = sched
                .submit_hpc(
                    format!("h{i}"),
                    crate::telemetry::now_micros(),
                    300,
                    &mut rng,
                    || (),
                )
                .unwrap();
            assert!(r.cpupercent <= 64 * 112 * 100);
            assert!(r.stime >= r.etime);
        }
    }
}
