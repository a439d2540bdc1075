//! The closed-loop workload: per generation, every population mutates its
//! parameters, samples bitstrings through the simulated QPU queue,
//! recovers configurations, diagonalizes its subspace through the
//! simulated batch queue and greedily accepts or rejects the trial. The
//! best population's carryover seeds every subspace of the next
//! generation.
//!
//! All randomness comes from per-(generation, population) streams derived
//! from the master seed, so populations run in parallel and the numerical
//! results are reproducible regardless of scheduling; queueing randomness
//! feeds only the synthetic job timeline, never the numerics.

use chrono::{DateTime, TimeZone, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::client::{ArtifactPayload, RunHandle};
use crate::sched::{qpu_row, qstat_row, Scheduler, SchedulerModel};
use crate::telemetry::{kind, BitstringSet, PayloadValue, TelemetryLevel, TelemetryRecord};

use super::de::{de_crossover, de_mutate, de_select, DEConfig, ParameterVector};
use super::recovery::{recover_configurations, split_spin_sectors};
use super::sampler::{Sampler, SamplerModel};
use super::seeds::{mix_seed, salt};
use super::slater::build_subspace_hamiltonian;
use super::subspace::{build_subspace, select_carryover, SubspaceResult};
use super::{ground_state, HamiltonianSpec, SqdError};

/// Everything the loop needs beyond the Hamiltonian itself.
#[derive(Debug, Clone)]
pub struct WorkloadConfig {
    pub de: DEConfig,
    pub sampler: SamplerModel,
    pub scheduler: SchedulerModel,
    pub d_max: usize,
    pub k_max: usize,
    pub amp_floor: f64,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            de: DEConfig::default(),
            sampler: SamplerModel::default(),
            scheduler: SchedulerModel::default(),
            d_max: 320,
            k_max: 64,
            amp_floor: 1e-6,
            solver_tol: 1e-8,
            solver_max_iter: 200,
        }
    }
}

/// Final state of a completed loop.
#[derive(Debug, Clone)]
pub struct LoopOutcome {
    /// Accepted energy per population after the last generation.
    pub final_energies: Vec<f64>,
    pub best_energy: f64,
    pub best_population: u32,
    /// Trial energies, indexed `[generation][population]`.
    pub trial_energies: Vec<Vec<f64>>,
    /// Accepted energies after each generation, same indexing.
    pub accepted_energies: Vec<Vec<f64>>,
    pub qpu_seconds_used: f64,
    pub hpc_tokens_used: f64,
}

/// Fixed origin of the synthetic job timeline; job instants must not
/// depend on the wall clock or runs would not be reproducible.
fn sim_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap()
}

struct PopulationStep {
    trial_energy: f64,
    accepted_energy: f64,
    accepted_theta: Vec<f64>,
    carryover: BitstringSet,
    result: SubspaceResult,
    clock: DateTime<Utc>,
}

/// Runs the full loop, emitting all telemetry through `handle`. Telemetry
/// failures are logged and never abort the workload; numerical and quota
/// failures propagate.
pub fn run_closed_loop(
    spec: &HamiltonianSpec,
    config: &WorkloadConfig,
    handle: &RunHandle,
) -> Result<LoopOutcome, SqdError> {
    config.de.validate()?;
    let n_orb = spec.n_orb() as u16;
    let n_pop = config.de.n_pop;
    let master = config.de.master_seed;
    let sampler = Sampler::new(config.sampler.clone(), spec)?;
    let scheduler = Scheduler::new(config.scheduler.clone());
    let closed_shell = spec.n_alpha() == spec.n_beta();
    if !closed_shell {
        log::warn!("open-shell sector: carryover seeding disabled");
    }

    emit_run_params(handle, spec, config);

    // Population 0 starts at the zero vector; the rest perturb it.
    let mut population: Vec<ParameterVector> = (0..n_pop)
        .map(|i| {
            let theta = if i == 0 {
                vec![0.0; config.sampler.p_dim]
            } else {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(mix_seed(master, salt::INIT, 0, i as u64));
                let normal = Normal::new(0.0, 0.1).expect("valid sigma");
                (0..config.sampler.p_dim)
                    .map(|_| normal.sample(&mut rng))
                    .collect()
            };
            ParameterVector::new(theta, i as u32, 0)
        })
        .collect();

    let mut accepted_energy: Vec<Option<f64>> = vec![None; n_pop];
    let mut carryover_best = BitstringSet::empty(n_orb);
    let mut prior = rhf_prior(spec);
    let mut clocks: Vec<DateTime<Utc>> = vec![sim_epoch(); n_pop];

    let mut trial_history: Vec<Vec<f64>> = Vec::with_capacity(config.de.generations as usize);
    let mut accepted_history: Vec<Vec<f64>> = Vec::with_capacity(config.de.generations as usize);

    for g in 0..config.de.generations {
        // Mutation needs the accepted population and its best member.
        let best_index = accepted_energy
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.map(|e| (i, e)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite energies"))
            .map(|(i, _)| i)
            .unwrap_or(0);

        let mut trials: Vec<Vec<f64>> = Vec::with_capacity(n_pop);
        for i in 0..n_pop {
            if g == 0 {
                trials.push(population[i].theta.clone());
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(master, salt::DE, g as u64, i as u64));
            let mutant = de_mutate(&population, best_index, i, config.de.f, &mut rng)?;
            trials.push(de_crossover(&population[i].theta, &mutant, config.de.cr, &mut rng)?);
        }

        let mut slots: Vec<Option<Result<PopulationStep, SqdError>>> =
            (0..n_pop).map(|_| None).collect();
        std::thread::scope(|scope| {
            let mut joins = Vec::with_capacity(n_pop);
            for (i, trial) in trials.iter().enumerate() {
                let sampler = &sampler;
                let scheduler = &scheduler;
                let carryover_best = &carryover_best;
                let prior = &prior;
                let handle = handle.clone();
                let prev_accept = accepted_energy[i];
                let prev_theta = population[i].theta.clone();
                let clock = clocks[i];
                joins.push(scope.spawn(move || {
                    evaluate_population(
                        spec,
                        config,
                        sampler,
                        scheduler,
                        &handle,
                        g,
                        i as u32,
                        trial,
                        prev_accept,
                        prev_theta,
                        carryover_best,
                        prior,
                        clock,
                        closed_shell,
                    )
                }));
            }
            for (i, join) in joins.into_iter().enumerate() {
                slots[i] = Some(join.join().expect("population thread does not panic"));
            }
        });

        let mut steps = Vec::with_capacity(n_pop);
        for slot in slots {
            steps.push(slot.expect("slot filled")?);
        }

        // Generation barrier: share the winning carryover and occupancy.
        let winner = steps
            .iter()
            .enumerate()
            .min_by(|a, b| {
                a.1.trial_energy
                    .partial_cmp(&b.1.trial_energy)
                    .expect("finite energies")
            })
            .map(|(i, _)| i)
            .expect("at least one population");

        let occupancy = crate::etl::avg_occupancy(
            &steps[winner].result.basis,
            &steps[winner].result.amplitudes,
            spec.n_orb(),
        )
        .expect("solver returns a normalized state");

        if closed_shell {
            carryover_best = steps[winner].carryover.clone();
        }
        let _ = handle.put_artifact(
            "carryover",
            g,
            None,
            ArtifactPayload::Bitstrings(&steps[winner].carryover),
        );
        let _ = handle.put_artifact("avg_occupancy", g, None, ArtifactPayload::Vector(&occupancy));
        prior = prior_from_occupancy(&occupancy);

        // Populations resynchronize on the shared carryover.
        let barrier = steps
            .iter()
            .map(|s| s.clock)
            .max()
            .expect("at least one population");
        clocks = vec![barrier; n_pop];

        trial_history.push(steps.iter().map(|s| s.trial_energy).collect());
        accepted_history.push(steps.iter().map(|s| s.accepted_energy).collect());
        for (i, step) in steps.into_iter().enumerate() {
            accepted_energy[i] = Some(step.accepted_energy);
            population[i] = ParameterVector::new(step.accepted_theta, i as u32, g + 1);
        }
    }

    let final_energies: Vec<f64> = accepted_energy
        .iter()
        .map(|e| e.expect("every population evaluated"))
        .collect();
    let (best_population, best_energy) = final_energies
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite energies"))
        .map(|(i, e)| (i as u32, *e))
        .expect("non-empty population");

    Ok(LoopOutcome {
        best_energy,
        best_population,
        final_energies,
        trial_energies: trial_history,
        accepted_energies: accepted_history,
        qpu_seconds_used: config.scheduler.quota_qpu_seconds - scheduler.qpu_seconds_remaining(),
        hpc_tokens_used: config.scheduler.quota_hpc_tokens - scheduler.hpc_tokens_remaining(),
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate_population(
    spec: &HamiltonianSpec,
    config: &WorkloadConfig,
    sampler: &Sampler,
    scheduler: &Scheduler,
    handle: &RunHandle,
    g: u32,
    i: u32,
    trial: &[f64],
    prev_accept: Option<f64>,
    prev_theta: Vec<f64>,
    carryover_best: &BitstringSet,
    prior: &[f64],
    mut clock: DateTime<Utc>,
    closed_shell: bool,
) -> Result<PopulationStep, SqdError> {
    let master = config.de.master_seed;
    let _ = handle.put_artifact("ucj_parameter", g, Some(i), ArtifactPayload::Vector(trial));

    // Quantum primitive execution through the QPU queue.
    let mut qpu_rng =
        ChaCha8Rng::seed_from_u64(mix_seed(master, salt::SCHED_QPU, g.into(), i.into()));
    let sample_seed = mix_seed(master, salt::SAMPLE, g.into(), i.into());
    let ((raw, retention), qpu_record) = handle.try_record_task("run_primitive", || {
        scheduler.submit_qpu(
            format!("qpu-g{g}-p{i}"),
            clock,
            config.sampler.shots,
            &mut qpu_rng,
            || sampler.sample(trial, sample_seed),
        )
    })?;
    clock = qpu_record.ended_at;
    let _ = handle.log_job_row(kind::QPU_JOB, qpu_row(&qpu_record), Some(g), Some(i));
    let _ = handle.put_artifact("raw_bitstrings", g, Some(i), ArtifactPayload::Bitstrings(&raw));

    // Configuration recovery on the client machine.
    let recovered = handle.try_record_task("recover_configurations", || {
        recover_configurations(&raw, spec.n_alpha() as u32, spec.n_beta() as u32, prior)
    })?;
    let _ = handle.put_artifact(
        "recovered_bitstrings",
        g,
        Some(i),
        ArtifactPayload::Bitstrings(&recovered),
    );

    let (alpha, beta) = split_spin_sectors(&recovered)?;
    let subspace_seed = mix_seed(master, salt::SUBSPACE, g.into(), i.into());
    let carryover_seed = if closed_shell {
        carryover_best
    } else {
        // Open-shell sectors cannot reuse alpha strings for both spins.
        &BitstringSet::empty(alpha.num_bits())
    };
    let basis = build_subspace(&alpha, &beta, carryover_seed, config.d_max, subspace_seed)?;

    let alphadets = BitstringSet::unique_from(
        spec.n_orb() as u16,
        basis.iter().map(|d| d.alpha_string(spec.n_orb() as u16)),
    )
    .expect("uniform sector width");
    let _ = handle.put_artifact("alphadets", g, Some(i), ArtifactPayload::Bitstrings(&alphadets));

    // Subspace diagonalization through the batch queue.
    let mut hpc_rng =
        ChaCha8Rng::seed_from_u64(mix_seed(master, salt::SCHED_HPC, g.into(), i.into()));
    let (solve, hpc_record) = handle.try_record_task("solve_eigenstate", || {
        scheduler.submit_hpc(
            format!("hpc-g{g}-p{i}"),
            clock,
            basis.len(),
            &mut hpc_rng,
            || {
                build_subspace_hamiltonian(&basis, spec)
                    .and_then(|h| ground_state(&h, config.solver_tol, config.solver_max_iter))
            },
        )
    })?;
    clock = hpc_record.ended_at();
    let _ = handle.log_job_row(kind::HPC_JOB, qstat_row(&hpc_record), Some(g), Some(i));
    let (trial_energy, amplitudes) = solve?;

    let result = SubspaceResult {
        energy: trial_energy,
        amplitudes,
        dimension: basis.len(),
        basis,
    };
    let carryover = select_carryover(&result, config.k_max, config.amp_floor, spec.n_orb() as u16);

    let (accepted_energy, accepted_theta) = match prev_accept {
        None => (trial_energy, trial.to_vec()),
        Some(prev) => {
            if de_select(prev, trial_energy)? {
                (trial_energy, trial.to_vec())
            } else {
                (prev, prev_theta)
            }
        }
    };

    let mut record = TelemetryRecord::new(
        handle.run_id(),
        "sqd_result",
        TelemetryLevel::L4,
        kind::SQD_RESULT,
        crate::telemetry::now_micros(),
    )
    .with_iteration(g)
    .with_payload("trial_energy", trial_energy)
    .with_payload("accepted_energy", accepted_energy)
    .with_payload("subspace_dim", PayloadValue::Int(result.dimension as i64))
    .with_payload("empirical_retention", retention.retention());
    record.population = Some(i);
    handle.emit_record(record);

    Ok(PopulationStep {
        trial_energy,
        accepted_energy,
        accepted_theta,
        carryover,
        result,
        clock,
    })
}

fn emit_run_params(handle: &RunHandle, spec: &HamiltonianSpec, config: &WorkloadConfig) {
    let record = TelemetryRecord::new(
        handle.run_id(),
        "run_params",
        TelemetryLevel::L4,
        kind::RUN_PARAMS,
        crate::telemetry::now_micros(),
    )
    .with_payload("n_orb", PayloadValue::Int(spec.n_orb() as i64))
    .with_payload("n_alpha", PayloadValue::Int(spec.n_alpha() as i64))
    .with_payload("n_beta", PayloadValue::Int(spec.n_beta() as i64))
    .with_payload("p_dim", PayloadValue::Int(config.sampler.p_dim as i64))
    .with_payload("n_pop", PayloadValue::Int(config.de.n_pop as i64))
    .with_payload("generations", PayloadValue::Int(i64::from(config.de.generations)))
    .with_payload("d_max", PayloadValue::Int(config.d_max as i64))
    .with_payload("k_max", PayloadValue::Int(config.k_max as i64))
    .with_payload("shots", PayloadValue::Int(config.sampler.shots as i64))
    .with_payload("quota_qpu_seconds", config.scheduler.quota_qpu_seconds)
    .with_payload("quota_hpc_tokens", config.scheduler.quota_hpc_tokens);
    handle.emit_record(record);
}

/// Reference occupancy prior: filled lowest orbitals per spin sector.
fn rhf_prior(spec: &HamiltonianSpec) -> Vec<f64> {
    let n = spec.n_orb();
    let mut prior = vec![0.0; 2 * n];
    for p in 0..spec.n_alpha() {
        prior[p] = 1.0;
    }
    for p in 0..spec.n_beta() {
        prior[n + p] = 1.0;
    }
    prior
}

/// Next-iteration prior from a winner's spatial occupancy (each in
/// [0, 2]), replicated over both spin sectors.
fn prior_from_occupancy(occupancy: &[f64]) -> Vec<f64> {
    let spatial: Vec<f64> = occupancy.iter().map(|o| (o / 2.0).clamp(0.0, 1.0)).collect();
    let mut prior = Vec::with_capacity(2 * spatial.len());
    prior.extend_from_slice(&spatial);
    prior.extend_from_slice(&spatial);
    prior
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn priors_have_sector_layout() {
        let spec = HamiltonianSpec::hubbard_chain(4, 2, 1, 1.0, 2.0);
        let prior = rhf_prior(&spec);
        assert_eq!(prior, vec![1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);

        let from_occ = prior_from_occupancy(&[2.0, 1.0, 0.5, 0.0]);
        assert_eq!(from_occ, vec![1.0, 0.5, 0.25, 0.0, 1.0, 0.5, 0.25, 0.0]);
    }
}
