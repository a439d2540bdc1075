//! Synthetic quantum sampler: a parameter-sensitive exponential-family
//! distribution over particle-number sectors with injectable readout
//! noise and post-selection, standing in for circuit execution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::telemetry::BitstringSet;

use super::determinant::occupied;
use super::{HamiltonianSpec, SqdError};

/// Sampler behavior knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerModel {
    /// Inverse temperature weighting the diagonal sector energy.
    pub beta: f64,
    /// Independent per-bit readout flip probability.
    pub epsilon: f64,
    /// Post-selection retention probability.
    pub retention: f64,
    /// Shots per execution (each shot draws one alpha and one beta
    /// sector string).
    pub shots: u64,
    /// Parameter vector dimension; sector features are truncated or
    /// zero-padded to this length.
    pub p_dim: usize,
}

impl Default for SamplerModel {
    fn default() -> Self {
        SamplerModel {
            beta: 1.0,
            epsilon: 0.03,
            retention: 0.469,
            shots: 10_000,
            p_dim: 11,
        }
    }
}

impl SamplerModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(format!("epsilon {} outside [0, 1]", self.epsilon));
        }
        if !(0.0..=1.0).contains(&self.retention) {
            return Err(format!("retention {} outside [0, 1]", self.retention));
        }
        Ok(())
    }
}

/// Post-selection accounting for one execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetentionStats {
    pub shots: u64,
    pub kept: u64,
}

impl RetentionStats {
    pub fn retention(&self) -> f64 {
        if self.shots == 0 {
            0.0
        } else {
            self.kept as f64 / self.shots as f64
        }
    }
}

struct SectorTable {
    masks: Vec<u64>,
    /// phi(x) truncated/padded to p_dim.
    features: Vec<Vec<f64>>,
    /// -beta * E_diag(x), folded into the log weight.
    energy_term: Vec<f64>,
}

/// Prepared sampler for one Hamiltonian: sector spaces are enumerated once
/// and reused across parameter vectors.
pub struct Sampler {
    model: SamplerModel,
    n_orb: usize,
    alpha: SectorTable,
    beta_sector: SectorTable,
}

impl Sampler {
    pub fn new(model: SamplerModel, spec: &HamiltonianSpec) -> Result<Self, SqdError> {
        let alpha = build_table(spec, spec.n_alpha(), &model)?;
        let beta_sector = build_table(spec, spec.n_beta(), &model)?;
        Ok(Sampler {
            model,
            n_orb: spec.n_orb(),
            alpha,
            beta_sector,
        })
    }

    pub fn model(&self) -> &SamplerModel {
        &self.model
    }

    /// Draws `shots` full-width strings from p(x|theta), applies bit
    /// flips and post-selection, and returns the surviving multiset.
    /// Deterministic given (theta, seed).
    pub fn sample(&self, theta: &[f64], seed: u64) -> (BitstringSet, RetentionStats) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alpha_cdf = cumulative_weights(&self.alpha, theta, self.model.beta);
        let beta_cdf = cumulative_weights(&self.beta_sector, theta, self.model.beta);
        let full_width = 2 * self.n_orb;

        let mut kept_masks: Vec<u64> = Vec::with_capacity(self.model.shots as usize);
        for _ in 0..self.model.shots {
            let a = self.alpha.masks[draw(&alpha_cdf, &mut rng)];
            let b = self.beta_sector.masks[draw(&beta_cdf, &mut rng)];
            let mut full = a | (b << self.n_orb);
            if self.model.epsilon > 0.0 {
                for bit in 0..full_width {
                    if rng.random::<f64>() < self.model.epsilon {
                        full ^= 1u64 << bit;
                    }
                }
            }
            if rng.random::<f64>() < self.model.retention {
                kept_masks.push(full);
            }
        }

        let stats = RetentionStats {
            shots: self.model.shots,
            kept: kept_masks.len() as u64,
        };
        let rows = kept_masks
            .into_iter()
            .map(|m| crate::telemetry::Bitstring::from_mask(full_width as u16, m));
        let set = BitstringSet::multiset_from(full_width as u16, rows)
            .expect("widths are uniform by construction");
        (set, stats)
    }
}

fn build_table(
    spec: &HamiltonianSpec,
    electrons: usize,
    model: &SamplerModel,
) -> Result<SectorTable, SqdError> {
    let n = spec.n_orb();
    if electrons > n {
        return Err(SqdError::EmptySector {
            electrons,
            orbitals: n,
        });
    }
    let masks = crate::oracle::sector_masks(n, electrons);
    let mut features = Vec::with_capacity(masks.len());
    let mut energy_term = Vec::with_capacity(masks.len());
    for &mask in &masks {
        features.push(sector_features(mask, n, model.p_dim));
        energy_term.push(-model.beta * sector_diagonal_energy(mask, spec));
    }
    Ok(SectorTable {
        masks,
        features,
        energy_term,
    })
}

/// Per-orbital occupations followed by adjacent-pair products, truncated
/// or zero-padded to `p_dim`.
fn sector_features(mask: u64, n_orb: usize, p_dim: usize) -> Vec<f64> {
    let mut phi = Vec::with_capacity(2 * n_orb - 1);
    for p in 0..n_orb {
        phi.push(f64::from(u8::from(mask & (1 << p) != 0)));
    }
    for p in 0..n_orb - 1 {
        let both = mask & (1 << p) != 0 && mask & (1 << (p + 1)) != 0;
        phi.push(f64::from(u8::from(both)));
    }
    phi.resize(p_dim, 0.0);
    phi.truncate(p_dim);
    phi
}

/// Diagonal energy of a single-sector occupation: one-electron terms plus
/// same-spin Coulomb-exchange pairs.
fn sector_diagonal_energy(mask: u64, spec: &HamiltonianSpec) -> f64 {
    let occ: Vec<usize> = occupied(mask).collect();
    let mut e = 0.0;
    for &p in &occ {
        e += spec.one_electron(p, p);
    }
    for (i, &p) in occ.iter().enumerate() {
        for &q in &occ[..i] {
            e += spec.two_electron(p, p, q, q) - spec.two_electron(p, q, q, p);
        }
    }
    e
}

fn cumulative_weights(table: &SectorTable, theta: &[f64], _beta: f64) -> Vec<f64> {
    let mut log_w: Vec<f64> = table
        .features
        .iter()
        .zip(&table.energy_term)
        .map(|(phi, et)| {
            let dot: f64 = phi.iter().zip(theta).map(|(a, b)| a * b).sum();
            dot + et
        })
        .collect();
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut acc = 0.0;
    for w in log_w.iter_mut() {
        acc += (*w - max).exp();
        *w = acc;
    }
    log_w
}

fn draw<R: Rng>(cdf: &[f64], rng: &mut R) -> usize {
    let total = *cdf.last().expect("sector is non-empty");
    let target = rng.random::<f64>() * total;
    cdf.partition_point(|&c| c < target).min(cdf.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_spec() -> HamiltonianSpec {
        HamiltonianSpec::hubbard_chain(6, 3, 3, 1.0, 4.0)
    }

    #[test]
    fn noiseless_draws_have_exact_particle_numbers() {
        let model = SamplerModel {
            epsilon: 0.0,
            retention: 1.0,
            shots: 2_000,
            ..SamplerModel::default()
        };
        let sampler = Sampler::new(model, &toy_spec()).unwrap();
        let theta = vec![0.1; 11];
        let (set, stats) = sampler.sample(&theta, 77);
        assert_eq!(stats.kept, 2_000);
        assert_eq!(set.total_count(), 2_000);
        for row in set.rows() {
            let (alpha, beta) = row.split_half();
            assert_eq!(alpha.count_ones(), 3);
            assert_eq!(beta.count_ones(), 3);
        }
    }

    #[test]
    fn same_seed_reproduces_the_multiset() {
        let sampler = Sampler::new(SamplerModel::default(), &toy_spec()).unwrap();
        let theta = vec![0.05; 11];
        let (a, sa) = sampler.sample(&theta, 4242);
        let (b, sb) = sampler.sample(&theta, 4242);
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        let (c, _) = sampler.sample(&theta, 4243);
        assert_ne!(a, c);
    }

    #[test]
    fn theta_shifts_the_distribution() {
        let model = SamplerModel {
            epsilon: 0.0,
            retention: 1.0,
            shots: 4_000,
            ..SamplerModel::default()
        };
        let sampler = Sampler::new(model, &toy_spec()).unwrap();
        // Strong positive weight on orbital 5 occupation.
        let mut theta_hi = vec![0.0; 11];
        theta_hi[5] = 4.0;
        let occupancy_of_5 = |set: &BitstringSet| -> f64 {
            let mut hits = 0u64;
            for (row, count) in set.rows().iter().zip(set.counts().unwrap()) {
                if row.get(5) {
                    hits += u64::from(*count);
                }
            }
            hits as f64 / set.total_count() as f64
        };
        let (flat, _) = sampler.sample(&vec![0.0; 11], 9);
        let (biased, _) = sampler.sample(&theta_hi, 9);
        assert!(occupancy_of_5(&biased) > occupancy_of_5(&flat) + 0.2);
    }

    #[test]
    fn empty_sector_is_an_error() {
        let spec = HamiltonianSpec::hubbard_chain(3, 4, 1, 1.0, 2.0);
        assert!(matches!(
            Sampler::new(SamplerModel::default(), &spec),
            Err(SqdError::EmptySector { .. })
        ));
    }

    #[test]
    fn retention_is_binomially_concentrated() {
        let model = SamplerModel {
            retention: 0.469,
            shots: 50_000,
            ..SamplerModel::default()
        };
        let sampler = Sampler::new(model, &toy_spec()).unwrap();
        let (_, stats) = sampler.sample(&vec![0.0; 11], 123);
        assert!((stats.retention() - 0.469).abs() < 0.01);
    }
}
