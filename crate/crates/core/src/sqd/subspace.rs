//! Subspace assembly from recovered sector strings plus carryover, and
//! carryover selection from the computed ground state.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::telemetry::{Bitstring, BitstringSet};

use super::determinant::Determinant;
use super::SqdError;

/// Below this product size the pair space is enumerated and shuffled;
/// above it pairs are rejection-sampled.
const PAIR_ENUM_LIMIT: usize = 65_536;

/// Lowest eigenpair of one subspace Hamiltonian.
#[derive(Debug, Clone)]
pub struct SubspaceResult {
    /// Ground state energy (Hartree).
    pub energy: f64,
    /// Normalized amplitudes over `basis`.
    pub amplitudes: Vec<f64>,
    pub basis: Vec<Determinant>,
    pub dimension: usize,
}

/// Builds a determinant basis: carryover determinants first, then
/// deduplicated alpha x beta pairs subsampled uniformly over the unique
/// sector strings, capped at `d_max`.
///
/// The sampled sequence is a pure function of `seed`, so a smaller
/// `d_max` yields a prefix (as a set, a subset) of a larger one.
/// Carryover strings pair with themselves, which assumes a closed-shell
/// sector (`n_alpha == n_beta`).
pub fn build_subspace(
    alpha: &BitstringSet,
    beta: &BitstringSet,
    carryover: &BitstringSet,
    d_max: usize,
    seed: u64,
) -> Result<Vec<Determinant>, SqdError> {
    if carryover.len() > d_max {
        return Err(SqdError::CarryoverExceedsLimit {
            carryover: carryover.len(),
            d_max,
        });
    }

    let mut basis: Vec<Determinant> = Vec::with_capacity(d_max.min(4096));
    let mut seen: HashSet<Determinant> = HashSet::new();
    for row in carryover.rows() {
        let mask = row.to_mask();
        let det = Determinant::new(mask, mask);
        if seen.insert(det) {
            basis.push(det);
        }
    }

    let n_alpha = alpha.len();
    let n_beta = beta.len();
    if n_alpha > 0 && n_beta > 0 && basis.len() < d_max {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total = n_alpha.saturating_mul(n_beta);
        if total <= PAIR_ENUM_LIMIT {
            let mut order: Vec<(u32, u32)> = (0..n_alpha)
                .flat_map(|a| (0..n_beta).map(move |b| (a as u32, b as u32)))
                .collect();
            order.shuffle(&mut rng);
            for (a, b) in order {
                if basis.len() >= d_max {
                    break;
                }
                let det = Determinant::new(
                    alpha.rows()[a as usize].to_mask(),
                    beta.rows()[b as usize].to_mask(),
                );
                if seen.insert(det) {
                    basis.push(det);
                }
            }
        } else {
            let budget = d_max.saturating_mul(20);
            for _ in 0..budget {
                if basis.len() >= d_max {
                    break;
                }
                let a = rng.random_range(0..n_alpha);
                let b = rng.random_range(0..n_beta);
                let det = Determinant::new(alpha.rows()[a].to_mask(), beta.rows()[b].to_mask());
                if seen.insert(det) {
                    basis.push(det);
                }
            }
        }
    }

    if basis.is_empty() {
        return Err(SqdError::InsufficientStrings);
    }
    Ok(basis)
}

/// Selects carryover strings from the ground state: alpha strings of the
/// heaviest determinants with weight at or above `amp_floor`, capped at
/// `k_max` determinants, ranked by weight with a numeric tie-break on the
/// (alpha, beta) strings.
pub fn select_carryover(
    result: &SubspaceResult,
    k_max: usize,
    amp_floor: f64,
    n_orb: u16,
) -> BitstringSet {
    let mut ranked: Vec<(f64, &Determinant)> = result
        .amplitudes
        .iter()
        .zip(&result.basis)
        .map(|(c, det)| (c * c, det))
        .filter(|(w, _)| *w >= amp_floor)
        .collect();
    ranked.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("weights are finite")
            .then_with(|| a.1.alpha.cmp(&b.1.alpha))
            .then_with(|| a.1.beta.cmp(&b.1.beta))
    });
    let rows = ranked
        .into_iter()
        .take(k_max)
        .map(|(_, det)| Bitstring::from_mask(n_orb, det.alpha));
    BitstringSet::unique_from(n_orb, rows).expect("uniform sector width")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(width: u16, texts: &[&str]) -> BitstringSet {
        BitstringSet::unique_from(
            width,
            texts.iter().map(|t| Bitstring::from_text(t).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn carryover_alone_is_the_exact_basis() {
        let co = strings(4, &["0011", "0101", "1001"]);
        let empty = BitstringSet::empty(4);
        let basis = build_subspace(&empty, &empty, &co, 3, 1).unwrap();
        assert_eq!(basis.len(), 3);
        for (det, row) in basis.iter().zip(co.rows()) {
            assert_eq!(det.alpha, row.to_mask());
            assert_eq!(det.beta, row.to_mask());
        }
    }

    #[test]
    fn union_contains_carryover() {
        let alpha = strings(4, &["0011", "0101", "0110"]);
        let beta = strings(4, &["0011", "1010"]);
        let co = strings(4, &["1100"]);
        let basis = build_subspace(&alpha, &beta, &co, 100, 5).unwrap();
        assert!(basis.contains(&Determinant::new(0b1100, 0b1100)));
        assert_eq!(basis.len(), 1 + 3 * 2);
    }

    #[test]
    fn nested_budgets_nest_as_sets() {
        let alpha = strings(6, &["000111", "001011", "001101", "010011", "100011"]);
        let beta = alpha.clone();
        let co = strings(6, &["000111"]);
        let small: HashSet<_> = build_subspace(&alpha, &beta, &co, 7, 99)
            .unwrap()
            .into_iter()
            .collect();
        let large: HashSet<_> = build_subspace(&alpha, &beta, &co, 19, 99)
            .unwrap()
            .into_iter()
            .collect();
        assert_eq!(small.len(), 7);
        assert_eq!(large.len(), 19);
        assert!(small.is_subset(&large));
    }

    #[test]
    fn deterministic_given_seed() {
        let alpha = strings(6, &["000111", "001011", "001101", "010011"]);
        let beta = alpha.clone();
        let co = BitstringSet::empty(6);
        let a = build_subspace(&alpha, &beta, &co, 9, 7).unwrap();
        let b = build_subspace(&alpha, &beta, &co, 9, 7).unwrap();
        assert_eq!(a, b);
        let c = build_subspace(&alpha, &beta, &co, 9, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_inputs_are_an_error() {
        let empty = BitstringSet::empty(4);
        assert!(matches!(
            build_subspace(&empty, &empty, &empty, 10, 0),
            Err(SqdError::InsufficientStrings)
        ));
        let co = strings(4, &["0011", "0101"]);
        assert!(matches!(
            build_subspace(&empty, &empty, &co, 1, 0),
            Err(SqdError::CarryoverExceedsLimit { .. })
        ));
    }

    #[test]
    fn single_determinant_state_returns_its_alpha_string() {
        let result = SubspaceResult {
            energy: -1.0,
            amplitudes: vec![1.0],
            basis: vec![Determinant::new(0b0101, 0b0011)],
            dimension: 1,
        };
        let co = select_carryover(&result, 16, 1e-6, 4);
        assert_eq!(co.len(), 1);
        assert_eq!(co.rows()[0].to_string(), "0101");
    }

    #[test]
    fn uniform_weights_take_lexicographically_smallest() {
        let basis: Vec<Determinant> = (0..10u64)
            .map(|i| Determinant::new(0b0011 + (i << 2), 0b0011))
            .collect();
        let amp = 1.0 / (10f64).sqrt();
        let result = SubspaceResult {
            energy: 0.0,
            amplitudes: vec![amp; 10],
            basis: basis.clone(),
            dimension: 10,
        };
        let co = select_carryover(&result, 4, 1e-6, 8);
        assert_eq!(co.len(), 4);
        let mut expected: Vec<u64> = basis.iter().map(|d| d.alpha).collect();
        expected.sort_unstable();
        for (row, want) in co.rows().iter().zip(&expected[..4]) {
            assert_eq!(row.to_mask(), *want);
        }
    }

    #[test]
    fn amp_floor_filters_and_output_stays_within_basis() {
        let result = SubspaceResult {
            energy: 0.0,
            amplitudes: vec![0.999, 0.04, 1e-9],
            basis: vec![
                Determinant::new(0b0011, 0b0011),
                Determinant::new(0b0110, 0b0011),
                Determinant::new(0b1100, 0b0011),
            ],
            dimension: 3,
        };
        let co = select_carryover(&result, 16, 1e-6, 4);
        assert_eq!(co.len(), 2);
        for row in co.rows() {
            assert!(result.basis.iter().any(|d| d.alpha == row.to_mask()));
        }
    }
}
