//! Domain metric functions. Each is a pure function of stored raw data;
//! set-valued metrics operate on unique strings, multiplicities ignored.

use std::collections::HashSet;

use crate::sqd::Determinant;
use crate::telemetry::BitstringSet;

use super::EtlError;

const NORMALIZATION_TOL: f64 = 1e-10;

/// Number of carryover strings in `cur` that were not in `prev`.
pub fn carryover_acquisition(prev: &BitstringSet, cur: &BitstringSet) -> Result<u64, EtlError> {
    if prev.num_bits() != cur.num_bits() {
        return Err(EtlError::WidthMismatch {
            left: prev.num_bits(),
            right: cur.num_bits(),
        });
    }
    let previous = prev.unique_rows();
    let mut seen = HashSet::new();
    let mut count = 0u64;
    for row in cur.rows() {
        if seen.insert(row) && !previous.contains(row) {
            count += 1;
        }
    }
    Ok(count)
}

/// Mean pairwise Euclidean distance over the trial parameter vectors:
/// `(1/C) * sum_{i<j} d(t_i, t_j)` with `C = n(n-1)/2`.
pub fn parameter_convergence(thetas: &[Vec<f64>]) -> Result<f64, EtlError> {
    if thetas.len() < 2 {
        return Err(EtlError::TooFewVectors(thetas.len()));
    }
    let dim = thetas[0].len();
    for t in thetas {
        if t.len() != dim {
            return Err(EtlError::DimensionMismatch {
                left: dim,
                right: t.len(),
            });
        }
    }
    let n = thetas.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let sq: f64 = thetas[i]
                .iter()
                .zip(&thetas[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += sq.sqrt();
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(total / pairs)
}

/// Mean Hamming distance from each string to the reference with ones in
/// the `n_e` lowest orbitals.
pub fn hamming_to_rhf(set: &BitstringSet, n_e: usize) -> Result<f64, EtlError> {
    if set.is_empty() {
        return Err(EtlError::EmptySet);
    }
    if n_e > usize::from(set.num_bits()) {
        return Err(EtlError::ElectronCount {
            electrons: n_e,
            width: set.num_bits(),
        });
    }
    let mut reference = crate::telemetry::Bitstring::zeros(set.num_bits());
    for j in 0..n_e {
        reference = reference.with_bit(j, true);
    }
    let total: u64 = set
        .rows()
        .iter()
        .map(|row| u64::from(row.hamming(&reference)))
        .sum();
    Ok(total as f64 / set.len() as f64)
}

/// Fraction of recovered strings that already appeared in the raw sample:
/// `|raw intersect recovered| / |recovered|` over unique strings.
pub fn sample_preservation(raw: &BitstringSet, recovered: &BitstringSet) -> Result<f64, EtlError> {
    if raw.num_bits() != recovered.num_bits() {
        return Err(EtlError::WidthMismatch {
            left: raw.num_bits(),
            right: recovered.num_bits(),
        });
    }
    let recovered_unique = recovered.unique_rows();
    if recovered_unique.is_empty() {
        return Err(EtlError::EmptySet);
    }
    let raw_unique = raw.unique_rows();
    let hits = recovered_unique
        .iter()
        .filter(|row| raw_unique.contains(*row))
        .count();
    Ok(hits as f64 / recovered_unique.len() as f64)
}

/// Average occupancy of each spatial orbital in the given state:
/// `n_p = sum_i |c_i|^2 (n_{p,alpha,i} + n_{p,beta,i})`, each in [0, 2].
pub fn avg_occupancy(
    basis: &[Determinant],
    amplitudes: &[f64],
    n_orb: usize,
) -> Result<Vec<f64>, EtlError> {
    if basis.len() != amplitudes.len() {
        return Err(EtlError::DimensionMismatch {
            left: basis.len(),
            right: amplitudes.len(),
        });
    }
    let norm: f64 = amplitudes.iter().map(|c| c * c).sum();
    if (norm - 1.0).abs() > NORMALIZATION_TOL {
        return Err(EtlError::Unnormalized { norm });
    }
    let mut occupancy = vec![0.0; n_orb];
    for (det, c) in basis.iter().zip(amplitudes) {
        let w = c * c;
        for p in 0..n_orb {
            let bit = 1u64 << p;
            let mut n = 0.0;
            if det.alpha & bit != 0 {
                n += 1.0;
            }
            if det.beta & bit != 0 {
                n += 1.0;
            }
            occupancy[p] += w * n;
        }
    }
    Ok(occupancy)
}
