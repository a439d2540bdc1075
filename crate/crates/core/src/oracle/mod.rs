//! Independent reference implementations for verification.
//!
//! Everything here deliberately avoids the production code paths it is
//! used to check: the Hamiltonian oracle applies elementary creation and
//! annihilation operators instead of excitation rules, and the set-metric
//! oracles use quadratic membership scans instead of hashing. Both the
//! test suites and `qcobs verify` run these at full precision.

use crate::sqd::{Determinant, HamiltonianSpec, SymMatrix};
use crate::telemetry::{Bitstring, BitstringSet};

/// All sector masks of `n_orb` orbitals holding `n_e` electrons,
/// ascending.
pub fn sector_masks(n_orb: usize, n_e: usize) -> Vec<u64> {
    let mut out = Vec::new();
    if n_e > n_orb {
        return out;
    }
    let limit: u64 = 1u64 << n_orb;
    for mask in 0..limit {
        if mask.count_ones() as usize == n_e {
            out.push(mask);
        }
    }
    out
}

/// Full determinant basis of one particle sector, beta-major.
pub fn sector_basis(n_orb: usize, n_alpha: usize, n_beta: usize) -> Vec<Determinant> {
    let alphas = sector_masks(n_orb, n_alpha);
    let betas = sector_masks(n_orb, n_beta);
    let mut out = Vec::with_capacity(alphas.len() * betas.len());
    for &b in &betas {
        for &a in &alphas {
            out.push(Determinant::new(a, b));
        }
    }
    out
}

// Spin-orbital layout: alpha orbital p at bit p, beta orbital p at bit
// n_orb + p of a combined mask.

fn annihilate(mask: u128, spin_orbital: usize) -> Option<(u128, f64)> {
    let bit = 1u128 << spin_orbital;
    if mask & bit == 0 {
        return None;
    }
    let below = (mask & (bit - 1)).count_ones();
    let sign = if below % 2 == 0 { 1.0 } else { -1.0 };
    Some((mask ^ bit, sign))
}

fn create(mask: u128, spin_orbital: usize) -> Option<(u128, f64)> {
    let bit = 1u128 << spin_orbital;
    if mask & bit != 0 {
        return None;
    }
    let below = (mask & (bit - 1)).count_ones();
    let sign = if below % 2 == 0 { 1.0 } else { -1.0 };
    Some((mask | bit, sign))
}

fn combined(det: &Determinant, n_orb: usize) -> u128 {
    u128::from(det.alpha) | (u128::from(det.beta) << n_orb)
}

/// Applies the full second-quantized Hamiltonian to one determinant,
/// returning the resulting coefficient map over combined masks.
fn apply_hamiltonian(
    det: &Determinant,
    spec: &HamiltonianSpec,
) -> std::collections::HashMap<u128, f64> {
    let n = spec.n_orb();
    let x = combined(det, n);
    let mut acc: std::collections::HashMap<u128, f64> = std::collections::HashMap::new();
    *acc.entry(x).or_insert(0.0) += spec.core_energy();

    // sum_pq h_pq a+_{p sigma} a_{q sigma}
    for spin in 0..2usize {
        for p in 0..n {
            for q in 0..n {
                let t = spec.one_electron(p, q);
                if t == 0.0 {
                    continue;
                }
                if let Some((m1, s1)) = annihilate(x, q + spin * n) {
                    if let Some((m2, s2)) = create(m1, p + spin * n) {
                        *acc.entry(m2).or_insert(0.0) += t * s1 * s2;
                    }
                }
            }
        }
    }

    // 1/2 sum (pq|rs) a+_{p sigma} a+_{r tau} a_{s tau} a_{q sigma},
    // operators applied rightmost first.
    for sigma in 0..2usize {
        for tau in 0..2usize {
            for p in 0..n {
                for q in 0..n {
                    for r in 0..n {
                        for s in 0..n {
                            let v = spec.two_electron(p, q, r, s);
                            if v == 0.0 {
                                continue;
                            }
                            let Some((m1, s1)) = annihilate(x, q + sigma * n) else {
                                continue;
                            };
                            let Some((m2, s2)) = annihilate(m1, s + tau * n) else {
                                continue;
                            };
                            let Some((m3, s3)) = create(m2, r + tau * n) else {
                                continue;
                            };
                            let Some((m4, s4)) = create(m3, p + sigma * n) else {
                                continue;
                            };
                            *acc.entry(m4).or_insert(0.0) += 0.5 * v * s1 * s2 * s3 * s4;
                        }
                    }
                }
            }
        }
    }
    acc
}

/// Dense Hamiltonian matrix built purely by operator algebra.
pub fn hamiltonian_matrix_by_operator(basis: &[Determinant], spec: &HamiltonianSpec) -> SymMatrix {
    let n = spec.n_orb();
    let d = basis.len();
    let index: std::collections::HashMap<u128, usize> = basis
        .iter()
        .enumerate()
        .map(|(i, det)| (combined(det, n), i))
        .collect();
    let mut m = SymMatrix::zeros(d);
    for (b, det) in basis.iter().enumerate() {
        for (mask, coeff) in apply_hamiltonian(det, spec) {
            if let Some(&a) = index.get(&mask) {
                // Column b holds the expansion of H applied to basis_b.
                let current = m.get(a, b);
                m.set_raw(a, b, current + coeff);
            }
        }
    }
    m
}

/// Lowest eigenvalue by direct dense diagonalization.
pub fn dense_ground_energy(m: &SymMatrix) -> f64 {
    let dm = nalgebra::DMatrix::from_row_slice(m.n(), m.n(), m.as_slice());
    dm.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// |cur \ prev| counting unique rows, by linear membership scans.
pub fn set_difference_count_naive(cur: &BitstringSet, prev: &BitstringSet) -> u64 {
    let mut count = 0u64;
    for (i, row) in cur.rows().iter().enumerate() {
        if cur.rows()[..i].contains(row) {
            continue;
        }
        if !prev.rows().contains(row) {
            count += 1;
        }
    }
    count
}

/// |unique(raw) intersect unique(recovered)| / |unique(recovered)|.
pub fn intersection_ratio_naive(raw: &BitstringSet, recovered: &BitstringSet) -> f64 {
    let mut rec_unique: Vec<&Bitstring> = Vec::new();
    for row in recovered.rows() {
        if !rec_unique.contains(&row) {
            rec_unique.push(row);
        }
    }
    let mut hits = 0usize;
    for row in &rec_unique {
        if raw.rows().contains(*row) {
            hits += 1;
        }
    }
    hits as f64 / rec_unique.len() as f64
}

/// Mean pairwise Euclidean distance over all unordered pairs.
pub fn mean_pairwise_distance_naive(vectors: &[Vec<f64>]) -> f64 {
    let n = vectors.len();
    let mut total = 0.0;
    let mut pairs = 0u64;
    for i in 0..n {
        for j in (i + 1)..n {
            let mut sq = 0.0;
            for (a, b) in vectors[i].iter().zip(&vectors[j]) {
                sq += (a - b) * (a - b);
            }
            total += sq.sqrt();
            pairs += 1;
        }
    }
    total / pairs as f64
}

/// Mean Hamming distance to the filled-lowest-orbitals reference, computed
/// on the textual rendering.
pub fn mean_hamming_to_reference_naive(set: &BitstringSet, n_e: usize) -> f64 {
    let width = usize::from(set.num_bits());
    let reference: String = "0".repeat(width - n_e) + &"1".repeat(n_e);
    let mut total = 0u64;
    for row in set.rows() {
        let text = row.to_string();
        total += text
            .chars()
            .zip(reference.chars())
            .filter(|(a, b)| a != b)
            .count() as u64;
    }
    total as f64 / set.len() as f64
}

/// Splits full-width strings and deduplicates per sector by linear scans,
/// returning textual sector strings.
pub fn split_sectors_naive(set: &BitstringSet) -> (Vec<String>, Vec<String>) {
    let width = usize::from(set.num_bits());
    let half = width / 2;
    let mut alpha: Vec<String> = Vec::new();
    let mut beta: Vec<String> = Vec::new();
    for row in set.rows() {
        let text = row.to_string();
        // The textual form prints high orbitals first: beta half precedes
        // the alpha half.
        let beta_text = text[..half].to_string();
        let alpha_text = text[half..].to_string();
        if !alpha.contains(&alpha_text) {
            alpha.push(alpha_text);
        }
        if !beta.contains(&beta_text) {
            beta.push(beta_text);
        }
    }
    alpha.sort();
    beta.sort();
    (alpha, beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sector_enumeration_counts_binomials() {
        assert_eq!(sector_masks(6, 3).len(), 20);
        assert_eq!(sector_masks(4, 0), vec![0]);
        assert!(sector_masks(3, 4).is_empty());
        assert_eq!(sector_basis(6, 3, 3).len(), 400);
    }

    #[test]
    fn operator_oracle_is_hermitian_on_random_integrals() {
        let spec = HamiltonianSpec::random_spec(3, 2, 1, 21);
        let basis = sector_basis(3, 2, 1);
        let m = hamiltonian_matrix_by_operator(&basis, &spec);
        assert!(m.max_asymmetry() < 1e-12);
    }
}
