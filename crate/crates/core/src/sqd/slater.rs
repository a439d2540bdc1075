//! Matrix elements of the projected Hamiltonian between determinants.
//!
//! Elements follow the two-determinant excitation rules with fermionic
//! phase factors computed per spin sector; with the alpha block ordered
//! before the beta block, cross-sector phases cancel because every beta
//! operator commutes past an even number of alpha operators in pairs.

use super::davidson::SymMatrix;
use super::determinant::{low_mask, occupied, Determinant};
use super::{HamiltonianSpec, SqdError};

/// Builds the dense symmetric subspace Hamiltonian over `basis`.
///
/// The upper triangle is computed once and mirrored, so the result is
/// symmetric to the last bit. Elements between determinants differing by
/// more than two spin orbitals are exactly zero.
pub fn build_subspace_hamiltonian(
    basis: &[Determinant],
    spec: &HamiltonianSpec,
) -> Result<SymMatrix, SqdError> {
    if basis.is_empty() {
        return Err(SqdError::EmptyBasis);
    }
    let orb_mask = low_mask(spec.n_orb());
    for det in basis {
        if det.alpha & !orb_mask != 0 || det.beta & !orb_mask != 0 {
            return Err(SqdError::BasisSpecMismatch(format!(
                "determinant uses orbitals beyond {}",
                spec.n_orb()
            )));
        }
        if det.n_alpha() as usize != spec.n_alpha() || det.n_beta() as usize != spec.n_beta() {
            return Err(SqdError::BasisSpecMismatch(format!(
                "determinant sector ({}, {}) does not match spec ({}, {})",
                det.n_alpha(),
                det.n_beta(),
                spec.n_alpha(),
                spec.n_beta()
            )));
        }
    }

    let d = basis.len();
    let mut m = SymMatrix::zeros(d);
    for a in 0..d {
        for b in a..d {
            m.set_sym(a, b, matrix_element(&basis[a], &basis[b], spec));
        }
    }
    Ok(m)
}

/// `<d1|H|d2>` for determinants in the same particle sector.
pub fn matrix_element(d1: &Determinant, d2: &Determinant, spec: &HamiltonianSpec) -> f64 {
    let exc_alpha = (d1.alpha ^ d2.alpha).count_ones() / 2;
    let exc_beta = (d1.beta ^ d2.beta).count_ones() / 2;
    match (exc_alpha, exc_beta) {
        (0, 0) => diagonal_element(d1, spec),
        (1, 0) => single_element(d1.alpha, d2.alpha, d1.beta, spec),
        (0, 1) => single_element(d1.beta, d2.beta, d1.alpha, spec),
        (2, 0) => double_same_spin(d1.alpha, d2.alpha, spec),
        (0, 2) => double_same_spin(d1.beta, d2.beta, spec),
        (1, 1) => double_opposite_spin(d1, d2, spec),
        _ => 0.0,
    }
}

fn diagonal_element(det: &Determinant, spec: &HamiltonianSpec) -> f64 {
    let alpha: Vec<usize> = occupied(det.alpha).collect();
    let beta: Vec<usize> = occupied(det.beta).collect();
    let mut e = spec.core_energy();
    for &p in alpha.iter().chain(&beta) {
        e += spec.one_electron(p, p);
    }
    for sector in [&alpha, &beta] {
        for (i, &p) in sector.iter().enumerate() {
            for &q in &sector[..i] {
                e += spec.two_electron(p, p, q, q) - spec.two_electron(p, q, q, p);
            }
        }
    }
    for &p in &alpha {
        for &q in &beta {
            e += spec.two_electron(p, p, q, q);
        }
    }
    e
}

/// Single excitation within one sector; `other` is the untouched sector's
/// occupation mask.
fn single_element(m1: u64, m2: u64, other: u64, spec: &HamiltonianSpec) -> f64 {
    let hole = (m1 & !m2).trailing_zeros() as usize;
    let part = (m2 & !m1).trailing_zeros() as usize;
    let mut sum = spec.one_electron(hole, part);
    for r in occupied(m1 & m2) {
        sum += spec.two_electron(hole, part, r, r) - spec.two_electron(hole, r, r, part);
    }
    for r in occupied(other) {
        sum += spec.two_electron(hole, part, r, r);
    }
    parity_between(m1, hole, part) * sum
}

fn double_same_spin(m1: u64, m2: u64, spec: &HamiltonianSpec) -> f64 {
    let holes = m1 & !m2;
    let parts = m2 & !m1;
    let h1 = holes.trailing_zeros() as usize;
    let h2 = (holes & (holes - 1)).trailing_zeros() as usize;
    let p1 = parts.trailing_zeros() as usize;
    let p2 = (parts & (parts - 1)).trailing_zeros() as usize;

    // Apply the lower-index excitation first; the intermediate mask fixes
    // the phase of the second one.
    let sign1 = parity_between(m1, h1, p1);
    let mid = m1 ^ (1u64 << h1) ^ (1u64 << p1);
    let sign2 = parity_between(mid, h2, p2);
    sign1 * sign2 * (spec.two_electron(h1, p1, h2, p2) - spec.two_electron(h1, p2, h2, p1))
}

fn double_opposite_spin(d1: &Determinant, d2: &Determinant, spec: &HamiltonianSpec) -> f64 {
    let ha = (d1.alpha & !d2.alpha).trailing_zeros() as usize;
    let pa = (d2.alpha & !d1.alpha).trailing_zeros() as usize;
    let hb = (d1.beta & !d2.beta).trailing_zeros() as usize;
    let pb = (d2.beta & !d1.beta).trailing_zeros() as usize;
    parity_between(d1.alpha, ha, pa)
        * parity_between(d1.beta, hb, pb)
        * spec.two_electron(ha, pa, hb, pb)
}

/// Phase from moving one electron between orbitals `a` and `b` of `mask`:
/// (-1)^(occupied orbitals strictly between them).
fn parity_between(mask: u64, a: usize, b: usize) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    if hi - lo <= 1 {
        return 1.0;
    }
    let window = ((1u64 << hi) - 1) & !((1u64 << (lo + 1)) - 1);
    if (mask & window).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rhf_diagonal_with_zero_g_is_orbital_sum() {
        let mut spec = HamiltonianSpec::new(4, 2, 2);
        spec.set_core_energy(1.25);
        for p in 0..4 {
            spec.set_one_electron(p, p, -1.0 - p as f64);
        }
        let rhf = Determinant::rhf(2, 2);
        let h = build_subspace_hamiltonian(&[rhf], &spec).unwrap();
        // Two alpha plus two beta electrons in orbitals 0 and 1.
        assert_eq!(h.get(0, 0), 1.25 + 2.0 * (-1.0) + 2.0 * (-2.0));
    }

    #[test]
    fn far_determinants_give_exact_zero() {
        let spec = HamiltonianSpec::random_spec(4, 2, 2, 3);
        let a = Determinant::new(0b0011, 0b0011);
        let b = Determinant::new(0b1100, 0b1100);
        assert_eq!(a.excitation_degree(&b), 4);
        assert_eq!(matrix_element(&a, &b, &spec), 0.0);
    }

    #[test]
    fn matrix_is_exactly_symmetric() {
        let spec = HamiltonianSpec::random_spec(4, 2, 1, 9);
        let basis = crate::oracle::sector_basis(4, 2, 1);
        let h = build_subspace_hamiltonian(&basis, &spec).unwrap();
        assert_eq!(h.max_asymmetry(), 0.0);
    }

    #[test]
    fn sector_mismatch_is_rejected() {
        let spec = HamiltonianSpec::random_spec(4, 2, 2, 1);
        let bad = Determinant::new(0b0111, 0b0011);
        assert!(matches!(
            build_subspace_hamiltonian(&[bad], &spec),
            Err(SqdError::BasisSpecMismatch(_))
        ));
    }

    #[test]
    fn parity_counts_between_occupations() {
        assert_eq!(parity_between(0b0001, 0, 1), 1.0);
        assert_eq!(parity_between(0b0011, 0, 2), -1.0); // orbital 1 in between
        assert_eq!(parity_between(0b0101, 0, 3), -1.0); // orbital 2 in between
        assert_eq!(parity_between(0b0111, 0, 3), 1.0); // orbitals 1,2 in between
        assert_eq!(parity_between(0b01011, 4, 0), 1.0); // orbitals 1,3 in between
    }
}
