//! Configuration recovery: prior-guided repair of noise-corrupted
//! bitstrings to the exact per-sector particle number, and the spin-sector
//! split.

use crate::telemetry::{Bitstring, BitstringSet};

use super::SqdError;

/// Repairs one sector string to exactly `target_ones` occupied orbitals.
///
/// Strings that already match pass through unchanged. Excess electrons are
/// removed from occupied orbitals with the lowest prior; deficits are
/// filled at unoccupied orbitals with the highest prior. Ties break toward
/// the lowest orbital index. Priors are clamped into [0, 1].
pub fn fix_sector(row: &Bitstring, target_ones: u32, prior: &[f64]) -> Bitstring {
    debug_assert_eq!(prior.len(), usize::from(row.width()));
    let current = row.count_ones();
    if current == target_ones {
        return row.clone();
    }
    let clamp = |p: f64| p.clamp(0.0, 1.0);
    let mut fixed = row.clone();
    if current > target_ones {
        let mut occupied: Vec<usize> = row.ones().collect();
        occupied.sort_by(|&a, &b| {
            clamp(prior[a])
                .partial_cmp(&clamp(prior[b]))
                .expect("priors are finite")
                .then(a.cmp(&b))
        });
        for &orbital in occupied.iter().take((current - target_ones) as usize) {
            fixed = fixed.with_bit(orbital, false);
        }
    } else {
        let mut empty: Vec<usize> =
            (0..usize::from(row.width())).filter(|&j| !row.get(j)).collect();
        empty.sort_by(|&a, &b| {
            clamp(prior[b])
                .partial_cmp(&clamp(prior[a]))
                .expect("priors are finite")
                .then(a.cmp(&b))
        });
        for &orbital in empty.iter().take((target_ones - current) as usize) {
            fixed = fixed.with_bit(orbital, true);
        }
    }
    fixed
}

/// Repairs every full-width string to the exact (n_alpha, n_beta) sector
/// and returns the deduplicated recovered set.
///
/// `prior` holds one occupancy estimate in [0, 1] per spin orbital: the
/// alpha sector reads entries `[0, n)`, the beta sector `[n, 2n)`.
pub fn recover_configurations(
    raw: &BitstringSet,
    n_alpha: u32,
    n_beta: u32,
    prior: &[f64],
) -> Result<BitstringSet, SqdError> {
    let width = raw.num_bits();
    if width % 2 != 0 {
        return Err(SqdError::OddWidth(width));
    }
    if prior.len() != usize::from(width) {
        return Err(SqdError::PriorLength {
            expected: usize::from(width),
            actual: prior.len(),
        });
    }
    let half = width / 2;
    let (alpha_prior, beta_prior) = prior.split_at(usize::from(half));

    let recovered = raw.rows().iter().map(|row| {
        let (alpha, beta) = row.split_half();
        let alpha_fixed = fix_sector(&alpha, n_alpha, alpha_prior);
        let beta_fixed = fix_sector(&beta, n_beta, beta_prior);
        Bitstring::concat(&alpha_fixed, &beta_fixed)
    });
    BitstringSet::unique_from(width, recovered)
        .map_err(|_| SqdError::OddWidth(width))
}

/// Splits recovered full-width strings into per-sector unique sets
/// (alpha from the low half, beta from the high half).
pub fn split_spin_sectors(set: &BitstringSet) -> Result<(BitstringSet, BitstringSet), SqdError> {
    let width = set.num_bits();
    if width % 2 != 0 {
        return Err(SqdError::OddWidth(width));
    }
    let half = width / 2;
    let mut alpha = Vec::with_capacity(set.len());
    let mut beta = Vec::with_capacity(set.len());
    for row in set.rows() {
        let (a, b) = row.split_half();
        alpha.push(a);
        beta.push(b);
    }
    let alpha_set = BitstringSet::unique_from(half, alpha).expect("uniform half width");
    let beta_set = BitstringSet::unique_from(half, beta).expect("uniform half width");
    Ok((alpha_set, beta_set))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn excess_flips_lowest_prior_occupied() {
        // Raw 1110 needs two electrons; priors favor dropping orbital 2.
        let raw = Bitstring::from_text("1110").unwrap();
        let fixed = fix_sector(&raw, 2, &[0.9, 0.9, 0.1, 0.5]);
        assert_eq!(fixed.to_string(), "1010");
    }

    #[test]
    fn deficit_fills_highest_prior_empty() {
        let raw = Bitstring::from_text("0001").unwrap();
        let fixed = fix_sector(&raw, 2, &[0.2, 0.3, 0.8, 0.1]);
        assert_eq!(fixed.to_string(), "0101");
    }

    #[test]
    fn correct_strings_pass_through() {
        let raw = Bitstring::from_text("0101").unwrap();
        assert_eq!(fix_sector(&raw, 2, &[0.5; 4]), raw);
    }

    #[test]
    fn ties_break_to_lowest_orbital() {
        // Two excess electrons, all priors equal: drop orbitals 0 and 1.
        let raw = Bitstring::from_text("1111").unwrap();
        let fixed = fix_sector(&raw, 2, &[0.5; 4]);
        assert_eq!(fixed.to_string(), "1100");
    }

    #[test]
    fn recovery_is_identity_on_clean_sets() {
        let rows = vec![
            Bitstring::from_text("000111000111").unwrap(),
            Bitstring::from_text("001011001011").unwrap(),
        ];
        let raw = BitstringSet::multiset_from(12, rows.clone()).unwrap();
        let prior = vec![0.5; 12];
        let recovered = recover_configurations(&raw, 3, 3, &prior).unwrap();
        assert_eq!(recovered.len(), 2);
        for row in &rows {
            assert!(recovered.rows().contains(row));
        }
    }

    #[test]
    fn recovery_fixes_both_sectors_and_dedups() {
        // One bit dropped in the alpha half, one added in the beta half;
        // with an RHF-shaped prior both repair to the reference string.
        let rows = vec![
            Bitstring::from_text("000111000011").unwrap(),
            Bitstring::from_text("001111000111").unwrap(),
        ];
        let raw = BitstringSet::multiset_from(12, rows).unwrap();
        let prior = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        let recovered = recover_configurations(&raw, 3, 3, &prior).unwrap();
        assert_eq!(recovered.len(), 1);
        assert_eq!(recovered.rows()[0].to_string(), "000111000111");
    }

    #[test]
    fn split_separates_and_dedups_sectors() {
        let rows = vec![
            Bitstring::from_text("101010000111").unwrap(),
            Bitstring::from_text("101010000111").unwrap(),
            Bitstring::from_text("000111000111").unwrap(),
        ];
        let set = BitstringSet::multiset_from(12, rows).unwrap();
        let (alpha, beta) = split_spin_sectors(&set).unwrap();
        assert_eq!(alpha.len(), 1); // both rows share the alpha half
        assert_eq!(alpha.rows()[0].to_string(), "000111");
        assert_eq!(beta.len(), 2);
        assert!(!alpha.has_duplicate_rows() && !beta.has_duplicate_rows());
    }

    #[test]
    fn odd_width_is_rejected() {
        let set = BitstringSet::new(5, vec![Bitstring::from_text("10101").unwrap()]).unwrap();
        assert!(matches!(
            split_spin_sectors(&set),
            Err(SqdError::OddWidth(5))
        ));
    }
}
