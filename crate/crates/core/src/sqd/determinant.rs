//! Electronic configurations as per-sector occupation masks.

use crate::telemetry::Bitstring;

/// One determinant: alpha and beta occupation masks over spatial orbitals.
/// The full-string convention places the alpha sector in bits
/// `[0, n_orb)` and the beta sector in bits `[n_orb, 2*n_orb)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Determinant {
    pub alpha: u64,
    pub beta: u64,
}

impl Determinant {
    pub fn new(alpha: u64, beta: u64) -> Self {
        Determinant { alpha, beta }
    }

    /// Restricted Hartree-Fock reference: the lowest orbitals occupied in
    /// each sector.
    pub fn rhf(n_alpha: usize, n_beta: usize) -> Self {
        Determinant {
            alpha: low_mask(n_alpha),
            beta: low_mask(n_beta),
        }
    }

    pub fn n_alpha(&self) -> u32 {
        self.alpha.count_ones()
    }

    pub fn n_beta(&self) -> u32 {
        self.beta.count_ones()
    }

    pub fn alpha_string(&self, n_orb: u16) -> Bitstring {
        Bitstring::from_mask(n_orb, self.alpha)
    }

    pub fn beta_string(&self, n_orb: u16) -> Bitstring {
        Bitstring::from_mask(n_orb, self.beta)
    }

    /// Full-width string with the alpha sector in the low half.
    pub fn full_string(&self, n_orb: u16) -> Bitstring {
        Bitstring::concat(
            &self.alpha_string(n_orb),
            &self.beta_string(n_orb),
        )
    }

    /// Number of spin orbitals whose occupation differs, divided by two;
    /// i.e. the excitation rank between the two determinants.
    pub fn excitation_degree(&self, other: &Determinant) -> u32 {
        ((self.alpha ^ other.alpha).count_ones() + (self.beta ^ other.beta).count_ones()) / 2
    }
}

/// Mask with the lowest `n` bits set.
pub fn low_mask(n: usize) -> u64 {
    if n == 0 {
        0
    } else if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// Occupied orbital indices of a sector mask, ascending.
pub fn occupied(mask: u64) -> impl Iterator<Item = usize> {
    let mut m = mask;
    std::iter::from_fn(move || {
        if m == 0 {
            None
        } else {
            let p = m.trailing_zeros() as usize;
            m &= m - 1;
            Some(p)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rhf_occupies_lowest_orbitals() {
        let d = Determinant::rhf(3, 3);
        assert_eq!(d.alpha, 0b111);
        assert_eq!(d.beta, 0b111);
        assert_eq!(d.alpha_string(6).to_string(), "000111");
        assert_eq!(d.full_string(6).to_string(), "000111000111");
    }

    #[test]
    fn excitation_degree_counts_pairs() {
        let a = Determinant::new(0b0011, 0b0011);
        assert_eq!(a.excitation_degree(&a), 0);
        assert_eq!(a.excitation_degree(&Determinant::new(0b0101, 0b0011)), 1);
        assert_eq!(a.excitation_degree(&Determinant::new(0b0101, 0b0110)), 2);
        assert_eq!(a.excitation_degree(&Determinant::new(0b1100, 0b1100)), 4);
    }

    #[test]
    fn occupied_iterates_ascending() {
        let got: Vec<usize> = occupied(0b101001).collect();
        assert_eq!(got, vec![0, 3, 5]);
    }
}
