//! Electronic Hamiltonian in second-quantized integral form, FCIDUMP-style
//! ingestion, and the built-in toy problem generators.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SqdError;

const SYMMETRY_TOL: f64 = 1e-10;

/// One- and two-electron integrals over spatial orbitals plus the sector
/// definition. Two-electron integrals use chemist notation `(pq|rs)` with
/// full 8-fold symmetry.
#[derive(Debug, Clone)]
pub struct HamiltonianSpec {
    n_orb: usize,
    n_alpha: usize,
    n_beta: usize,
    core_energy: f64,
    /// `h[p*n_orb + q]`, symmetric.
    h: Vec<f64>,
    /// `g[((p*n + q)*n + r)*n + s]` = (pq|rs).
    g: Vec<f64>,
}

impl HamiltonianSpec {
    pub fn new(n_orb: usize, n_alpha: usize, n_beta: usize) -> Self {
        assert!(n_orb <= 64, "desk-scale specs are limited to 64 orbitals");
        HamiltonianSpec {
            n_orb,
            n_alpha,
            n_beta,
            core_energy: 0.0,
            h: vec![0.0; n_orb * n_orb],
            g: vec![0.0; n_orb.pow(4)],
        }
    }

    pub fn n_orb(&self) -> usize {
        self.n_orb
    }
    pub fn n_alpha(&self) -> usize {
        self.n_alpha
    }
    pub fn n_beta(&self) -> usize {
        self.n_beta
    }
    pub fn core_energy(&self) -> f64 {
        self.core_energy
    }

    pub fn set_core_energy(&mut self, value: f64) {
        self.core_energy = value;
    }

    #[inline]
    pub fn one_electron(&self, p: usize, q: usize) -> f64 {
        self.h[p * self.n_orb + q]
    }

    /// Chemist (pq|rs).
    #[inline]
    pub fn two_electron(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        let n = self.n_orb;
        self.g[((p * n + q) * n + r) * n + s]
    }

    /// Sets `h[p][q]` and its transpose.
    pub fn set_one_electron(&mut self, p: usize, q: usize, value: f64) {
        self.h[p * self.n_orb + q] = value;
        self.h[q * self.n_orb + p] = value;
    }

    /// Sets (pq|rs) through all eight symmetry images.
    pub fn set_two_electron(&mut self, p: usize, q: usize, r: usize, s: usize, value: f64) {
        let n = self.n_orb;
        let mut put = |a: usize, b: usize, c: usize, d: usize| {
            self.g[((a * n + b) * n + c) * n + d] = value;
        };
        put(p, q, r, s);
        put(q, p, r, s);
        put(p, q, s, r);
        put(q, p, s, r);
        put(r, s, p, q);
        put(s, r, p, q);
        put(r, s, q, p);
        put(s, r, q, p);
    }

    /// Verifies h symmetry and the pq<->qp, rs<->sr, pq<->rs symmetries of g.
    pub fn validate_symmetry(&self) -> Result<(), SqdError> {
        let n = self.n_orb;
        for p in 0..n {
            for q in 0..p {
                if (self.one_electron(p, q) - self.one_electron(q, p)).abs() > SYMMETRY_TOL {
                    return Err(SqdError::BadIntegrals(format!("h[{p}][{q}] != h[{q}][{p}]")));
                }
            }
        }
        for p in 0..n {
            for q in 0..n {
                for r in 0..n {
                    for s in 0..n {
                        let v = self.two_electron(p, q, r, s);
                        for (a, b, c, d) in [(q, p, r, s), (p, q, s, r), (r, s, p, q)] {
                            if (v - self.two_electron(a, b, c, d)).abs() > SYMMETRY_TOL {
                                return Err(SqdError::BadIntegrals(format!(
                                    "({p}{q}|{r}{s}) breaks symmetry against ({a}{b}|{c}{d})"
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Parses FCIDUMP-style text: a `&FCI ... &END` namelist with NORB,
    /// NELEC and MS2, then `value p q r s` lines (1-indexed). `r=s=0`
    /// carries a one-electron element, `q=r=s=0` a diagonal one-electron
    /// element, and all-zero indices the core energy.
    pub fn from_fcidump_str(text: &str) -> Result<Self, SqdError> {
        let err = |m: &str| SqdError::Fcidump(m.to_owned());

        let upper = text.to_ascii_uppercase();
        let start = upper.find("&FCI").ok_or_else(|| err("missing &FCI header"))?;
        let end_tag = upper[start..]
            .find("&END")
            .map(|i| (start + i, 4))
            .or_else(|| upper[start..].find("/\n").map(|i| (start + i, 1)))
            .ok_or_else(|| err("missing &END terminator"))?;
        let header = &text[start + 4..end_tag.0];
        let body = &text[end_tag.0 + end_tag.1..];

        let mut norb: Option<usize> = None;
        let mut nelec: Option<i64> = None;
        let mut ms2: i64 = 0;
        for item in header.split(|c: char| c == ',' || c.is_whitespace()) {
            let item = item.trim();
            if item.is_empty() {
                continue;
            }
            if let Some((key, value)) = item.split_once('=') {
                match key.trim().to_ascii_uppercase().as_str() {
                    "NORB" => norb = Some(value.trim().parse().map_err(|_| err("bad NORB"))?),
                    "NELEC" => nelec = Some(value.trim().parse().map_err(|_| err("bad NELEC"))?),
                    "MS2" => ms2 = value.trim().parse().map_err(|_| err("bad MS2"))?,
                    _ => {}
                }
            }
        }
        let norb = norb.ok_or_else(|| err("NORB not given"))?;
        let nelec = nelec.ok_or_else(|| err("NELEC not given"))?;
        if norb == 0 || norb > 64 {
            return Err(err("NORB out of range"));
        }
        if (nelec + ms2) % 2 != 0 || nelec < ms2.abs() {
            return Err(err("NELEC/MS2 do not define a sector"));
        }
        let n_alpha = ((nelec + ms2) / 2) as usize;
        let n_beta = ((nelec - ms2) / 2) as usize;
        if n_alpha > norb || n_beta > norb {
            return Err(err("more electrons than orbitals in a spin sector"));
        }

        let mut spec = HamiltonianSpec::new(norb, n_alpha, n_beta);
        for (lineno, line) in body.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let value: f64 = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| err(&format!("line {}: bad value", lineno + 1)))?;
            let idx: Vec<i64> = it
                .map(|t| t.parse())
                .collect::<Result<_, _>>()
                .map_err(|_| err(&format!("line {}: bad index", lineno + 1)))?;
            if idx.len() != 4 || idx.iter().any(|&i| i < 0 || i as usize > norb) {
                return Err(err(&format!("line {}: expected 4 indices in range", lineno + 1)));
            }
            let (p, q, r, s) = (idx[0], idx[1], idx[2], idx[3]);
            match (p, q, r, s) {
                (0, 0, 0, 0) => spec.core_energy = value,
                (p, 0, 0, 0) => {
                    let p = p as usize - 1;
                    spec.set_one_electron(p, p, value);
                }
                (p, q, 0, 0) if p > 0 && q > 0 => {
                    spec.set_one_electron(p as usize - 1, q as usize - 1, value);
                }
                (p, q, r, s) if p > 0 && q > 0 && r > 0 && s > 0 => {
                    spec.set_two_electron(
                        p as usize - 1,
                        q as usize - 1,
                        r as usize - 1,
                        s as usize - 1,
                        value,
                    );
                }
                _ => return Err(err(&format!("line {}: unsupported index pattern", lineno + 1))),
            }
        }
        spec.validate_symmetry()?;
        Ok(spec)
    }

    pub fn from_fcidump_path(path: &Path) -> Result<Self, SqdError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_fcidump_str(&text)
    }

    /// Renders the spec back to FCIDUMP text (symmetry-unique entries only).
    pub fn to_fcidump_string(&self) -> String {
        let n = self.n_orb;
        let nelec = self.n_alpha + self.n_beta;
        let ms2 = self.n_alpha as i64 - self.n_beta as i64;
        let mut out = format!(
            "&FCI NORB={},NELEC={},MS2={},\n ORBSYM={}\n ISYM=1,\n&END\n",
            n,
            nelec,
            ms2,
            "1,".repeat(n)
        );
        for p in 0..n {
            for q in 0..=p {
                for r in 0..=p {
                    let s_max = if r == p { q } else { r };
                    for s in 0..=s_max {
                        let v = self.two_electron(p, q, r, s);
                        if v != 0.0 {
                            out.push_str(&format!(
                                "{:24.16e} {} {} {} {}\n",
                                v,
                                p + 1,
                                q + 1,
                                r + 1,
                                s + 1
                            ));
                        }
                    }
                }
            }
        }
        for p in 0..n {
            for q in 0..=p {
                let v = self.one_electron(p, q);
                if v != 0.0 {
                    out.push_str(&format!("{:24.16e} {} {} 0 0\n", v, p + 1, q + 1));
                }
            }
        }
        out.push_str(&format!("{:24.16e} 0 0 0 0\n", self.core_energy));
        out
    }

    /// Open-chain lattice with hopping `t` and on-site repulsion `u`;
    /// sites play the role of spatial orbitals.
    pub fn hubbard_chain(n_sites: usize, n_alpha: usize, n_beta: usize, t: f64, u: f64) -> Self {
        let mut spec = HamiltonianSpec::new(n_sites, n_alpha, n_beta);
        for p in 0..n_sites.saturating_sub(1) {
            spec.set_one_electron(p, p + 1, -t);
        }
        for p in 0..n_sites {
            spec.set_two_electron(p, p, p, p, u);
        }
        spec
    }

    /// Dense random symmetric integral set with a fixed seed; diagonally
    /// weighted so the spectrum stays physically plausible.
    pub fn random_spec(n_orb: usize, n_alpha: usize, n_beta: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = HamiltonianSpec::new(n_orb, n_alpha, n_beta);
        for p in 0..n_orb {
            spec.set_one_electron(p, p, -2.0 + 0.5 * p as f64 + 0.1 * rng.random::<f64>());
            for q in 0..p {
                spec.set_one_electron(p, q, 0.2 * (rng.random::<f64>() - 0.5));
            }
        }
        for p in 0..n_orb {
            for q in 0..=p {
                for r in 0..=p {
                    let s_max = if r == p { q } else { r };
                    for s in 0..=s_max {
                        let scale = if p == q && r == s { 0.5 } else { 0.1 };
                        spec.set_two_electron(p, q, r, s, scale * (rng.random::<f64>() - 0.3));
                    }
                }
            }
        }
        spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hubbard_chain_has_expected_entries() {
        let spec = HamiltonianSpec::hubbard_chain(6, 3, 3, 1.0, 4.0);
        assert_eq!(spec.one_electron(0, 1), -1.0);
        assert_eq!(spec.one_electron(1, 0), -1.0);
        assert_eq!(spec.one_electron(0, 2), 0.0);
        assert_eq!(spec.two_electron(2, 2, 2, 2), 4.0);
        assert_eq!(spec.two_electron(1, 2, 2, 1), 0.0);
        spec.validate_symmetry().unwrap();
    }

    #[test]
    fn fcidump_round_trip_preserves_integrals() {
        let spec = HamiltonianSpec::random_spec(4, 2, 2, 7);
        let text = spec.to_fcidump_string();
        let back = HamiltonianSpec::from_fcidump_str(&text).unwrap();
        assert_eq!(back.n_orb(), 4);
        assert_eq!(back.n_alpha(), 2);
        assert_eq!(back.n_beta(), 2);
        assert!((back.core_energy() - spec.core_energy()).abs() < 1e-12);
        for p in 0..4 {
            for q in 0..4 {
                assert!((back.one_electron(p, q) - spec.one_electron(p, q)).abs() < 1e-12);
                for r in 0..4 {
                    for s in 0..4 {
                        assert!(
                            (back.two_electron(p, q, r, s) - spec.two_electron(p, q, r, s)).abs()
                                < 1e-12
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn fcidump_one_electron_diagonal_shorthand() {
        let text = "&FCI NORB=2,NELEC=2,MS2=0,\n&END\n-1.5 1 0 0 0\n0.25 1 2 0 0\n0.75 0 0 0 0\n";
        let spec = HamiltonianSpec::from_fcidump_str(text).unwrap();
        assert_eq!(spec.one_electron(0, 0), -1.5);
        assert_eq!(spec.one_electron(0, 1), 0.25);
        assert_eq!(spec.one_electron(1, 0), 0.25);
        assert_eq!(spec.core_energy(), 0.75);
    }

    #[test]
    fn fcidump_rejects_garbage() {
        assert!(HamiltonianSpec::from_fcidump_str("no header at all").is_err());
        assert!(HamiltonianSpec::from_fcidump_str("&FCI NORB=2,\n&END\n").is_err());
        assert!(
            HamiltonianSpec::from_fcidump_str("&FCI NORB=2,NELEC=2,MS2=0,\n&END\n1.0 9 9 9 9\n")
                .is_err()
        );
    }
}
