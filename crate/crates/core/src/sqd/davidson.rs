//! Lowest-eigenpair solver: Davidson iteration with a diagonal
//! preconditioner for large problems, dense diagonalization below the
//! crossover dimension.

use nalgebra::DMatrix;

use super::SqdError;

/// Problems at or below this dimension go straight to the dense solver.
pub const DENSE_CUTOFF: usize = 256;

/// Search space is collapsed to the best Ritz vector beyond this size.
const MAX_SEARCH_SPACE: usize = 20;

/// Dense symmetric matrix in row-major storage.
#[derive(Debug, Clone)]
pub struct SymMatrix {
    n: usize,
    a: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            a: vec![0.0; n * n],
        }
    }

    pub fn from_row_major(n: usize, a: Vec<f64>) -> Self {
        assert_eq!(a.len(), n * n);
        SymMatrix { n, a }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    /// Writes both (i, j) and (j, i), keeping the matrix exactly symmetric.
    #[inline]
    pub fn set_sym(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] = v;
        self.a[j * self.n + i] = v;
    }

    /// Writes one entry only; callers are responsible for symmetry.
    #[inline]
    pub fn set_raw(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] = v;
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.a[i * self.n..(i + 1) * self.n];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.a
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Computes the lowest eigenpair of a symmetric matrix.
///
/// The returned vector has unit norm and its first component of magnitude
/// above 1e-12 is positive. The Davidson path guarantees
/// `||Hc - Ec|| <= tol` on success and reports the best residual when it
/// fails to converge within `max_iter` iterations.
pub fn ground_state(h: &SymMatrix, tol: f64, max_iter: usize) -> Result<(f64, Vec<f64>), SqdError> {
    let n = h.n();
    if n == 0 {
        return Err(SqdError::EmptyBasis);
    }
    if n == 1 {
        return Ok((h.get(0, 0), vec![1.0]));
    }
    if n <= DENSE_CUTOFF {
        return Ok(dense_lowest(h));
    }
    davidson_lowest(h, tol, max_iter)
}

/// Dense route via an off-the-shelf symmetric eigendecomposition.
pub fn dense_lowest(h: &SymMatrix) -> (f64, Vec<f64>) {
    let m = DMatrix::from_row_slice(h.n(), h.n(), h.as_slice());
    let eig = m.symmetric_eigen();
    let (idx, &val) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite eigenvalues"))
        .expect("non-empty spectrum");
    let mut vec: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
    normalize_sign_fixed(&mut vec);
    (val, vec)
}

fn davidson_lowest(h: &SymMatrix, tol: f64, max_iter: usize) -> Result<(f64, Vec<f64>), SqdError> {
    let n = h.n();
    let diag = h.diagonal();

    // Start from the unit vector at the smallest diagonal element.
    let start = diag
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite diagonal"))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut v0 = vec![0.0; n];
    v0[start] = 1.0;

    let mut basis: Vec<Vec<f64>> = vec![v0.clone()];
    let mut images: Vec<Vec<f64>> = vec![apply(h, &v0)];

    let mut best_residual = f64::INFINITY;

    for iteration in 0..max_iter {
        let k = basis.len();
        let mut projected = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in 0..k {
                projected[(a, b)] = dot(&basis[a], &images[b]);
            }
        }
        // Symmetrize away accumulated round-off before the small solve.
        let projected = (&projected + projected.transpose()) * 0.5;
        let eig = projected.symmetric_eigen();
        let (idx, &theta) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite Ritz values"))
            .expect("non-empty projection");
        let s: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();

        let mut ritz = vec![0.0; n];
        let mut ritz_image = vec![0.0; n];
        for (coeff, (b, w)) in s.iter().zip(basis.iter().zip(&images)) {
            axpy(*coeff, b, &mut ritz);
            axpy(*coeff, w, &mut ritz_image);
        }

        let mut residual = ritz_image.clone();
        axpy(-theta, &ritz, &mut residual);
        let res_norm = norm(&residual);
        best_residual = best_residual.min(res_norm);

        if res_norm <= tol {
            normalize_sign_fixed(&mut ritz);
            return Ok((theta, ritz));
        }

        if k >= MAX_SEARCH_SPACE {
            // Restart: keep only the best Ritz vector.
            let scale = 1.0 / norm(&ritz);
            let restart: Vec<f64> = ritz.iter().map(|x| x * scale).collect();
            let restart_image: Vec<f64> = ritz_image.iter().map(|x| x * scale).collect();
            basis = vec![restart];
            images = vec![restart_image];
            continue;
        }

        // Diagonal (Davidson) preconditioner with a clamp near theta.
        let mut direction: Vec<f64> = residual
            .iter()
            .zip(&diag)
            .map(|(r, d)| {
                let mut denom = d - theta;
                if denom.abs() < 1e-6 {
                    denom = if denom < 0.0 { -1e-6 } else { 1e-6 };
                }
                r / denom
            })
            .collect();

        if !orthonormalize_against(&mut direction, &basis) {
            direction = residual.clone();
            if !orthonormalize_against(&mut direction, &basis) {
                // Degenerate correction; expand with an untouched axis.
                let mut added = false;
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| diag[a].partial_cmp(&diag[b]).expect("finite diagonal"));
                for j in order {
                    let mut unit = vec![0.0; n];
                    unit[j] = 1.0;
                    if orthonormalize_against(&mut unit, &basis) {
                        direction = unit;
                        added = true;
                        break;
                    }
                }
                if !added {
                    return Err(SqdError::NotConverged {
                        iterations: iteration,
                        residual: best_residual,
                    });
                }
            }
        }

        images.push(apply(h, &direction));
        basis.push(direction);
    }

    Err(SqdError::NotConverged {
        iterations: max_iter,
        residual: best_residual,
    })
}

fn apply(h: &SymMatrix, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    h.matvec(x, &mut out);
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Two rounds of modified Gram-Schmidt; returns false when the vector is
/// (numerically) inside the span.
fn orthonormalize_against(v: &mut Vec<f64>, basis: &[Vec<f64>]) -> bool {
    for _ in 0..2 {
        for b in basis {
            let overlap = dot(v, b);
            axpy(-overlap, b, v);
        }
    }
    let len = norm(v);
    if len < 1e-10 {
        return false;
    }
    for x in v.iter_mut() {
        *x /= len;
    }
    true
}

fn normalize_sign_fixed(v: &mut [f64]) {
    let len = norm(v);
    if len > 0.0 {
        for x in v.iter_mut() {
            *x /= len;
        }
    }
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_ci_like(n: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = SymMatrix::zeros(n);
        for i in 0..n {
            m.set_sym(i, i, -5.0 + 10.0 * rng.random::<f64>());
            for j in 0..i {
                m.set_sym(i, j, 0.05 * (rng.random::<f64>() - 0.5));
            }
        }
        m
    }

    #[test]
    fn one_by_one_is_trivial() {
        let mut m = SymMatrix::zeros(1);
        m.set_sym(0, 0, -3.25);
        let (e, c) = ground_state(&m, 1e-8, 200).unwrap();
        assert_eq!(e, -3.25);
        assert_eq!(c, vec![1.0]);
    }

    #[test]
    fn davidson_matches_dense_route() {
        let m = random_ci_like(400, 11);
        let (e_dav, c_dav) = ground_state(&m, 1e-10, 200).unwrap();
        let (e_dense, c_dense) = dense_lowest(&m);
        assert!((e_dav - e_dense).abs() < 1e-8, "{e_dav} vs {e_dense}");
        let overlap: f64 = c_dav.iter().zip(&c_dense).map(|(a, b)| a * b).sum();
        assert!(overlap.abs() > 1.0 - 1e-6);
    }

    #[test]
    fn residual_bound_holds_on_success() {
        let m = random_ci_like(300, 5);
        let (e, c) = ground_state(&m, 1e-9, 200).unwrap();
        let mut hc = vec![0.0; 300];
        m.matvec(&c, &mut hc);
        for (h_i, c_i) in hc.iter_mut().zip(&c) {
            *h_i -= e * c_i;
        }
        assert!(norm(&hc) <= 1e-9 * 10.0);
        assert!((norm(&c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sign_convention_is_first_nonzero_positive() {
        let m = random_ci_like(280, 3);
        let (_, c) = ground_state(&m, 1e-9, 200).unwrap();
        let first = c.iter().find(|x| x.abs() > 1e-12).unwrap();
        assert!(*first > 0.0);
    }

    #[test]
    fn nonconvergence_carries_best_residual() {
        let m = random_ci_like(300, 9);
        match ground_state(&m, 1e-30, 2) {
            Err(SqdError::NotConverged { residual, .. }) => assert!(residual.is_finite()),
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }
}
