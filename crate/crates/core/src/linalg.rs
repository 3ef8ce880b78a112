//! Symmetric-matrix helpers used by the solvers.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Result, SosError};

/// Relative asymmetry tolerated before an input is rejected.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Jitter ladder, relative to the mean diagonal.
pub const JITTER_LADDER: [f64; 8] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Eigendecomposition with eigenvalues sorted in descending order.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns.
    pub eigenvectors: DMatrix<f64>,
}

impl SymEig {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        let sym = symmetrized(m)?;
        let eig = sym.symmetric_eigen();
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let eigenvectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        Ok(Self { eigenvalues, eigenvectors })
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let u = &self.eigenvectors;
        u * DMatrix::from_diagonal(&self.eigenvalues) * u.transpose()
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Returns `(M + M^T) / 2`, rejecting inputs whose asymmetry exceeds
/// `SYMMETRY_TOL * max|M|`.
pub fn symmetrized(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(SosError::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
    }
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL * m.amax().max(f64::MIN_POSITIVE) {
        return Err(SosError::NotSymmetric { asymmetry: asym });
    }
    Ok((m + m.transpose()) * 0.5)
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `[M]_- = U max(0, -L) U^T`.
pub fn negative_part(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(spectral_part(symmetrized(m)?, false))
}

/// `[M]_+ = U max(0, L) U^T`.
pub fn positive_part(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(spectral_part(symmetrized(m)?, true))
}

/// Negative part of an already-symmetric matrix; the solver hot path.
pub(crate) fn negative_part_sym(m: DMatrix<f64>) -> DMatrix<f64> {
    spectral_part(m, false)
}

fn spectral_part(m: DMatrix<f64>, positive: bool) -> DMatrix<f64> {
    let n = m.nrows();
    let eig = m.symmetric_eigen();
    let mut out = DMatrix::zeros(n, n);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let w = if positive { lam } else { -lam };
        if w > 0.0 {
            let u = eig.eigenvectors.column(k);
            out.ger(w, &u, &u, 1.0);
        }
    }
    out
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn lambda_min(m: &DMatrix<f64>) -> Result<f64> {
    Ok(symmetrized(m)?.symmetric_eigenvalues().min())
}

/// Largest eigenvalue of a symmetric matrix (full decomposition).
pub fn lambda_max(m: &DMatrix<f64>) -> Result<f64> {
    Ok(symmetrized(m)?.symmetric_eigenvalues().max())
}

/// Upper-triangular factor with the jitter that made it succeed.
#[derive(Debug, Clone)]
pub struct JitteredCholesky {
    /// `R^T R = K + jitter * I`.
    pub upper: DMatrix<f64>,
    pub jitter: f64,
}

/// Cholesky factorization `R^T R = K + tau I`, walking `tau` up the jitter
/// ladder until the factorization succeeds.
pub fn chol_upper_jitter(k: &DMatrix<f64>) -> Result<JitteredCholesky> {
    let sym = symmetrized(k)?;
    let n = sym.nrows();
    if n == 0 {
        return Err(SosError::Empty("matrix"));
    }
    let scale = sym.trace() / n as f64;
    let mut last = 0.0;
    for rel in JITTER_LADDER {
        let tau = rel * scale;
        last = tau;
        if let Some(upper) = chol_upper_exact(&sym, tau) {
            return Ok(JitteredCholesky { upper, jitter: tau });
        }
    }
    Err(SosError::Indefinite { jitter: last })
}

/// Factorizes `K + tau I` for a fixed `tau`; `None` when not positive definite.
pub fn chol_upper_exact(k: &DMatrix<f64>, tau: f64) -> Option<DMatrix<f64>> {
    let mut shifted = k.clone();
    for i in 0..shifted.nrows() {
        shifted[(i, i)] += tau;
    }
    let chol = Cholesky::new(shifted)?;
    let l = chol.l();
    if l.diagonal().iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
        return None;
    }
    Some(l.transpose())
}

/// Solves `R^T w = v` for upper-triangular `R`.
pub fn solve_upper_transpose(r: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    r.tr_solve_upper_triangular(v).expect("triangular factor has a nonzero diagonal")
}

/// Largest eigenvalue of a symmetric PSD operator by power iteration.
/// Underestimates slightly; callers that need a bound add a margin.
pub fn power_lambda_max(dim: usize, iters: usize, mut apply: impl FnMut(&DVector<f64>) -> DVector<f64>) -> f64 {
    if dim == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(dim, |i, _| 1.0 + (i as f64 * 0.618_033_988_7).fract());
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..iters {
        let w = apply(&v);
        est = v.dot(&w);
        let norm = w.norm();
        if !(norm > 0.0) {
            return est.max(0.0);
        }
        v = w / norm;
    }
    est.max(0.0)
}

/// Frobenius inner product.
pub fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sym_from(vals: &[f64], n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_row_slice(n, n, &vals[..n * n]);
        (&a + a.transpose()) * 0.5
    }

    #[test]
    fn negative_part_examples() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -2.0]));
        assert_eq!(negative_part(&m).unwrap(), DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 2.0])));
        let psd = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert_eq!(negative_part(&psd).unwrap(), DMatrix::zeros(2, 2));
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        assert_relative_eq!(negative_part(&swap).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn asymmetric_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(negative_part(&m), Err(SosError::NotSymmetric { .. })));
        assert!(lambda_max(&m).is_err());
    }

    #[test]
    fn cholesky_examples() {
        let id = DMatrix::<f64>::identity(2, 2);
        let f = chol_upper_jitter(&id).unwrap();
        assert_eq!(f.upper, id);
        assert_eq!(f.jitter, 0.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        assert_relative_eq!(chol_upper_jitter(&d).unwrap().upper, DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])));
        let ones = DMatrix::from_element(2, 2, 1.0);
        let f = chol_upper_jitter(&ones).unwrap();
        assert!(f.jitter > 0.0 && f.jitter <= 1e-6);
        let recon = f.upper.transpose() * &f.upper;
        let target = &ones + DMatrix::identity(2, 2) * f.jitter;
        assert!((recon - target).amax() < 1e-8);
        assert!(f.upper.lower_triangle() == DMatrix::from_diagonal(&f.upper.diagonal()));
    }

    #[test]
    fn indefinite_fails() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(chol_upper_jitter(&m), Err(SosError::Indefinite { .. })));
    }

    #[test]
    fn lambda_max_examples() {
        assert_eq!(lambda_max(&DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]))).unwrap(), 3.0);
        assert_relative_eq!(lambda_max(&DMatrix::identity(5, 5)).unwrap(), 1.0);
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert_relative_eq!(lambda_max(&m).unwrap(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn sym_eig_sorted_and_orthogonal() {
        let m = sym_from(&[1.0, 2.0, 3.0, 4.0, -5.0, 6.0, 7.0, 8.0, 0.5], 3);
        let e = SymEig::new(&m).unwrap();
        assert!(e.eigenvalues[0] >= e.eigenvalues[1] && e.eigenvalues[1] >= e.eigenvalues[2]);
        let utu = e.eigenvectors.transpose() * &e.eigenvectors;
        assert!((utu - DMatrix::identity(3, 3)).amax() < 1e-10);
        assert!((e.reconstruct() - &m).amax() < 1e-9 * m.amax());
    }

    #[test]
    fn chol_on_gram_matrices() {
        use crate::kernels::KernelSpec;
        let pts = DMatrix::from_fn(30, 1, |i, _| i as f64 * 0.01);
        for sigma in [0.1, 1.0, 10.0] {
            let k = KernelSpec::gaussian(sigma).unwrap().gram(&pts).unwrap();
            let f = chol_upper_jitter(&k).unwrap();
            let err = (f.upper.transpose() * &f.upper - &k).norm();
            assert!(err <= 1e-6 * k.trace(), "sigma {sigma}: {err}");
        }
    }

    #[test]
    fn power_iteration_matches_eigen() {
        let m = sym_from(&[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0], 3);
        let est = power_lambda_max(3, 200, |v| &m * v);
        assert_relative_eq!(est, lambda_max(&m).unwrap(), epsilon = 1e-10);
    }

    proptest! {
        #[test]
        fn parts_decompose(vals in proptest::collection::vec(-5.0f64..5.0, 16), alpha in 0.0f64..10.0) {
            let m = sym_from(&vals, 4);
            let pos = positive_part(&m).unwrap();
            let neg = negative_part(&m).unwrap();
            prop_assert!((&pos - &neg - &m).amax() <= 1e-9 * (1.0 + m.amax()));
            prop_assert!(frob_dot(&pos, &neg).abs() <= 1e-9 * (1.0 + m.norm_squared()));
            prop_assert!(lambda_min(&neg).unwrap() >= -1e-9 * (1.0 + m.amax()));
            let scaled = negative_part(&(&m * alpha)).unwrap();
            prop_assert!((scaled - neg * alpha).amax() <= 1e-9 * (1.0 + alpha * m.amax()));
        }
    }
}
