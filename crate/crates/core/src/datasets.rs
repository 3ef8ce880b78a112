//! Synthetic data: Bures geodesics between covariance matrices and noisy
//! samples of the convex profile `f_a`.
//!
//! All randomness comes from `ChaCha8Rng` seeded with a `u64`, so datasets are
//! bitwise reproducible across platforms.

use nalgebra::{DMatrix, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SosError};
use crate::io::{PsdDataset, ScalarDataset};
use crate::linalg::{symmetrized, SymEig};

/// Relative eigenvalue threshold below which an endpoint counts as singular.
pub const SINGULAR_THRESHOLD: f64 = 1e-12;

const PSD_SLACK: f64 = 1e-10;

fn check_endpoint(m: &DMatrix<f64>) -> Result<SymEig> {
    let eig = SymEig::new(&symmetrized(m)?)?;
    let scale = eig.max().abs().max(1.0);
    if eig.min() < -PSD_SLACK * scale {
        return Err(SosError::InvalidParameter(format!("endpoint is not PSD (lambda_min = {:e})", eig.min())));
    }
    Ok(eig)
}

fn spectral_map(eig: &SymEig, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let v = &eig.eigenvectors;
    let d = eig.eigenvalues.map(|x| f(x.max(0.0)));
    v * DMatrix::from_diagonal(&d) * v.transpose()
}

fn is_singular(eig: &SymEig) -> bool {
    let top = eig.max();
    top <= 0.0 || eig.min() <= SINGULAR_THRESHOLD * top
}

/// `((1-t) I + t T) S0 ((1-t) I + t T)` with `T` the optimal transport map
/// from a nonsingular `S0` to `S1`.
fn generic(s0: &DMatrix<f64>, e0: &SymEig, s1: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let root = spectral_map(e0, f64::sqrt);
    let inv_root = spectral_map(e0, |x| 1.0 / x.sqrt());
    let middle = SymEig::new(&symmetrized(&(&root * s1 * &root))?)?;
    let transport = &inv_root * spectral_map(&middle, f64::sqrt) * &inv_root;
    let d = s0.nrows();
    let a = DMatrix::identity(d, d) * (1.0 - t) + transport * t;
    symmetrized(&(&a * s0 * a.transpose()))
}

/// `X X^T` with `X = (1-t) S0^{1/2} + t S1^{1/2} Q`, `Q` the orthogonal polar
/// factor of `S1^{1/2} S0^{1/2}`.
fn factored(e0: &SymEig, e1: &SymEig, t: f64) -> Result<DMatrix<f64>> {
    let l0 = spectral_map(e0, f64::sqrt);
    let l1 = spectral_map(e1, f64::sqrt);
    let svd = SVD::new(&l1 * &l0, true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(SosError::Format("SVD did not converge".into())),
    };
    let x = &l0 * (1.0 - t) + l1 * (u * vt) * t;
    symmetrized(&(&x * x.transpose()))
}

/// Point at time `t` of the Bures-Wasserstein geodesic from `s0` to `s1`.
///
/// A nonsingular endpoint uses the transport-map formula from that end.
/// When both are singular, commuting endpoints use
/// `((1-t) S0^{1/2} + t S1^{1/2})^2` and non-commuting ones the factored form
/// `X X^T` above, which keeps rank-one paths rank one.
pub fn bures_geodesic(s0: &DMatrix<f64>, s1: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(SosError::InvalidParameter(format!("geodesic time must lie in [0, 1], got {t}")));
    }
    if !s0.is_square() || s0.shape() != s1.shape() {
        return Err(SosError::DimensionMismatch { expected: s0.nrows(), got: s1.nrows() });
    }
    if s0.nrows() == 0 {
        return Err(SosError::Empty("covariance endpoint"));
    }
    let e0 = check_endpoint(s0)?;
    let e1 = check_endpoint(s1)?;
    if t == 0.0 {
        return symmetrized(s0);
    }
    if t == 1.0 {
        return symmetrized(s1);
    }
    if !is_singular(&e0) {
        return generic(s0, &e0, s1, t);
    }
    if !is_singular(&e1) {
        return generic(s1, &e1, s0, 1.0 - t);
    }
    let commutator = s0 * s1 - s1 * s0;
    let scale = (s0.norm() * s1.norm()).max(f64::MIN_POSITIVE);
    if commutator.norm() <= 1e-12 * scale {
        let root = spectral_map(&e0, f64::sqrt) * (1.0 - t) + spectral_map(&e1, f64::sqrt) * t;
        return symmetrized(&(&root * &root));
    }
    factored(&e0, &e1, t)
}

/// Samples of a geodesic at evenly spaced times `0 = x_1 < ... < x_n = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BuresSpec {
    pub sigma0: DMatrix<f64>,
    pub sigma1: DMatrix<f64>,
    pub n: usize,
}

impl BuresSpec {
    /// Two well-conditioned 2x2 covariances with rotated principal axes.
    pub fn full_rank(n: usize) -> Self {
        Self {
            sigma0: DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.4]),
            sigma1: DMatrix::from_row_slice(2, 2, &[0.3, -0.4, -0.4, 1.5]),
            n,
        }
    }

    /// Rank-one endpoints `a a^T` and `b b^T`.
    pub fn rank_one(n: usize) -> Self {
        let a = nalgebra::DVector::from_vec(vec![1.0, 0.2]);
        let b = nalgebra::DVector::from_vec(vec![-0.3, 1.2]);
        Self { sigma0: &a * a.transpose(), sigma1: &b * b.transpose(), n }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n).map(|i| i as f64 / (self.n - 1) as f64).collect()
    }

    pub fn generate(&self) -> Result<PsdDataset> {
        if self.n < 2 {
            return Err(SosError::InvalidParameter(format!("a geodesic dataset needs n >= 2, got {}", self.n)));
        }
        let times = self.times();
        let targets = times.iter().map(|&t| bures_geodesic(&self.sigma0, &self.sigma1, t)).collect::<Result<Vec<_>>>()?;
        PsdDataset::new(DMatrix::from_column_slice(self.n, 1, &times), targets)
    }
}

/// `f_a(x) = (cos(a x) - 1) / a^2 + x^2 / 2`.
pub fn f_a(a: f64, x: f64) -> f64 {
    ((a * x).cos() - 1.0) / (a * a) + 0.5 * x * x
}

/// `f_a''(x) = 1 - cos(a x)`.
pub fn f_a_second(a: f64, x: f64) -> f64 {
    1.0 - (a * x).cos()
}

/// `Y = f_a(|X|) + noise * eps` with `X` uniform on `[-b, b]^p`.
///
/// For `p > 1` only the radial profile is known to be convex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexRegSpec {
    pub a: f64,
    pub b: f64,
    pub p: usize,
    pub n: usize,
    pub noise: f64,
    pub seed: u64,
}

impl ConvexRegSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) || !(self.b > 0.0) || self.p == 0 || self.n == 0 || !(self.noise >= 0.0) {
            return Err(SosError::InvalidParameter(format!("invalid sample spec {self:?}")));
        }
        Ok(())
    }

    /// Noiseless target at `x`.
    pub fn truth(&self, x: &[f64]) -> f64 {
        f_a(self.a, x.iter().map(|v| v * v).sum::<f64>().sqrt())
    }
}

pub fn gen_convex_samples(spec: &ConvexRegSpec) -> Result<ScalarDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut inputs = DMatrix::zeros(spec.n, spec.p);
    let mut outputs = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        for a in 0..spec.p {
            inputs[(i, a)] = rng.random_range(-spec.b..=spec.b);
        }
        let eps: f64 = rng.sample(StandardNormal);
        let x: Vec<f64> = inputs.row(i).iter().copied().collect();
        outputs.push(spec.truth(&x) + spec.noise * eps);
    }
    ScalarDataset::new(inputs, outputs)
}
