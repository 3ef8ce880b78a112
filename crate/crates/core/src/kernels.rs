//! Scalar translation-invariant kernels with closed-form derivatives.
//!
//! Bandwidth convention: the Gaussian kernel is `exp(-|x - y|^2 / sigma^2)`
//! and the exponential kernel is `exp(-|x - y| / sigma)`. Note that `sigma`
//! enters the Gaussian squared, not as `2 sigma^2`.
//!
//! Derivative indices are zero-based coordinates of the input space.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SosError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
    Exponential,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Exponential => "exponential",
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = SosError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(KernelFamily::Gaussian),
            "exponential" => Ok(KernelFamily::Exponential),
            other => Err(SosError::InvalidParameter(format!("unknown kernel family `{other}`"))),
        }
    }
}

/// A normalized kernel (`k(x, x) = 1`) with a positive bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub sigma: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(SosError::InvalidParameter(format!("bandwidth must be positive, got {sigma}")));
        }
        Ok(Self { family, sigma })
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, sigma)
    }

    pub fn exponential(sigma: f64) -> Result<Self> {
        Self::new(KernelFamily::Exponential, sigma)
    }

    /// Fails unless the family is differentiable enough for Hessian work.
    pub fn require_derivatives(&self) -> Result<()> {
        match self.family {
            KernelFamily::Gaussian => Ok(()),
            KernelFamily::Exponential => Err(SosError::UnsupportedFamily("exponential")),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dims(x, y)?;
        Ok(self.eval_unchecked(x, y))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        match self.family {
            KernelFamily::Gaussian => (-sq / (self.sigma * self.sigma)).exp(),
            KernelFamily::Exponential => (-sq.sqrt() / self.sigma).exp(),
        }
    }

    /// `d^2 k(x, y) / dy_p dy_q`.
    pub fn eval_d2(&self, x: &[f64], y: &[f64], p: usize, q: usize) -> Result<f64> {
        self.require_derivatives()?;
        check_dims(x, y)?;
        check_index(p, x.len())?;
        check_index(q, x.len())?;
        Ok(self.d2_unchecked(x, y, p, q))
    }

    #[inline]
    pub(crate) fn d2_unchecked(&self, x: &[f64], y: &[f64], p: usize, q: usize) -> f64 {
        let a = 1.0 / (self.sigma * self.sigma);
        let k = self.eval_unchecked(x, y);
        let rp = x[p] - y[p];
        let rq = x[q] - y[q];
        let delta = if p == q { 1.0 } else { 0.0 };
        k * (4.0 * a * a * (rp * rq) - 2.0 * a * delta)
    }

    /// `d^4 k(x, y) / dx_p dx_q dy_r dy_s`.
    pub fn eval_d4(&self, x: &[f64], y: &[f64], idx: [usize; 4]) -> Result<f64> {
        self.require_derivatives()?;
        check_dims(x, y)?;
        for &i in &idx {
            check_index(i, x.len())?;
        }
        Ok(self.d4_unchecked(x, y, idx))
    }

    #[inline]
    pub(crate) fn d4_unchecked(&self, x: &[f64], y: &[f64], [p, q, r, s]: [usize; 4]) -> f64 {
        // With g(u) = exp(-a |u|^2), u = x - y, two x-derivatives and two
        // y-derivatives give (+1)(+1)(-1)(-1) d^4 g / du_p du_q du_r du_s.
        let a = 1.0 / (self.sigma * self.sigma);
        let k = self.eval_unchecked(x, y);
        let u = |i: usize| x[i] - y[i];
        let dl = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
        let (up, uq, ur, us) = (u(p), u(q), u(r), u(s));
        let quartic = 16.0 * a.powi(4) * up * uq * ur * us;
        let quadratic = -8.0
            * a.powi(3)
            * (dl(p, q) * ur * us
                + dl(p, r) * uq * us
                + dl(p, s) * uq * ur
                + dl(q, r) * up * us
                + dl(q, s) * up * ur
                + dl(r, s) * up * uq);
        let constant = 4.0 * a * a * (dl(p, q) * dl(r, s) + dl(p, r) * dl(q, s) + dl(p, s) * dl(q, r));
        k * (quartic + quadratic + constant)
    }

    /// Gram matrix over the rows of `points`.
    pub fn gram(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = points.nrows();
        if n == 0 {
            return Err(SosError::Empty("point list"));
        }
        let rows = rows_of(points);
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = 1.0;
            for j in 0..i {
                let v = self.eval_unchecked(&rows[i], &rows[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }

    /// Cross-kernel matrix `[k(a_i, b_j)]`.
    pub fn cross(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if a.ncols() != b.ncols() {
            return Err(SosError::DimensionMismatch { expected: a.ncols(), got: b.ncols() });
        }
        let ra = rows_of(a);
        let rb = rows_of(b);
        Ok(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| self.eval_unchecked(&ra[i], &rb[j])))
    }

    /// Vector `v(x) = (k(x, a_i))_i` against the rows of `anchors`.
    pub fn column(&self, anchors: &DMatrix<f64>, x: &[f64]) -> Result<DVector<f64>> {
        if anchors.ncols() != x.len() {
            return Err(SosError::DimensionMismatch { expected: anchors.ncols(), got: x.len() });
        }
        let rows = rows_of(anchors);
        Ok(DVector::from_iterator(rows.len(), rows.iter().map(|a| self.eval_unchecked(x, a))))
    }
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(SosError::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    Ok(())
}

fn check_index(i: usize, dim: usize) -> Result<()> {
    if i >= dim {
        return Err(SosError::IndexOutOfRange { index: i, dim });
    }
    Ok(())
}

/// Copies the rows of a point matrix into contiguous vectors.
pub fn rows_of(points: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..points.nrows()).map(|i| points.row(i).iter().copied().collect()).collect()
}

/// Stacks equally sized points into an `n x p` matrix.
pub fn points_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(SosError::Empty("point list"));
    }
    let p = rows[0].len();
    for r in rows {
        if r.len() != p {
            return Err(SosError::DimensionMismatch { expected: p, got: r.len() });
        }
    }
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}
