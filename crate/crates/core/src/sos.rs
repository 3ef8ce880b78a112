//! The finite-dimensional PSD sum-of-squares model `F_B(x) = Psi(x)^T B Psi(x)`.
//!
//! Features have Kronecker structure `Psi(x) = w(x) (x) I_d` with
//! `w(x) = R^{-T} v(x)`, where `R` is the upper Cholesky factor of the anchor
//! Gram matrix and `v(x) = (k(x, x_i))_i`. Everything below works with the
//! weight vector `w` and never materializes the `nd x d` feature matrix on
//! hot paths.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SosError};
use crate::kernels::{rows_of, KernelSpec};
use crate::linalg::{self, chol_upper_exact, chol_upper_jitter, solve_upper_transpose};

pub const MODEL_FILE_VERSION: u32 = 1;

/// Anchors, their Gram matrix and its jittered upper Cholesky factor.
#[derive(Debug, Clone)]
pub struct GramFactorization {
    kernel: KernelSpec,
    anchors: DMatrix<f64>,
    d: usize,
    gram: DMatrix<f64>,
    upper: DMatrix<f64>,
    jitter: f64,
}

impl GramFactorization {
    /// Builds features over the rows of `anchors` for `d x d` outputs.
    pub fn build(kernel: KernelSpec, anchors: DMatrix<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(SosError::InvalidParameter("output size d must be positive".into()));
        }
        let gram = kernel.gram(&anchors)?;
        let chol = chol_upper_jitter(&gram)?;
        Ok(Self { kernel, anchors, d, gram, upper: chol.upper, jitter: chol.jitter })
    }

    /// Rebuilds a factorization with a known jitter (used when loading models).
    pub fn with_jitter(kernel: KernelSpec, anchors: DMatrix<f64>, d: usize, jitter: f64) -> Result<Self> {
        if d == 0 {
            return Err(SosError::InvalidParameter("output size d must be positive".into()));
        }
        let gram = kernel.gram(&anchors)?;
        let upper = chol_upper_exact(&gram, jitter).ok_or(SosError::Indefinite { jitter })?;
        Ok(Self { kernel, anchors, d, gram, upper, jitter })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn anchors(&self) -> &DMatrix<f64> {
        &self.anchors
    }

    pub fn n(&self) -> usize {
        self.anchors.nrows()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn input_dim(&self) -> usize {
        self.anchors.ncols()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn upper(&self) -> &DMatrix<f64> {
        &self.upper
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `w(x) = R^{-T} v(x)` by a triangular solve.
    pub fn weights_at(&self, x: &[f64]) -> Result<DVector<f64>> {
        let v = self.kernel.column(&self.anchors, x)?;
        Ok(solve_upper_transpose(&self.upper, &v))
    }

    pub fn features_at(&self, x: &[f64]) -> Result<FeatureBlock> {
        Ok(FeatureBlock { weights: self.weights_at(x)?, d: self.d })
    }

    /// `Psi_l`: the l-th block column of `R (x) I_d`.
    pub fn anchor_features(&self, l: usize) -> FeatureBlock {
        FeatureBlock { weights: self.upper.column(l).into_owned(), d: self.d }
    }
}

/// `Psi(x) = w (x) I_d`, stored through its weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub weights: DVector<f64>,
    pub d: usize,
}

impl FeatureBlock {
    /// Materializes the dense `nd x d` matrix.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.weights.len();
        let d = self.d;
        DMatrix::from_fn(n * d, d, |r, c| if r % d == c { self.weights[r / d] } else { 0.0 })
    }
}

/// `sum_{a,b} w_a w_b G[a, b]` over the `d x d` blocks of `g`, i.e. `Psi^T G Psi`.
pub(crate) fn contract(w: &[f64], g: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let n = w.len();
    let mut out = DMatrix::zeros(d, d);
    for a in 0..n {
        if w[a] == 0.0 {
            continue;
        }
        for b in 0..n {
            let wab = w[a] * w[b];
            if wab == 0.0 {
                continue;
            }
            for t in 0..d {
                for s in 0..d {
                    out[(s, t)] += wab * g[(a * d + s, b * d + t)];
                }
            }
        }
    }
    out
}

/// `sum_i Psi_i Gamma_i Psi_i^T + shift * I` where column `i` of `weights`
/// is the feature weight vector of constraint `i`.
pub(crate) fn assemble(weights: &DMatrix<f64>, gammas: &[DMatrix<f64>], d: usize, shift: f64) -> DMatrix<f64> {
    let nf = weights.nrows();
    let mut s = DMatrix::zeros(nf * d, nf * d);
    for (i, gamma) in gammas.iter().enumerate() {
        let w = weights.column(i);
        for b in 0..nf {
            let wb = w[b];
            if wb == 0.0 {
                continue;
            }
            for a in 0..=b {
                let wab = w[a] * wb;
                if wab == 0.0 {
                    continue;
                }
                for t in 0..d {
                    for u in 0..d {
                        s[(a * d + u, b * d + t)] += wab * gamma[(u, t)];
                    }
                }
            }
        }
    }
    // mirror the upper block triangle
    for b in 0..nf {
        for a in 0..b {
            for t in 0..d {
                for u in 0..d {
                    s[(b * d + t, a * d + u)] = s[(a * d + u, b * d + t)];
                }
            }
        }
    }
    for i in 0..nf * d {
        s[(i, i)] += shift;
    }
    s
}

/// Regularizer `lambda1 tr B + (lambda2 / 2) |B|_F^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSpec {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl RegularizerSpec {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if !(lambda1 >= 0.0 && lambda2 >= 0.0) || lambda1 + lambda2 <= 0.0 {
            return Err(SosError::InvalidParameter(format!(
                "regularizer weights must be non-negative and not both zero (lambda1={lambda1}, lambda2={lambda2})"
            )));
        }
        Ok(Self { lambda1, lambda2 })
    }

    pub fn omega(&self, b: &DMatrix<f64>) -> f64 {
        self.lambda1 * b.trace() + 0.5 * self.lambda2 * b.norm_squared()
    }
}

/// A fitted (or hand-built) PSD-valued model.
#[derive(Debug, Clone)]
pub struct SosModel {
    pub factorization: GramFactorization,
    /// `nd x nd` symmetric PSD coefficient matrix.
    pub b: DMatrix<f64>,
    /// Hyperparameters recorded alongside the model.
    pub hyperparameters: BTreeMap<String, f64>,
}

impl SosModel {
    pub fn new(factorization: GramFactorization, b: DMatrix<f64>) -> Result<Self> {
        let size = factorization.n() * factorization.d();
        if b.nrows() != size || b.ncols() != size {
            return Err(SosError::DimensionMismatch { expected: size, got: b.nrows() });
        }
        let b = linalg::symmetrized(&b)?;
        Ok(Self { factorization, b, hyperparameters: BTreeMap::new() })
    }

    pub fn d(&self) -> usize {
        self.factorization.d()
    }

    /// `F_B(x)`, a `d x d` symmetric matrix.
    pub fn evaluate(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let w = self.factorization.weights_at(x)?;
        let f = contract(w.as_slice(), &self.b, self.d());
        Ok((&f + f.transpose()) * 0.5)
    }

    /// `F_B` at the l-th anchor using the stored feature `Psi_l`.
    pub fn evaluate_at_anchor(&self, l: usize) -> DMatrix<f64> {
        let w = self.factorization.upper().column(l).into_owned();
        let f = contract(w.as_slice(), &self.b, self.d());
        (&f + f.transpose()) * 0.5
    }

    pub fn predict(&self, queries: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        rows_of(queries).iter().map(|q| self.evaluate(q)).collect()
    }

    pub fn to_file(&self) -> SosModelFile {
        let f = &self.factorization;
        SosModelFile {
            version: MODEL_FILE_VERSION,
            kind: "psd-sos".into(),
            kernel: *f.kernel(),
            anchors: rows_of(f.anchors()),
            d: f.d(),
            b: row_major(&self.b),
            jitter: f.jitter(),
            hyperparameters: self.hyperparameters.clone(),
        }
    }

    pub fn from_file(file: SosModelFile) -> Result<Self> {
        if file.version != MODEL_FILE_VERSION {
            return Err(SosError::Version { found: file.version, expected: MODEL_FILE_VERSION });
        }
        if file.kind != "psd-sos" {
            return Err(SosError::Format(format!("expected a psd-sos model, found `{}`", file.kind)));
        }
        let anchors = crate::kernels::points_from_rows(&file.anchors)?;
        let size = anchors.nrows() * file.d;
        if file.b.len() != size * size {
            return Err(SosError::Format(format!(
                "B has {} entries but n={} anchors and d={} require {}",
                file.b.len(),
                anchors.nrows(),
                file.d,
                size * size
            )));
        }
        let kernel = KernelSpec::new(file.kernel.family, file.kernel.sigma)?;
        let factorization = GramFactorization::with_jitter(kernel, anchors, file.d, file.jitter)?;
        let b = DMatrix::from_row_slice(size, size, &file.b);
        let mut model = Self::new(factorization, b)?;
        model.hyperparameters = file.hyperparameters;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path, &self.to_file())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(crate::io::read_json(path)?)
    }
}

/// On-disk representation of a [`SosModel`]. Matrices are row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SosModelFile {
    pub version: u32,
    pub kind: String,
    pub kernel: KernelSpec,
    pub anchors: Vec<Vec<f64>>,
    pub d: usize,
    pub b: Vec<f64>,
    pub jitter: f64,
    #[serde(default)]
    pub hyperparameters: BTreeMap<String, f64>,
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter());
    }
    out
}
