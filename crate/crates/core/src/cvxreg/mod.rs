//! Convex regression with sum-of-squares Hessian constraints.
//!
//! A scalar function `f` is fitted by least squares subject to
//! `H_f(v_j) = Psi_j^T B Psi_j` at grid points `v_j`, with `B` PSD. Two
//! representations of `f` are available: the approximate one spans only the
//! kernel sections at the data, the exact one adds the second-derivative
//! sections `d_pq k_{v_j}` so that the constraints hold in the RKHS.

mod approx;
mod exact;
mod nystrom;

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use approx::{fit_approx, ApproxProblem};
pub use exact::{fit_exact, ExactProblem};
pub use nystrom::{nystrom_features, select_landmarks, LandmarkRule, NystromSpec};

use crate::agd::{FitOptions, SolveReport, SolverKind};
use crate::dual::{from_coords, to_coords, Blocks, NegEval, NegPartTerm, QuadNegDual};
use crate::error::{Result, SosError};
use crate::kernels::{points_from_rows, rows_of, KernelSpec};
use crate::linalg::{self, chol_upper_exact};
use crate::sos::{row_major, GramFactorization, RegularizerSpec, SosModel, MODEL_FILE_VERSION};

/// Hyperparameters shared by both representations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexParams {
    pub kernel: KernelSpec,
    /// Ridge weight on `|f|_H^2`.
    pub rho: f64,
    pub reg: RegularizerSpec,
    /// Compress the certificate features when set.
    pub nystrom: Option<NystromSpec>,
}

impl ConvexParams {
    pub fn new(kernel: KernelSpec, rho: f64, lambda1: f64, lambda2: f64) -> Result<Self> {
        Ok(Self { kernel, rho, reg: RegularizerSpec::new(lambda1, lambda2)?, nystrom: None })
    }

    pub fn with_nystrom(mut self, spec: NystromSpec) -> Self {
        self.nystrom = Some(spec);
        self
    }

    pub(crate) fn validate(&self) -> Result<()> {
        self.kernel.require_derivatives()?;
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(SosError::InvalidParameter(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.reg.lambda2 > 0.0) {
            return Err(SosError::InvalidParameter("the smooth dual requires lambda2 > 0".into()));
        }
        Ok(())
    }

    pub(crate) fn hyperparameters(&self) -> BTreeMap<String, f64> {
        let mut h = BTreeMap::new();
        h.insert("sigma".into(), self.kernel.sigma);
        h.insert("rho".into(), self.rho);
        h.insert("lambda1".into(), self.reg.lambda1);
        h.insert("lambda2".into(), self.reg.lambda2);
        if let Some(ny) = &self.nystrom {
            h.insert("nystrom_rank".into(), ny.rank as f64);
        }
        h
    }
}

/// Which expansion a [`ConvexModel`] stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Approximate,
    Exact,
}

/// The SoS side of the constraints: grid features `Psi_j = w_j (x) I_p`
/// built from a (possibly compressed) landmark factorization.
#[derive(Debug, Clone)]
pub(crate) struct HessianCertificate {
    factorization: GramFactorization,
    term: NegPartTerm,
}

impl HessianCertificate {
    pub(crate) fn new(kernel: KernelSpec, grid: &DMatrix<f64>, nystrom: Option<&NystromSpec>, reg: RegularizerSpec) -> Result<Self> {
        let (factorization, weights) = nystrom_features(kernel, grid, nystrom)?;
        let term = NegPartTerm::new(weights, grid.ncols(), reg);
        Ok(Self { factorization, term })
    }

    pub(crate) fn term(&self) -> &NegPartTerm {
        &self.term
    }

    pub(crate) fn evaluate(&self, gammas: &[DMatrix<f64>]) -> NegEval {
        self.term.evaluate(gammas)
    }

    pub(crate) fn into_model(self, b: DMatrix<f64>) -> Result<SosModel> {
        SosModel::new(self.factorization, b)
    }
}

/// Largest relative constraint violation accepted as converged.
pub(crate) const RESIDUAL_TOL: f64 = 1e-4;

/// Outcome of a dual solve shared by both representations.
pub(crate) struct DualRun {
    pub gammas: Blocks,
    pub value: f64,
    pub iterations: usize,
    pub solver_converged: bool,
    pub solver: SolverKind,
    pub neg: NegEval,
    /// `max_j |H_f(v_j) - Psi_j^T B Psi_j|_F`.
    pub residual: f64,
    /// `max_j |H_f(v_j)|_F`.
    pub hessian_scale: f64,
    pub trace: Vec<f64>,
}

impl DualRun {
    pub(crate) fn converged(&self, primal: f64, gap: f64, opts: &FitOptions) -> bool {
        self.solver_converged && gap.abs() <= opts.gap_tol * (1.0 + primal.abs()) && self.residual <= RESIDUAL_TOL * (1.0 + self.hessian_scale)
    }
}

pub(crate) fn check_blocks(gammas: &[DMatrix<f64>], l: usize, p: usize) -> Result<()> {
    if gammas.len() != l {
        return Err(SosError::DimensionMismatch { expected: l, got: gammas.len() });
    }
    if let Some(g) = gammas.iter().find(|g| g.nrows() != p || g.ncols() != p) {
        return Err(SosError::DimensionMismatch { expected: p, got: g.nrows() });
    }
    Ok(())
}

/// Minimizes `dual` (semismooth Newton unless `opts` says otherwise).
pub(crate) fn run_dual(dual: &QuadNegDual, warm: Option<&[DMatrix<f64>]>, opts: &FitOptions) -> Result<DualRun> {
    let p = dual.p();
    let l = dual.neg.blocks();
    let u0 = match warm {
        Some(w) => {
            check_blocks(w, l, p)?;
            to_coords(w, p)
        }
        None => DVector::zeros(dual.dim()),
    };
    let solver = opts.solver.unwrap_or(SolverKind::Newton);
    let out = dual.minimize(u0, solver, None, opts.agd());
    let (value, grad, neg) = dual.evaluate(&out.x);
    let gammas = from_coords(&out.x, p);
    let grads = from_coords(&grad, p);
    let residual = grads.iter().map(|g| g.norm()).fold(0.0, f64::max);
    let hessian_scale = grads.iter().zip(&neg.sos).map(|(g, c)| (g + c).norm()).fold(0.0, f64::max);
    Ok(DualRun {
        gammas,
        value,
        iterations: out.iterations,
        solver_converged: out.converged,
        solver,
        neg,
        residual,
        hessian_scale,
        trace: out.best_trace,
    })
}

/// Flattens symmetric blocks into `gamma[(j p + a) p + b]`.
pub(crate) fn flatten(gammas: &[DMatrix<f64>], p: usize) -> DVector<f64> {
    let mut out = DVector::zeros(gammas.len() * p * p);
    for (j, g) in gammas.iter().enumerate() {
        for a in 0..p {
            for b in 0..p {
                out[(j * p + a) * p + b] = g[(a, b)];
            }
        }
    }
    out
}

/// `D[i, (j, a, b)] = d^2 k(x_i, v_j) / dv_a dv_b`.
pub(crate) fn second_derivative_matrix(kernel: &KernelSpec, points: &DMatrix<f64>, grid: &DMatrix<f64>) -> DMatrix<f64> {
    let p = grid.ncols();
    let xs = rows_of(points);
    let vs = rows_of(grid);
    let mut out = DMatrix::zeros(xs.len(), vs.len() * p * p);
    for (j, v) in vs.iter().enumerate() {
        for a in 0..p {
            for b in 0..=a {
                let col = (j * p + a) * p + b;
                let mirror = (j * p + b) * p + a;
                for (i, x) in xs.iter().enumerate() {
                    let val = kernel.d2_unchecked(x, v, a, b);
                    out[(i, col)] = val;
                    out[(i, mirror)] = val;
                }
            }
        }
    }
    out
}

pub(crate) fn check_grid(data_dim: usize, grid: &DMatrix<f64>) -> Result<()> {
    if grid.nrows() == 0 {
        return Err(SosError::Empty("constraint grid"));
    }
    if grid.ncols() != data_dim {
        return Err(SosError::DimensionMismatch { expected: data_dim, got: grid.ncols() });
    }
    Ok(())
}

/// Hessian at `v` of `f(x) = sum_i alpha_i k(x, x_i)`.
pub fn hessian_of_expansion(kernel: &KernelSpec, alpha: &[f64], anchors: &DMatrix<f64>, v: &[f64]) -> Result<DMatrix<f64>> {
    kernel.require_derivatives()?;
    if alpha.len() != anchors.nrows() {
        return Err(SosError::DimensionMismatch { expected: anchors.nrows(), got: alpha.len() });
    }
    if v.len() != anchors.ncols() {
        return Err(SosError::DimensionMismatch { expected: anchors.ncols(), got: v.len() });
    }
    let p = v.len();
    let mut h = DMatrix::zeros(p, p);
    for (i, x) in rows_of(anchors).iter().enumerate() {
        if alpha[i] == 0.0 {
            continue;
        }
        for a in 0..p {
            for b in 0..=a {
                let val = alpha[i] * kernel.d2_unchecked(x, v, a, b);
                h[(a, b)] += val;
                if a != b {
                    h[(b, a)] += val;
                }
            }
        }
    }
    Ok(h)
}

/// A fitted convex regressor together with its SoS Hessian certificate.
#[derive(Debug, Clone)]
pub struct ConvexModel {
    pub representation: Representation,
    pub kernel: KernelSpec,
    /// Training inputs, one per row.
    pub anchors: DMatrix<f64>,
    /// Approximate: coefficients in the orthonormalized basis
    /// `R^{-T} k_X(x)`. Exact: weights of the sections `k_{x_i}`.
    pub coefficients: DVector<f64>,
    pub grid: DMatrix<f64>,
    /// Constraint multipliers; the exact representation expands over them.
    pub gammas: Blocks,
    /// Weight of the derivative sections, `1 / (2 rho)` for the exact
    /// representation and zero otherwise.
    pub constraint_scale: f64,
    /// `Psi(v)^T B Psi(v)`, the SoS model of the Hessian.
    pub certificate: SosModel,
    pub hyperparameters: BTreeMap<String, f64>,
    anchor_jitter: f64,
    anchor_upper: Option<DMatrix<f64>>,
}

impl ConvexModel {
    pub fn input_dim(&self) -> usize {
        self.anchors.ncols()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(SosError::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    /// Basis values at `x` for the stored coefficients.
    fn basis(&self, column: DVector<f64>) -> DVector<f64> {
        match &self.anchor_upper {
            Some(r) => linalg::solve_upper_transpose(r, &column),
            None => column,
        }
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let k = self.kernel.column(&self.anchors, x)?;
        let mut f = self.coefficients.dot(&self.basis(k));
        if self.constraint_scale != 0.0 {
            let p = self.input_dim();
            let mut acc = 0.0;
            for (j, v) in rows_of(&self.grid).iter().enumerate() {
                let g = &self.gammas[j];
                for a in 0..p {
                    for b in 0..p {
                        acc += g[(a, b)] * self.kernel.d2_unchecked(x, v, a, b);
                    }
                }
            }
            f += self.constraint_scale * acc;
        }
        Ok(f)
    }

    pub fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        let p = self.input_dim();
        let xs = rows_of(&self.anchors);
        let mut h = DMatrix::zeros(p, p);
        for r in 0..p {
            for s in 0..=r {
                let col = DVector::from_iterator(xs.len(), xs.iter().map(|xi| self.kernel.d2_unchecked(xi, x, r, s)));
                let mut val = self.coefficients.dot(&self.basis(col));
                if self.constraint_scale != 0.0 {
                    let mut acc = 0.0;
                    for (j, v) in rows_of(&self.grid).iter().enumerate() {
                        let g = &self.gammas[j];
                        for a in 0..p {
                            for b in 0..p {
                                acc += g[(a, b)] * self.kernel.d4_unchecked(v, x, [a, b, r, s]);
                            }
                        }
                    }
                    val += self.constraint_scale * acc;
                }
                h[(r, s)] = val;
                h[(s, r)] = val;
            }
        }
        Ok(h)
    }

    pub fn predict(&self, queries: &DMatrix<f64>) -> Result<Vec<f64>> {
        rows_of(queries).iter().map(|q| self.value(q)).collect()
    }

    /// Expansion weights on `k_{x_i}` (`R^{-1}` applied to the stored
    /// coefficients for the approximate representation).
    pub fn alpha(&self) -> DVector<f64> {
        match &self.anchor_upper {
            Some(r) => r.solve_upper_triangular(&self.coefficients).expect("triangular factor has a nonzero diagonal"),
            None => self.coefficients.clone(),
        }
    }

    /// `|H_f(v_j) - Psi_j^T B Psi_j|_F` at every grid point.
    pub fn constraint_residuals(&self) -> Result<Vec<f64>> {
        rows_of(&self.grid)
            .iter()
            .map(|v| Ok((self.hessian(v)? - self.certificate.evaluate(v)?).norm()))
            .collect()
    }

    pub fn to_file(&self) -> ConvexModelFile {
        let cert = &self.certificate.factorization;
        ConvexModelFile {
            version: MODEL_FILE_VERSION,
            kind: "convex".into(),
            representation: self.representation,
            kernel: self.kernel,
            anchors: rows_of(&self.anchors),
            anchor_jitter: self.anchor_jitter,
            coefficients: self.coefficients.iter().copied().collect(),
            grid: rows_of(&self.grid),
            gammas: self.gammas.iter().map(row_major).collect(),
            constraint_scale: self.constraint_scale,
            landmarks: rows_of(cert.anchors()),
            landmark_jitter: cert.jitter(),
            b: row_major(&self.certificate.b),
            hyperparameters: self.hyperparameters.clone(),
        }
    }

    pub fn from_file(file: ConvexModelFile) -> Result<Self> {
        if file.version != MODEL_FILE_VERSION {
            return Err(SosError::Version { found: file.version, expected: MODEL_FILE_VERSION });
        }
        if file.kind != "convex" {
            return Err(SosError::Format(format!("expected a convex model, found `{}`", file.kind)));
        }
        let kernel = KernelSpec::new(file.kernel.family, file.kernel.sigma)?;
        kernel.require_derivatives()?;
        let anchors = points_from_rows(&file.anchors)?;
        let grid = points_from_rows(&file.grid)?;
        let landmarks = points_from_rows(&file.landmarks)?;
        let p = anchors.ncols();
        if grid.ncols() != p || landmarks.ncols() != p {
            return Err(SosError::Format("anchors, grid and landmarks must share a dimension".into()));
        }
        if file.coefficients.len() != anchors.nrows() {
            return Err(SosError::Format(format!(
                "{} coefficients for {} anchors",
                file.coefficients.len(),
                anchors.nrows()
            )));
        }
        if file.gammas.len() != grid.nrows() || file.gammas.iter().any(|g| g.len() != p * p) {
            return Err(SosError::Format("one p x p multiplier per grid point is required".into()));
        }
        let size = landmarks.nrows() * p;
        if file.b.len() != size * size {
            return Err(SosError::Format(format!("B has {} entries, expected {}", file.b.len(), size * size)));
        }
        let anchor_upper = match file.representation {
            Representation::Approximate => {
                let gram = kernel.gram(&anchors)?;
                Some(chol_upper_exact(&gram, file.anchor_jitter).ok_or(SosError::Indefinite { jitter: file.anchor_jitter })?)
            }
            Representation::Exact => None,
        };
        let fact = GramFactorization::with_jitter(kernel, landmarks, p, file.landmark_jitter)?;
        let certificate = SosModel::new(fact, DMatrix::from_row_slice(size, size, &file.b))?;
        Ok(Self {
            representation: file.representation,
            kernel,
            anchors,
            coefficients: DVector::from_vec(file.coefficients),
            grid,
            gammas: file.gammas.iter().map(|g| DMatrix::from_row_slice(p, p, g)).collect(),
            constraint_scale: file.constraint_scale,
            certificate,
            hyperparameters: file.hyperparameters,
            anchor_jitter: file.anchor_jitter,
            anchor_upper,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path, &self.to_file())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(crate::io::read_json(path)?)
    }
}

/// On-disk representation of a [`ConvexModel`]. Matrices are row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvexModelFile {
    pub version: u32,
    pub kind: String,
    pub representation: Representation,
    pub kernel: KernelSpec,
    pub anchors: Vec<Vec<f64>>,
    pub anchor_jitter: f64,
    pub coefficients: Vec<f64>,
    pub grid: Vec<Vec<f64>>,
    pub gammas: Vec<Vec<f64>>,
    pub constraint_scale: f64,
    pub landmarks: Vec<Vec<f64>>,
    pub landmark_jitter: f64,
    pub b: Vec<f64>,
    #[serde(default)]
    pub hyperparameters: BTreeMap<String, f64>,
}

/// A fitted model with its multipliers and solve report.
#[derive(Debug, Clone)]
pub struct ConvexFit {
    pub model: ConvexModel,
    pub gammas: Blocks,
    pub report: SolveReport,
}

#[cfg(test)]
mod tests;
