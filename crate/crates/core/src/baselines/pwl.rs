//! Max-affine convex regression.
//!
//! The fit solves `min (1/n) sum_i (y_i - theta_i)^2` over values `theta`
//! and subgradients `zeta_i`, subject to `theta_i + zeta_i^T (x_j - x_i) <= theta_j`
//! for every ordered pair, with an OSQP-style ADMM iteration. The iterate is
//! then replaced by the values and active slopes of its own max-affine
//! envelope, which is feasible by construction.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SosError};
use crate::io::ScalarDataset;
use crate::kernels::{points_from_rows, rows_of};
use crate::sos::MODEL_FILE_VERSION;

/// `f(x) = max_i {theta_i + zeta_i^T (x - x_i)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PwlModel {
    pub anchors: DMatrix<f64>,
    pub values: DVector<f64>,
    /// `n x p`, row `i` is `zeta_i`.
    pub slopes: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PwlOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub rho: f64,
    pub sigma: f64,
    pub relaxation: f64,
}

impl Default for PwlOptions {
    fn default() -> Self {
        Self { tol: 1e-7, max_iters: 20_000, rho: 0.1, sigma: 1e-6, relaxation: 1.6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlReport {
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `max (A z - w)` at the last ADMM iterate.
    pub primal_residual: f64,
    /// `|P z + q + A^T y|_inf` at the last ADMM iterate.
    pub dual_residual: f64,
    /// Largest constraint violation of the returned model.
    pub max_violation: f64,
}

#[derive(Debug, Clone)]
pub struct PwlFit {
    pub model: PwlModel,
    pub report: PwlReport,
}

/// Constraint operator over the ordered pairs `(i, j)`, `i != j`, stored as
/// an `n x n` array with an unused diagonal.
struct Pairs<'a> {
    x: &'a [Vec<f64>],
    n: usize,
    p: usize,
}

impl Pairs<'_> {
    fn dim(&self) -> usize {
        self.n * (1 + self.p)
    }

    fn apply(&self, z: &DVector<f64>) -> DVector<f64> {
        let (n, p) = (self.n, self.p);
        let mut out = DVector::zeros(n * n);
        for i in 0..n {
            let zi = &z.as_slice()[n + i * p..n + (i + 1) * p];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let slope: f64 = (0..p).map(|a| zi[a] * (self.x[j][a] - self.x[i][a])).sum();
                out[i * n + j] = z[i] - z[j] + slope;
            }
        }
        out
    }

    fn apply_t(&self, v: &DVector<f64>) -> DVector<f64> {
        let (n, p) = (self.n, self.p);
        let mut out = DVector::zeros(self.dim());
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = v[i * n + j];
                out[i] += w;
                out[j] -= w;
                for a in 0..p {
                    out[n + i * p + a] += w * (self.x[j][a] - self.x[i][a]);
                }
            }
        }
        out
    }

    fn gram(&self) -> DMatrix<f64> {
        let (n, p) = (self.n, self.p);
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        let mut idx = Vec::with_capacity(2 + p);
        let mut val = Vec::with_capacity(2 + p);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                idx.clear();
                val.clear();
                idx.extend([i, j]);
                val.extend([1.0, -1.0]);
                for a in 0..p {
                    idx.push(n + i * p + a);
                    val.push(self.x[j][a] - self.x[i][a]);
                }
                for (r, vr) in idx.iter().zip(&val) {
                    for (c, vc) in idx.iter().zip(&val) {
                        m[(*r, *c)] += vr * vc;
                    }
                }
            }
        }
        m
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

fn factor(gram: &DMatrix<f64>, quad: &DVector<f64>, sigma: f64, rho: f64) -> Result<Cholesky<f64, Dyn>> {
    let mut m = gram * rho;
    for i in 0..m.nrows() {
        m[(i, i)] += quad[i] + sigma;
    }
    Cholesky::new(m).ok_or(SosError::Indefinite { jitter: sigma })
}

/// Fits with default ADMM settings and the given tolerance and budget.
pub fn pwl_fit(data: &ScalarDataset, tol: f64, max_iters: usize) -> Result<PwlFit> {
    pwl_fit_with(data, &PwlOptions { tol, max_iters, ..PwlOptions::default() })
}

pub fn pwl_fit_with(data: &ScalarDataset, opts: &PwlOptions) -> Result<PwlFit> {
    if !(opts.tol > 0.0) || !(opts.rho > 0.0) || !(opts.sigma > 0.0) || !(opts.relaxation > 0.0 && opts.relaxation < 2.0) {
        return Err(SosError::InvalidParameter("ADMM needs tol, rho, sigma > 0 and relaxation in (0, 2)".into()));
    }
    let n = data.len();
    let p = data.dim();
    let xs = rows_of(&data.inputs);
    let ops = Pairs { x: &xs, n, p };
    let dim = ops.dim();
    let m = n * n;

    // objective 0.5 z^T P z + q^T z with P = diag(2/n on theta, 0 on zeta)
    let quad = DVector::from_fn(dim, |i, _| if i < n { 2.0 / n as f64 } else { 0.0 });
    let q = DVector::from_fn(dim, |i, _| if i < n { -2.0 * data.outputs[i] / n as f64 } else { 0.0 });
    let gram = ops.gram();

    let mut rho = opts.rho;
    let mut chol = factor(&gram, &quad, opts.sigma, rho)?;
    let mut z = DVector::zeros(dim);
    z.rows_mut(0, n).copy_from_slice(&data.outputs);
    let mut w = ops.apply(&z).map(|v| v.min(0.0));
    let mut y = DVector::<f64>::zeros(m);
    let alpha = opts.relaxation;

    let mut iterations = 0;
    let mut converged = false;
    let (mut prim, mut dual) = (f64::INFINITY, f64::INFINITY);
    while iterations < opts.max_iters {
        iterations += 1;
        let rhs = &z * opts.sigma - &q + ops.apply_t(&(&w * rho - &y));
        let z_tilde = chol.solve(&rhs);
        let w_tilde = ops.apply(&z_tilde);
        z = &z_tilde * alpha + &z * (1.0 - alpha);
        let w_relaxed = &w_tilde * alpha + &w * (1.0 - alpha);
        let w_new = (&w_relaxed + &y / rho).map(|v| v.min(0.0));
        y += (&w_relaxed - &w_new) * rho;
        w = w_new;

        if iterations % 10 == 0 || iterations == opts.max_iters {
            let az = ops.apply(&z);
            let pz = z.component_mul(&quad);
            let aty = ops.apply_t(&y);
            prim = inf_norm(&(&az - &w));
            dual = inf_norm(&(&pz + &q + &aty));
            let prim_scale = inf_norm(&az).max(inf_norm(&w));
            let dual_scale = inf_norm(&pz).max(inf_norm(&aty)).max(inf_norm(&q));
            if prim <= opts.tol * (1.0 + prim_scale) && dual <= opts.tol * (1.0 + dual_scale) {
                converged = true;
                break;
            }
            if iterations % 50 == 0 {
                let ratio = ((prim / (prim_scale + 1e-30)) / (dual / (dual_scale + 1e-30) + 1e-30)).sqrt();
                let next = (rho * ratio).clamp(1e-6, 1e6);
                if next > 5.0 * rho || next < rho / 5.0 {
                    rho = next;
                    chol = factor(&gram, &quad, opts.sigma, rho)?;
                }
            }
        }
    }

    let raw = PwlModel {
        anchors: data.inputs.clone(),
        values: z.rows(0, n).into_owned(),
        slopes: DMatrix::from_fn(n, p, |i, a| z[n + i * p + a]),
    };
    let model = raw.envelope();
    let objective = model.values.iter().zip(&data.outputs).map(|(t, y)| (t - y).powi(2)).sum::<f64>() / n as f64;
    let report = PwlReport {
        objective,
        iterations,
        converged,
        primal_residual: prim,
        dual_residual: dual,
        max_violation: model.max_violation(),
    };
    Ok(PwlFit { model, report })
}

impl PwlModel {
    fn piece(&self, i: usize, x: &[f64]) -> f64 {
        self.values[i] + (0..x.len()).map(|a| self.slopes[(i, a)] * (x[a] - self.anchors[(i, a)])).sum::<f64>()
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.anchors.ncols() {
            return Err(SosError::DimensionMismatch { expected: self.anchors.ncols(), got: x.len() });
        }
        Ok((0..self.values.len()).map(|i| self.piece(i, x)).fold(f64::NEG_INFINITY, f64::max))
    }

    /// Values and slopes of the max-affine envelope at the anchors.
    pub fn envelope(&self) -> PwlModel {
        let n = self.values.len();
        let mut values = self.values.clone();
        let mut slopes = self.slopes.clone();
        for j in 0..n {
            let xj: Vec<f64> = self.anchors.row(j).iter().copied().collect();
            let (best, val) = (0..n).map(|i| (i, self.piece(i, &xj))).fold((j, self.values[j]), |acc, c| if c.1 > acc.1 { c } else { acc });
            values[j] = val;
            slopes.set_row(j, &self.slopes.row(best));
        }
        PwlModel { anchors: self.anchors.clone(), values, slopes }
    }

    /// `max_{i, j} theta_i + zeta_i^T (x_j - x_i) - theta_j`, clipped at 0.
    pub fn max_violation(&self) -> f64 {
        let n = self.values.len();
        let mut worst = 0.0f64;
        for j in 0..n {
            let xj: Vec<f64> = self.anchors.row(j).iter().copied().collect();
            for i in 0..n {
                worst = worst.max(self.piece(i, &xj) - self.values[j]);
            }
        }
        worst
    }

    pub fn to_file(&self) -> PwlModelFile {
        PwlModelFile {
            version: MODEL_FILE_VERSION,
            kind: "pwl".into(),
            anchors: rows_of(&self.anchors),
            values: self.values.iter().copied().collect(),
            slopes: rows_of(&self.slopes),
        }
    }

    pub fn from_file(file: PwlModelFile) -> Result<Self> {
        if file.version != MODEL_FILE_VERSION {
            return Err(SosError::Version { found: file.version, expected: MODEL_FILE_VERSION });
        }
        if file.kind != "pwl" {
            return Err(SosError::Format(format!("expected a pwl model, found `{}`", file.kind)));
        }
        let anchors = points_from_rows(&file.anchors)?;
        let slopes = points_from_rows(&file.slopes)?;
        if file.values.len() != anchors.nrows() || slopes.shape() != anchors.shape() {
            return Err(SosError::Format("values and slopes must match the anchors".into()));
        }
        Ok(Self { anchors, values: DVector::from_vec(file.values), slopes })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path, &self.to_file())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(crate::io::read_json(path)?)
    }
}

/// Evaluates the max-affine predictor at every row of `queries`.
pub fn pwl_predict(model: &PwlModel, queries: &DMatrix<f64>) -> Result<Vec<f64>> {
    if queries.ncols() != model.anchors.ncols() {
        return Err(SosError::DimensionMismatch { expected: model.anchors.ncols(), got: queries.ncols() });
    }
    rows_of(queries).iter().map(|q| model.value(q)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PwlModelFile {
    pub version: u32,
    pub kind: String,
    pub anchors: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub slopes: Vec<Vec<f64>>,
}
