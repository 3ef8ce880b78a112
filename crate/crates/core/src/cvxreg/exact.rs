//! Exact representation `f = sum_i beta_i k_{x_i} + c sum_j <Gamma_j, d^2 k_{v_j}>`
//! with `c = 1 / (2 rho)`.
//!
//! For fixed multipliers the inner problem over `f` is a ridge regression
//! whose solution is `beta = (K + n rho I)^{-1} (y - c h)` with
//! `h = D gamma`. The dual objective is `-V(Gamma) + |[S]_-|^2 / (2 lambda2)`,
//! where `V` is the value of the inner problem including `-<f, phi>`.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{check_blocks, check_grid, flatten, run_dual, second_derivative_matrix, ConvexFit, ConvexModel, ConvexParams, HessianCertificate, Representation};
use crate::agd::{FitOptions, SolveReport};
use crate::dual::{coord_columns, from_coords, to_coords, Blocks, QuadNegDual};
use crate::error::{Result, SosError};
use crate::io::ScalarDataset;
use crate::kernels::{rows_of, KernelSpec};

#[derive(Debug, Clone)]
pub struct ExactProblem {
    params: ConvexParams,
    data: ScalarDataset,
    grid: DMatrix<f64>,
    gram: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    d2: DMatrix<f64>,
    q: DMatrix<f64>,
    /// `(K + n rho I)^{-1} D` in multiplier coordinates.
    wd: DMatrix<f64>,
    /// `(K + n rho I)^{-1} y`.
    wy: DVector<f64>,
    cert: HessianCertificate,
    dual: QuadNegDual,
}

/// `Q[(j, a, b), (k, r, s)] = d^4 k(v_j, v_k) / dv_a dv_b dv'_r dv'_s`.
fn fourth_derivative_matrix(kernel: &KernelSpec, grid: &DMatrix<f64>) -> DMatrix<f64> {
    let p = grid.ncols();
    let vs = rows_of(grid);
    let m = vs.len() * p * p;
    let mut q = DMatrix::zeros(m, m);
    for (j, vj) in vs.iter().enumerate() {
        for (k, vk) in vs.iter().enumerate().take(j + 1) {
            for a in 0..p {
                for b in 0..p {
                    for r in 0..p {
                        for s in 0..p {
                            let val = kernel.d4_unchecked(vj, vk, [a, b, r, s]);
                            let row = (j * p + a) * p + b;
                            let col = (k * p + r) * p + s;
                            q[(row, col)] = val;
                            q[(col, row)] = val;
                        }
                    }
                }
            }
        }
    }
    q
}

impl ExactProblem {
    pub fn new(data: &ScalarDataset, grid: Option<&DMatrix<f64>>, params: &ConvexParams) -> Result<Self> {
        params.validate()?;
        let grid = grid.cloned().unwrap_or_else(|| data.inputs.clone());
        check_grid(data.dim(), &grid)?;
        let n = data.len() as f64;
        let p = grid.ncols();
        let kernel = params.kernel;
        let gram = kernel.gram(&data.inputs)?;
        let mut shifted = gram.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += n * params.rho;
        }
        let chol = Cholesky::new(shifted).ok_or(SosError::Indefinite { jitter: 0.0 })?;
        let d2 = second_derivative_matrix(&kernel, &data.inputs, &grid);
        let q = fourth_derivative_matrix(&kernel, &grid);
        let d2_u = coord_columns(&d2, p);
        let q_u = coord_columns(&coord_columns(&q, p).transpose(), p);
        let wd = chol.solve(&d2_u);
        let wy = chol.solve(&DVector::from_column_slice(&data.outputs));
        let cert = HessianCertificate::new(kernel, &grid, params.nystrom.as_ref(), params.reg)?;
        let c = 0.5 / params.rho;
        let hq = (q_u - d2_u.transpose() * &wd) * c;
        let mut problem = Self {
            params: params.clone(),
            data: data.clone(),
            grid,
            gram,
            chol,
            d2,
            q,
            wd,
            wy,
            cert: cert.clone(),
            dual: QuadNegDual {
                hq: (&hq + hq.transpose()) * 0.5,
                lin: DVector::zeros(0),
                constant: 0.0,
                neg: cert.term().clone(),
                factor: None,
            },
        };
        // the quadratic part of D is -V, with gradient H_f(v_j)
        let (v0, _, _, _) = problem.inner(&DVector::zeros(problem.d2.ncols()));
        problem.dual.lin = d2_u.transpose() * &problem.wy;
        problem.dual.constant = -v0;
        Ok(problem)
    }

    fn p(&self) -> usize {
        self.grid.ncols()
    }

    pub fn grid_len(&self) -> usize {
        self.grid.nrows()
    }

    fn scale(&self) -> f64 {
        0.5 / self.params.rho
    }

    /// Weights of `k_{x_i}` for the inner minimizer.
    pub fn coefficients(&self, gammas: &[DMatrix<f64>]) -> DVector<f64> {
        &self.wy - &self.wd * to_coords(gammas, self.p()) * self.scale()
    }

    /// Inner value, fit term, Hessians at the grid and coefficients for the
    /// flattened multipliers `gamma`.
    fn inner(&self, gamma: &DVector<f64>) -> (f64, f64, DVector<f64>, DVector<f64>) {
        let n = self.data.len() as f64;
        let c = self.scale();
        let rho = self.params.rho;
        let h = &self.d2 * gamma;
        let beta = self.chol.solve(&(DVector::from_column_slice(&self.data.outputs) - &h * c));
        let qg = &self.q * gamma;
        let kb = &self.gram * &beta;
        let y = DVector::from_column_slice(&self.data.outputs);
        let fx = &kb + &h * c;
        let gqg = gamma.dot(&qg);
        let norm_f = beta.dot(&kb) + 2.0 * c * beta.dot(&h) + c * c * gqg;
        let f_phi = beta.dot(&h) + c * gqg;
        let fit = (fx - y).norm_squared() / n + rho * norm_f;
        let hess = self.d2.transpose() * &beta + qg * c;
        (fit - f_phi, fit, hess, beta)
    }

    pub fn dual_objective_grad(&self, gammas: &[DMatrix<f64>]) -> Result<(f64, Blocks)> {
        check_blocks(gammas, self.grid_len(), self.p())?;
        let (value, grad) = self.dual.value_grad(&to_coords(gammas, self.p()));
        Ok((value, from_coords(&grad, self.p())))
    }

    /// Primal objective at the recovered point and the dual function value.
    pub fn objectives(&self, gammas: &[DMatrix<f64>]) -> Result<(f64, f64)> {
        check_blocks(gammas, self.grid_len(), self.p())?;
        let (v, fit, _, _) = self.inner(&flatten(gammas, self.p()));
        let neg = self.cert.evaluate(gammas);
        Ok((fit + self.params.reg.omega(&neg.b), v - neg.value))
    }

    /// Upper estimate of the smoothness constant of the dual.
    pub fn lipschitz_estimate(&self) -> f64 {
        self.dual.lipschitz_estimate()
    }

    pub fn solve(&self, warm: Option<&[DMatrix<f64>]>, opts: &FitOptions) -> Result<ConvexFit> {
        let start = Instant::now();
        let run = run_dual(&self.dual, warm, opts)?;
        let (primal, dual) = self.objectives(&run.gammas)?;
        let gap = primal - dual;
        let report = SolveReport {
            primal_objective: primal,
            dual_objective: dual,
            gap,
            iterations: run.iterations,
            converged: run.converged(primal, gap, opts),
            wall_time_secs: start.elapsed().as_secs_f64(),
            solver: run.solver,
            dual_trace: run.trace.iter().map(|v| -v).collect(),
            constraint_residual: Some(run.residual),
        };
        let model = ConvexModel {
            representation: Representation::Exact,
            kernel: self.params.kernel,
            anchors: self.data.inputs.clone(),
            coefficients: self.coefficients(&run.gammas),
            grid: self.grid.clone(),
            gammas: run.gammas.clone(),
            constraint_scale: self.scale(),
            certificate: self.cert.clone().into_model(run.neg.b)?,
            hyperparameters: self.params.hyperparameters(),
            anchor_jitter: 0.0,
            anchor_upper: None,
        };
        Ok(ConvexFit { model, gammas: run.gammas, report })
    }

    /// `(K + n rho I)^{-1} y`, the ridge solution obtained at `Gamma = 0`.
    pub fn ridge_coefficients(&self) -> DVector<f64> {
        self.wy.clone()
    }
}

/// Fits the exact (derivative-reproducing) representation.
pub fn fit_exact(data: &ScalarDataset, grid: Option<&DMatrix<f64>>, params: &ConvexParams, opts: &FitOptions) -> Result<ConvexFit> {
    ExactProblem::new(data, grid, params)?.solve(None, opts)
}
