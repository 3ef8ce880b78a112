//! Approximate representation `f = sum_i alpha_i k(., x_i)`.
//!
//! The expansion is parameterized as `alpha = R^{-1} beta` with `R^T R = K`,
//! so that `f(X) = R^T beta` and `|f|_H = |beta|`. The dual then reads
//!
//! `D(Gamma) = Z^T A^{-1} Z + |[S]_-|^2 / (2 lambda2)`,
//! `Z = (1/2) E gamma + R y / n`, `A = R R^T / n + rho I`,
//!
//! where column `(j, a, b)` of `E` is `R^{-T}` applied to the second
//! derivatives `d^2 k(x_i, v_j) / dv_a dv_b`. It is minimized; the optimal
//! coefficients are `beta = A^{-1} Z` and `B = [S]_- / lambda2`.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{check_blocks, check_grid, run_dual, second_derivative_matrix, ConvexFit, ConvexModel, ConvexParams, HessianCertificate, Representation};
use crate::agd::{FitOptions, SolveReport};
use crate::dual::{coord_columns, from_coords, to_coords, Blocks, QuadNegDual};
use crate::error::{Result, SosError};
use crate::io::ScalarDataset;
use crate::linalg::chol_upper_jitter;

#[derive(Debug, Clone)]
pub struct ApproxProblem {
    params: ConvexParams,
    data: ScalarDataset,
    grid: DMatrix<f64>,
    upper: DMatrix<f64>,
    jitter: f64,
    /// `A^{-1} E` in multiplier coordinates.
    ae: DMatrix<f64>,
    /// `A^{-1} R y / n`.
    a0: DVector<f64>,
    cert: HessianCertificate,
    dual: QuadNegDual,
}

impl ApproxProblem {
    /// Sets up the dual; `grid` defaults to the training inputs.
    pub fn new(data: &ScalarDataset, grid: Option<&DMatrix<f64>>, params: &ConvexParams) -> Result<Self> {
        params.validate()?;
        let grid = grid.cloned().unwrap_or_else(|| data.inputs.clone());
        check_grid(data.dim(), &grid)?;
        let n = data.len() as f64;
        let p = grid.ncols();
        let kernel = params.kernel;
        let chol = chol_upper_jitter(&kernel.gram(&data.inputs)?)?;
        let upper = chol.upper;
        let d2 = coord_columns(&second_derivative_matrix(&kernel, &data.inputs, &grid), p);
        let e = upper.tr_solve_upper_triangular(&d2).ok_or(SosError::Indefinite { jitter: chol.jitter })?;
        let mut a = &upper * upper.transpose() / n;
        for i in 0..a.nrows() {
            a[(i, i)] += params.rho;
        }
        let a_chol = Cholesky::new(a).ok_or(SosError::Indefinite { jitter: chol.jitter })?;
        let y = DVector::from_column_slice(&data.outputs);
        let c0 = &upper * &y / n;
        let ae = a_chol.solve(&e);
        let a0 = a_chol.solve(&c0);
        let cert = HessianCertificate::new(kernel, &grid, params.nystrom.as_ref(), params.reg)?;
        // Z^T A^{-1} Z = |L^{-1} Z|^2 with A = L L^T
        let l = a_chol.l();
        let g = l.solve_lower_triangular(&(e * 0.5)).ok_or(SosError::Indefinite { jitter: chol.jitter })?;
        let g0 = l.solve_lower_triangular(&c0).ok_or(SosError::Indefinite { jitter: chol.jitter })?;
        let dual = QuadNegDual::factored(g, g0, 0.0, cert.term().clone());
        Ok(Self { params: params.clone(), data: data.clone(), grid, upper, jitter: chol.jitter, ae, a0, cert, dual })
    }

    fn p(&self) -> usize {
        self.grid.ncols()
    }

    pub fn grid_len(&self) -> usize {
        self.grid.nrows()
    }

    /// `beta = A^{-1} Z(Gamma)`.
    pub fn coefficients(&self, gammas: &[DMatrix<f64>]) -> DVector<f64> {
        &self.ae * to_coords(gammas, self.p()) * 0.5 + &self.a0
    }

    /// Dual objective `D` (minimized) and its gradient
    /// `H_f(v_j) - Psi_j^T B Psi_j`.
    pub fn dual_objective_grad(&self, gammas: &[DMatrix<f64>]) -> Result<(f64, Blocks)> {
        check_blocks(gammas, self.grid_len(), self.p())?;
        let (value, grad) = self.dual.value_grad(&to_coords(gammas, self.p()));
        Ok((value, from_coords(&grad, self.p())))
    }

    /// `(1/n) |f(X) - y|^2 + rho |f|_H^2 + Omega(B)`.
    pub fn primal_objective(&self, beta: &DVector<f64>, b: &DMatrix<f64>) -> f64 {
        let n = self.data.len() as f64;
        let y = DVector::from_column_slice(&self.data.outputs);
        let resid = self.upper.transpose() * beta - y;
        resid.norm_squared() / n + self.params.rho * beta.norm_squared() + self.params.reg.omega(b)
    }

    fn mean_square_output(&self) -> f64 {
        self.data.outputs.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64
    }

    /// Value of the concave dual function, `|y|^2 / n - D(Gamma)`.
    pub fn dual_value(&self, gammas: &[DMatrix<f64>]) -> Result<f64> {
        Ok(self.mean_square_output() - self.dual_objective_grad(gammas)?.0)
    }

    /// Primal objective at the recovered point and the dual function value.
    pub fn objectives(&self, gammas: &[DMatrix<f64>]) -> Result<(f64, f64)> {
        check_blocks(gammas, self.grid_len(), self.p())?;
        let b = self.cert.evaluate(gammas).b;
        Ok((self.primal_objective(&self.coefficients(gammas), &b), self.dual_value(gammas)?))
    }

    /// Upper estimate of the smoothness constant of `D`.
    pub fn lipschitz_estimate(&self) -> f64 {
        self.dual.lipschitz_estimate()
    }

    pub fn solve(&self, warm: Option<&[DMatrix<f64>]>, opts: &FitOptions) -> Result<ConvexFit> {
        let start = Instant::now();
        let run = run_dual(&self.dual, warm, opts)?;
        let beta = self.coefficients(&run.gammas);
        let primal = self.primal_objective(&beta, &run.neg.b);
        let yy = self.mean_square_output();
        let dual = yy - run.value;
        let gap = primal - dual;
        let report = SolveReport {
            primal_objective: primal,
            dual_objective: dual,
            gap,
            iterations: run.iterations,
            converged: run.converged(primal, gap, opts),
            wall_time_secs: start.elapsed().as_secs_f64(),
            solver: run.solver,
            dual_trace: run.trace.iter().map(|v| yy - v).collect(),
            constraint_residual: Some(run.residual),
        };
        let model = ConvexModel {
            representation: Representation::Approximate,
            kernel: self.params.kernel,
            anchors: self.data.inputs.clone(),
            coefficients: beta,
            grid: self.grid.clone(),
            gammas: run.gammas.clone(),
            constraint_scale: 0.0,
            certificate: self.cert.clone().into_model(run.neg.b)?,
            hyperparameters: self.params.hyperparameters(),
            anchor_jitter: self.jitter,
            anchor_upper: Some(self.upper.clone()),
        };
        Ok(ConvexFit { model, gammas: run.gammas, report })
    }
}

/// Fits the approximate representation.
pub fn fit_approx(data: &ScalarDataset, grid: Option<&DMatrix<f64>>, params: &ConvexParams, opts: &FitOptions) -> Result<ConvexFit> {
    ApproxProblem::new(data, grid, params)?.solve(None, opts)
}
