//! Regression of PSD-valued functions with the sum-of-squares model.
//!
//! The primal problem is
//! `min_{B >= 0} (1/2n) sum_i |F_B(x_i) - M_i|_F^2 + lambda1 tr B + (lambda2/2) |B|_F^2`
//! with one feature per data point. It is solved through its dual over
//! symmetric multipliers `Gamma_i`, which is `n`-strongly convex:
//!
//! `D(Gamma) = sum_i <Gamma_i, M_i> + (n/2) sum_i |Gamma_i|^2 + |[S]_-|^2 / (2 lambda2)`
//!
//! with `S = sum_i Psi_i Gamma_i Psi_i^T + lambda1 I`. The primal point is
//! `B = [S]_- / lambda2` and the duality gap equals `|grad D|^2 / (2n)`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::agd::{FitOptions, SolveReport, SolverKind};
use crate::dual::{from_coords, to_coords, Blocks, NegPartTerm, QuadNegDual};
use crate::error::{Result, SosError};
use crate::io::PsdDataset;
use crate::kernels::KernelSpec;
use crate::linalg::{self, frob_dot, negative_part_sym};
use crate::sos::{assemble, contract, GramFactorization, RegularizerSpec, SosModel};

/// Multipliers, the recovered coefficient matrix and the solve report.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub gammas: Blocks,
    pub b: DMatrix<f64>,
    pub report: SolveReport,
}

/// A PSD regression instance with its features precomputed.
#[derive(Debug, Clone)]
pub struct PsdProblem {
    factorization: GramFactorization,
    targets: Vec<DMatrix<f64>>,
    reg: RegularizerSpec,
    dual: QuadNegDual,
}

impl PsdProblem {
    pub fn new(data: &PsdDataset, kernel: KernelSpec, reg: RegularizerSpec) -> Result<Self> {
        let factorization = GramFactorization::build(kernel, data.inputs.clone(), data.d())?;
        let d = data.d();
        let lin = to_coords(&data.targets, d);
        let m = lin.len();
        let dual = QuadNegDual {
            hq: DMatrix::identity(m, m) * data.len() as f64,
            lin,
            constant: 0.0,
            neg: NegPartTerm::new(factorization.upper().clone(), d, reg),
            factor: None,
        };
        Ok(Self { factorization, targets: data.targets.clone(), reg, dual })
    }

    pub fn factorization(&self) -> &GramFactorization {
        &self.factorization
    }

    pub fn n(&self) -> usize {
        self.targets.len()
    }

    pub fn d(&self) -> usize {
        self.factorization.d()
    }

    fn s_matrix(&self, gammas: &[DMatrix<f64>]) -> DMatrix<f64> {
        assemble(self.factorization.upper(), gammas, self.d(), self.reg.lambda1)
    }

    fn check_blocks(&self, gammas: &[DMatrix<f64>]) -> Result<()> {
        if gammas.len() != self.n() {
            return Err(SosError::DimensionMismatch { expected: self.n(), got: gammas.len() });
        }
        for g in gammas {
            if g.nrows() != self.d() || g.ncols() != self.d() {
                return Err(SosError::DimensionMismatch { expected: self.d(), got: g.nrows() });
            }
        }
        Ok(())
    }

    fn require_lambda2(&self) -> Result<()> {
        if self.reg.lambda2 > 0.0 {
            Ok(())
        } else {
            Err(SosError::InvalidParameter("the smooth dual requires lambda2 > 0".into()))
        }
    }

    /// `(1/2n) sum_i |F_B(x_i) - M_i|^2 + Omega(B)`.
    pub fn primal_objective(&self, b: &DMatrix<f64>) -> Result<f64> {
        let size = self.n() * self.d();
        if b.nrows() != size || b.ncols() != size {
            return Err(SosError::DimensionMismatch { expected: size, got: b.nrows() });
        }
        let n = self.n() as f64;
        let mut loss = 0.0;
        for (i, m) in self.targets.iter().enumerate() {
            let w = self.factorization.upper().column(i).into_owned();
            let f = contract(w.as_slice(), b, self.d());
            loss += (f - m).norm_squared();
        }
        Ok(loss / (2.0 * n) + self.reg.omega(b))
    }

    /// Dual objective `D` (minimized) and its gradient.
    pub fn dual_objective_grad(&self, gammas: &[DMatrix<f64>]) -> Result<(f64, Blocks)> {
        self.require_lambda2()?;
        self.check_blocks(gammas)?;
        Ok(self.dual_unchecked(gammas))
    }

    fn dual_unchecked(&self, gammas: &[DMatrix<f64>]) -> (f64, Blocks) {
        let (value, grad) = self.dual.value_grad(&to_coords(gammas, self.d()));
        (value, from_coords(&grad, self.d()))
    }

    /// `B(Gamma) = [S]_- / lambda2`.
    pub fn primal_from_dual(&self, gammas: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
        self.require_lambda2()?;
        self.check_blocks(gammas)?;
        Ok(negative_part_sym(self.s_matrix(gammas)) / self.reg.lambda2)
    }

    /// For `lambda2 = 0` the dual is hard-constrained: returns the dual value
    /// `-sum <Gamma_i, M_i> - (n/2) sum |Gamma_i|^2` and `lambda_min(S)`; the
    /// value is a valid lower bound only when the latter is non-negative.
    pub fn constrained_dual(&self, gammas: &[DMatrix<f64>]) -> Result<(f64, f64)> {
        self.check_blocks(gammas)?;
        let n = self.n() as f64;
        let value: f64 = gammas.iter().zip(&self.targets).map(|(g, m)| -frob_dot(g, m) - 0.5 * n * g.norm_squared()).sum();
        let s = self.s_matrix(gammas);
        Ok((value, s.symmetric_eigenvalues().min()))
    }

    /// Smoothness constant `n + lambda_max(K o K) / lambda2` of `D`.
    pub fn lipschitz(&self) -> Result<f64> {
        self.require_lambda2()?;
        let r = self.factorization.upper();
        let k = r.transpose() * r;
        let had = k.component_mul(&k);
        Ok(self.n() as f64 + linalg::lambda_max(&had)? / self.reg.lambda2)
    }

    /// Minimizes the dual, starting from `warm` when given and from zero
    /// otherwise. The default solver is constant-momentum AGD with
    /// `mu = n` and the bound of [`Self::lipschitz`].
    pub fn solve(&self, warm: Option<&[DMatrix<f64>]>, opts: &FitOptions) -> Result<DualSolution> {
        self.require_lambda2()?;
        let start = Instant::now();
        let u0 = match warm {
            Some(w) => {
                self.check_blocks(w)?;
                to_coords(w, self.d())
            }
            None => DVector::zeros(self.dual.dim()),
        };
        let solver = opts.solver.unwrap_or(SolverKind::Accelerated);
        let strong = match solver {
            SolverKind::Accelerated => Some((self.n() as f64, self.lipschitz()?)),
            SolverKind::Newton => None,
        };
        let out = self.dual.minimize(u0, solver, strong, opts.agd());
        let gammas = from_coords(&out.x, self.d());
        let b = self.primal_from_dual(&gammas)?;
        let primal = self.primal_objective(&b)?;
        let dual = -out.value;
        let gap = (primal - dual).max(0.0);
        let converged = out.converged && gap <= opts.gap_tol * (1.0 + primal.abs());
        let report = SolveReport {
            primal_objective: primal,
            dual_objective: dual,
            gap,
            iterations: out.iterations,
            converged,
            wall_time_secs: start.elapsed().as_secs_f64(),
            solver,
            dual_trace: out.best_trace.iter().map(|v| -v).collect(),
            constraint_residual: None,
        };
        Ok(DualSolution { gammas, b, report })
    }

    pub fn into_model(self, b: DMatrix<f64>) -> Result<SosModel> {
        let sigma = self.factorization.kernel().sigma;
        let mut model = SosModel::new(self.factorization, b)?;
        model.hyperparameters.insert("lambda1".into(), self.reg.lambda1);
        model.hyperparameters.insert("lambda2".into(), self.reg.lambda2);
        model.hyperparameters.insert("sigma".into(), sigma);
        Ok(model)
    }
}

/// Fits a PSD sum-of-squares model to `data`.
pub fn fit(data: &PsdDataset, kernel: KernelSpec, reg: RegularizerSpec, opts: &FitOptions) -> Result<(SosModel, SolveReport)> {
    let problem = PsdProblem::new(data, kernel, reg)?;
    let sol = problem.solve(None, opts)?;
    Ok((problem.into_model(sol.b)?, sol.report))
}

/// Evaluates a fitted model at every row of `queries`.
pub fn predict(model: &SosModel, queries: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    model.predict(queries)
}
