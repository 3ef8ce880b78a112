//! Accelerated first-order minimization in `R^m`.
//!
//! Two schemes are provided: constant-momentum Nesterov iterations for
//! problems with known strong convexity and smoothness constants, and FISTA
//! with backtracking on the Lipschitz estimate for merely convex problems.
//! Both use function-value restarts.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Which algorithm minimizes a dual objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    /// Nesterov momentum (fixed step when constants are known, FISTA with
    /// backtracking otherwise).
    Accelerated,
    /// Semismooth Newton with an Armijo line search.
    Newton,
}

impl std::str::FromStr for SolverKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "accelerated" | "agd" => Ok(Self::Accelerated),
            "newton" => Ok(Self::Newton),
            other => Err(format!("unknown solver `{other}` (expected accelerated or newton)")),
        }
    }
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Accelerated => "accelerated",
            Self::Newton => "newton",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Stopping tolerance handed to the solver.
    pub tol: f64,
    pub max_iters: usize,
    /// A fit counts as converged when `|gap| <= gap_tol * (1 + |primal|)`.
    pub gap_tol: f64,
    /// `None` picks the problem's default solver.
    #[serde(default)]
    pub solver: Option<SolverKind>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iters: 50_000, gap_tol: 1e-6, solver: None }
    }
}

impl FitOptions {
    pub fn with_solver(mut self, solver: SolverKind) -> Self {
        self.solver = Some(solver);
        self
    }

    pub(crate) fn agd(&self) -> AgdOptions {
        AgdOptions { tol: self.tol, max_iters: self.max_iters }
    }
}

/// Diagnostics of a dual solve. Objectives are in the primal's sign
/// convention, so `dual_objective <= primal_objective` up to rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_secs: f64,
    pub solver: SolverKind,
    /// Best dual value (primal sign) after each iteration.
    #[serde(skip)]
    pub dual_trace: Vec<f64>,
    /// Largest equality-constraint violation, for constrained problems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint_residual: Option<f64>,
}

impl SolveReport {
    pub fn relative_gap(&self) -> f64 {
        self.gap.abs() / (1.0 + self.primal_objective.abs())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AgdOptions {
    /// Relative tolerance for the objective change and the gradient norm.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for AgdOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iters: 50_000 }
    }
}

#[derive(Debug, Clone)]
pub struct AgdOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Best objective value seen after each iteration.
    pub best_trace: Vec<f64>,
}

/// Number of consecutive flat iterations that count as convergence.
const STALL_WINDOW: usize = 10;

pub(crate) struct Stopper {
    tol: f64,
    last: f64,
    small_steps: usize,
}

impl Stopper {
    pub(crate) fn new(tol: f64) -> Self {
        Self { tol, last: f64::INFINITY, small_steps: 0 }
    }

    pub(crate) fn check(&mut self, value: f64, grad_norm: f64) -> bool {
        if grad_norm <= self.tol * (1.0 + value.abs()) {
            return true;
        }
        let rel = (self.last - value).abs() / (1.0 + value.abs());
        self.last = value;
        // a flat objective only counts once the gradient is moderately small
        if rel < self.tol && grad_norm <= self.tol.sqrt() * (1.0 + value.abs()) {
            self.small_steps += 1;
        } else {
            self.small_steps = 0;
        }
        self.small_steps >= STALL_WINDOW
    }
}

/// Nesterov's constant-momentum method for a `mu`-strongly convex,
/// `l`-smooth objective, with step `1 / l`.
pub fn strongly_convex<F>(mut eval: F, x0: DVector<f64>, mu: f64, l: f64, opts: AgdOptions) -> AgdOutcome
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let q = (mu / l).clamp(0.0, 1.0);
    let beta = (1.0 - q.sqrt()) / (1.0 + q.sqrt());
    let step = 1.0 / l;

    let mut x = x0.clone();
    let mut x_prev = x0;
    let mut stopper = Stopper::new(opts.tol);
    let mut best = f64::INFINITY;
    let mut best_x = x.clone();
    let mut best_grad = f64::INFINITY;
    let mut best_trace = Vec::new();
    let mut last_value = f64::INFINITY;
    let mut momentum = true;

    for it in 1..=opts.max_iters {
        let y = if momentum { &x + (&x - &x_prev) * beta } else { x.clone() };
        let (value, grad) = eval(&y);
        let gnorm = grad.norm();
        if value < best {
            best = value;
            best_x.copy_from(&y);
            best_grad = gnorm;
        }
        best_trace.push(best);
        if stopper.check(value, gnorm) {
            return AgdOutcome { x: y, value, grad_norm: gnorm, iterations: it, converged: true, best_trace };
        }
        // function-value restart
        momentum = value <= last_value;
        last_value = value;
        let next = &y - grad * step;
        if momentum {
            x_prev = std::mem::replace(&mut x, next);
        } else {
            x_prev.copy_from(&next);
            x = next;
        }
    }
    AgdOutcome { x: best_x, value: best, grad_norm: best_grad, iterations: opts.max_iters, converged: false, best_trace }
}

/// FISTA with backtracking: the Lipschitz estimate is doubled until the
/// sufficient-decrease test passes, and relaxed by a constant factor after
/// each accepted step.
pub fn backtracking<F>(mut eval: F, x0: DVector<f64>, l0: f64, opts: AgdOptions) -> AgdOutcome
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    const RELAX: f64 = 0.9;
    let mut lip = l0.max(f64::MIN_POSITIVE);
    let mut x = x0.clone();
    let mut x_prev = x0;
    let (mut fx, mut gx) = eval(&x);
    let mut t = 1.0f64;
    let mut stopper = Stopper::new(opts.tol);
    let mut best_trace = vec![fx];

    for it in 1..=opts.max_iters {
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        let (y, fy, gy) = if beta > 0.0 {
            let y = &x + (&x - &x_prev) * beta;
            let (fy, gy) = eval(&y);
            (y, fy, gy)
        } else {
            (x.clone(), fx, gx.clone())
        };
        let gy_sq = gy.norm_squared();
        let (cand, fc, gc) = loop {
            let cand = &y - &gy / lip;
            let (fc, gc) = eval(&cand);
            if fc <= fy - 0.5 * gy_sq / lip + 1e-14 * fy.abs() || lip > 1e300 {
                break (cand, fc, gc);
            }
            lip *= 2.0;
        };
        lip *= RELAX;

        if fc > fx {
            // restart from the current point without momentum
            t = 1.0;
            x_prev.copy_from(&x);
        } else {
            t = t_next;
            x_prev = std::mem::replace(&mut x, cand);
            fx = fc;
            gx = gc;
        }
        best_trace.push(fx);
        let gnorm = gx.norm();
        if stopper.check(fx, gnorm) {
            return AgdOutcome { x, value: fx, grad_norm: gnorm, iterations: it, converged: true, best_trace };
        }
    }
    let grad_norm = gx.norm();
    AgdOutcome { x, value: fx, grad_norm, iterations: opts.max_iters, converged: false, best_trace }
}
