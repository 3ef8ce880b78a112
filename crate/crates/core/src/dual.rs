//! Dual objectives of the form
//!
//! `D(u) = (1/2) u^T H u + c^T u + k + |[S(u)]_-|_F^2 / (2 lambda2)`,
//! `S(u) = lambda1 I + sum_j Psi_j Gamma_j Psi_j^T`,
//!
//! where `u` stacks the symmetric multipliers `Gamma_j` in orthonormal
//! coordinates (diagonal entries, then `sqrt(2)` times the strict upper
//! triangle). Both regression problems reduce to this shape.

use std::f64::consts::SQRT_2;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::agd::{self, AgdOptions, AgdOutcome, SolverKind, Stopper};
use crate::linalg;
use crate::sos::{assemble, contract, RegularizerSpec};

/// Matrix-valued blocks, one per constraint.
pub type Blocks = Vec<DMatrix<f64>>;

/// `(a, b)` with `a <= b`, in coordinate order.
pub(crate) fn sym_pairs(p: usize) -> Vec<(usize, usize)> {
    (0..p).flat_map(|a| (a..p).map(move |b| (a, b))).collect()
}

pub(crate) fn sym_dim(p: usize) -> usize {
    p * (p + 1) / 2
}

/// Orthonormal coordinates of (the symmetric part of) each block. The same
/// map turns a Frobenius gradient into a coordinate gradient.
pub(crate) fn to_coords(blocks: &[DMatrix<f64>], p: usize) -> DVector<f64> {
    let pairs = sym_pairs(p);
    let mut out = DVector::zeros(blocks.len() * pairs.len());
    for (j, g) in blocks.iter().enumerate() {
        for (k, &(a, b)) in pairs.iter().enumerate() {
            out[j * pairs.len() + k] = if a == b { g[(a, a)] } else { (g[(a, b)] + g[(b, a)]) / SQRT_2 };
        }
    }
    out
}

pub(crate) fn from_coords(u: &DVector<f64>, p: usize) -> Blocks {
    let pairs = sym_pairs(p);
    let k = pairs.len();
    (0..u.len() / k)
        .map(|j| {
            let mut g = DMatrix::zeros(p, p);
            for (c, &(a, b)) in pairs.iter().enumerate() {
                let v = u[j * k + c];
                if a == b {
                    g[(a, a)] = v;
                } else {
                    g[(a, b)] = v / SQRT_2;
                    g[(b, a)] = v / SQRT_2;
                }
            }
            g
        })
        .collect()
}

/// Re-expresses a matrix whose columns are indexed by full block entries
/// `(j p + a) p + b` in the coordinates of [`to_coords`].
pub(crate) fn coord_columns(m: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    let pairs = sym_pairs(p);
    let l = m.ncols() / (p * p);
    let mut out = DMatrix::zeros(m.nrows(), l * pairs.len());
    for j in 0..l {
        for (k, &(a, b)) in pairs.iter().enumerate() {
            let dst = j * pairs.len() + k;
            let ab = (j * p + a) * p + b;
            if a == b {
                out.set_column(dst, &m.column(ab));
            } else {
                let ba = (j * p + b) * p + a;
                out.set_column(dst, &((m.column(ab) + m.column(ba)) / SQRT_2));
            }
        }
    }
    out
}

/// `|[S]_-|^2 / (2 lambda2)` with `Psi_j = w_j (x) I_p`, `w_j` the columns
/// of `weights`.
#[derive(Debug, Clone)]
pub(crate) struct NegPartTerm {
    weights: DMatrix<f64>,
    p: usize,
    reg: RegularizerSpec,
}

/// Value, gradient pieces and the spectral data they came from.
#[derive(Debug, Clone)]
pub(crate) struct NegEval {
    pub value: f64,
    /// `B = [S]_- / lambda2`.
    pub b: DMatrix<f64>,
    /// `Psi_j^T B Psi_j`; the gradient of the term is minus these.
    pub sos: Blocks,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl NegPartTerm {
    pub(crate) fn new(weights: DMatrix<f64>, p: usize, reg: RegularizerSpec) -> Self {
        Self { weights, p, reg }
    }

    pub(crate) fn blocks(&self) -> usize {
        self.weights.ncols()
    }

    pub(crate) fn evaluate(&self, gammas: &[DMatrix<f64>]) -> NegEval {
        let p = self.p;
        let s = assemble(&self.weights, gammas, p, self.reg.lambda1);
        let eig = s.symmetric_eigen();
        let l2 = self.reg.lambda2;
        let mut value = 0.0;
        let mut neg = DMatrix::zeros(eig.eigenvalues.len(), eig.eigenvalues.len());
        for (i, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam < 0.0 {
                value += lam * lam;
                let v = eig.eigenvectors.column(i);
                neg.ger(-lam, &v, &v, 1.0);
            }
        }
        let b = linalg::symmetrized(&(neg / l2)).expect("square");
        let sos = (0..gammas.len())
            .map(|j| {
                let w = self.weights.column(j).into_owned();
                contract(w.as_slice(), &b, p)
            })
            .collect();
        NegEval { value: value / (2.0 * l2), b, sos, eigenvalues: eig.eigenvalues, eigenvectors: eig.eigenvectors }
    }

    /// Generalized Hessian in coordinates, from the divided differences of
    /// `t -> max(-t, 0)` on the spectrum of `S`.
    pub(crate) fn hessian(&self, ev: &NegEval) -> DMatrix<f64> {
        let p = self.p;
        let pairs = sym_pairs(p);
        let k = sym_dim(p);
        let l = self.blocks();
        let nf = self.weights.nrows();
        let size = nf * p;
        let lam = &ev.eigenvalues;
        let neg: Vec<usize> = (0..size).filter(|&s| lam[s] < 0.0).collect();
        let m = l * k;
        if neg.is_empty() {
            return DMatrix::zeros(m, m);
        }
        // sqrt of the weight of entry (s, t), s negative; pairs with t
        // non-negative appear twice by symmetry
        let sw = DMatrix::from_fn(neg.len(), size, |si, t| {
            if lam[t] < 0.0 {
                1.0
            } else {
                let a = -lam[neg[si]];
                (2.0 * a / (a + lam[t])).sqrt()
            }
        });
        let u = &ev.eigenvectors;
        let mut phi = DMatrix::zeros(m, neg.len() * size);
        let mut v = DMatrix::zeros(p, size);
        for j in 0..l {
            v.fill(0.0);
            for c in 0..nf {
                let w = self.weights[(c, j)];
                if w != 0.0 {
                    v += u.rows(c * p, p) * w;
                }
            }
            for (kk, &(a, b)) in pairs.iter().enumerate() {
                let row = j * k + kk;
                for (si, &s) in neg.iter().enumerate() {
                    for t in 0..size {
                        let x = if a == b {
                            v[(a, s)] * v[(a, t)]
                        } else {
                            (v[(a, s)] * v[(b, t)] + v[(b, s)] * v[(a, t)]) / SQRT_2
                        };
                        phi[(row, si * size + t)] = x * sw[(si, t)];
                    }
                }
            }
        }
        &phi * phi.transpose() / self.reg.lambda2
    }

    /// `lambda_max((W^T W) o (W^T W)) / lambda2`, an upper bound on the
    /// smoothness of the term.
    pub(crate) fn lipschitz(&self) -> f64 {
        let g = self.weights.transpose() * &self.weights;
        let had = g.component_mul(&g);
        linalg::power_lambda_max(had.nrows(), 100, |v| &had * v) * 1.01 / self.reg.lambda2
    }
}

/// Quadratic plus negative-part dual, minimized over `u`.
#[derive(Debug, Clone)]
pub(crate) struct QuadNegDual {
    pub hq: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub constant: f64,
    pub neg: NegPartTerm,
    /// `(G, g0, c)` with `(1/2) u^T H u + c^T u + k = |G u + g0|^2 + c`.
    /// Evaluating through the residual avoids cancellation when `H` is
    /// badly conditioned.
    pub factor: Option<(DMatrix<f64>, DVector<f64>, f64)>,
}

impl QuadNegDual {
    pub(crate) fn factored(g: DMatrix<f64>, g0: DVector<f64>, constant: f64, neg: NegPartTerm) -> Self {
        let gt = g.transpose();
        let hq = &gt * &g * 2.0;
        Self {
            hq: (&hq + hq.transpose()) * 0.5,
            lin: &gt * &g0 * 2.0,
            constant: g0.norm_squared() + constant,
            neg,
            factor: Some((g, g0, constant)),
        }
    }

    pub(crate) fn p(&self) -> usize {
        self.neg.p
    }

    pub(crate) fn dim(&self) -> usize {
        self.lin.len()
    }

    /// Value, coordinate gradient and the negative-part evaluation.
    pub(crate) fn evaluate(&self, u: &DVector<f64>) -> (f64, DVector<f64>, NegEval) {
        let (value, quad_grad) = match &self.factor {
            Some((g, g0, c)) => {
                let r = g * u + g0;
                (r.norm_squared() + c, g.tr_mul(&r) * 2.0)
            }
            None => {
                let hu = &self.hq * u;
                (0.5 * u.dot(&hu) + self.lin.dot(u) + self.constant, hu + &self.lin)
            }
        };
        let ev = self.neg.evaluate(&from_coords(u, self.p()));
        let grad = quad_grad - to_coords(&ev.sos, self.p());
        (value + ev.value, grad, ev)
    }

    pub(crate) fn value_grad(&self, u: &DVector<f64>) -> (f64, DVector<f64>) {
        let (v, g, _) = self.evaluate(u);
        (v, g)
    }

    pub(crate) fn hessian(&self, ev: &NegEval) -> DMatrix<f64> {
        &self.hq + self.neg.hessian(ev)
    }

    pub(crate) fn lipschitz_estimate(&self) -> f64 {
        let quad = linalg::power_lambda_max(self.dim(), 100, |v| &self.hq * v);
        quad * 1.01 + self.neg.lipschitz()
    }

    /// Runs `solver` from `u0`. `strong` supplies `(mu, L)` for the
    /// constant-momentum scheme; without it the accelerated solver
    /// backtracks on `L`.
    pub(crate) fn minimize(&self, u0: DVector<f64>, solver: SolverKind, strong: Option<(f64, f64)>, opts: AgdOptions) -> AgdOutcome {
        match (solver, strong) {
            (SolverKind::Newton, _) => newton(self, u0, opts),
            (SolverKind::Accelerated, Some((mu, l))) => agd::strongly_convex(|u| self.value_grad(u), u0, mu, l, opts),
            (SolverKind::Accelerated, None) => {
                let l0 = self.lipschitz_estimate().max(1e-12);
                agd::backtracking(|u| self.value_grad(u), u0, l0, opts)
            }
        }
    }
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;
const MAX_NEWTON_ITERS: usize = 300;

/// Semismooth Newton with Levenberg-Marquardt damping and an Armijo
/// backtracking line search. The damping grows when steps are cut short,
/// which happens when eigenvalues of `S` cross zero along the direction.
pub(crate) fn newton(dual: &QuadNegDual, u0: DVector<f64>, opts: AgdOptions) -> AgdOutcome {
    let mut u = u0;
    let (mut f, mut g, mut ev) = dual.evaluate(&u);
    let mut stopper = Stopper::new(opts.tol);
    let mut best_trace = vec![f];
    let max_iters = opts.max_iters.min(MAX_NEWTON_ITERS);
    let mut damping = 1e-6;

    for it in 1..=max_iters {
        let gnorm = g.norm();
        if stopper.check(f, gnorm) {
            return AgdOutcome { x: u, value: f, grad_norm: gnorm, iterations: it, converged: true, best_trace };
        }
        if damping > 1e12 {
            // even short gradient-like steps no longer decrease the objective
            let converged = gnorm <= opts.tol.sqrt() * (1.0 + f.abs());
            return AgdOutcome { x: u, value: f, grad_norm: gnorm, iterations: it, converged, best_trace };
        }
        let h = dual.hessian(&ev);
        let shift = h.diagonal().amax().max(0.0) * 1e-14 + damping * gnorm;
        let mut hs = h;
        for i in 0..hs.nrows() {
            hs[(i, i)] += shift;
        }
        let dir = match Cholesky::new(hs) {
            Some(ch) => -ch.solve(&g),
            None => {
                damping *= 100.0;
                continue;
            }
        };
        let slope = g.dot(&dir);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &u + &dir * step;
            let (fc, gc, evc) = dual.evaluate(&cand);
            if fc < f && fc <= f + ARMIJO * step * slope {
                accepted = Some((cand, fc, gc, evc));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, fc, gc, evc)) => {
                u = cand;
                f = fc;
                g = gc;
                ev = evc;
                best_trace.push(f);
                if step == 1.0 {
                    damping = (damping / 4.0).max(1e-12);
                } else if step < 0.1 {
                    damping *= 10.0;
                }
            }
            None => damping *= 100.0,
        }
    }
    let grad_norm = g.norm();
    AgdOutcome { x: u, value: f, grad_norm, iterations: max_iters, converged: false, best_trace }
}
