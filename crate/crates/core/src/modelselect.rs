//! Hyperparameter selection by k-fold and leave-one-out cross-validation.
//!
//! Grids are ordered most-regularized first and ties go to the earliest
//! cell. Cells that error out score `+inf`. Within a fold, consecutive cells
//! sharing a kernel scale warm-start from the previous multipliers.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agd::{FitOptions, SolveReport, SolverKind};
use crate::baselines::{krr_fit, KrrModel};
use crate::cvxreg::{ApproxProblem, ConvexModel, ConvexParams, ExactProblem, NystromSpec, Representation};
use crate::dual::Blocks;
use crate::error::{Result, SosError};
use crate::io::{PsdDataset, ScalarDataset};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::psdreg::PsdProblem;
use crate::sos::{RegularizerSpec, SosModel};

/// Fold of every index, `0..k`, balanced to sizes differing by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || k > n {
        return Err(SosError::InvalidParameter(format!("need 2 <= k <= n, got k={k}, n={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % k;
    }
    Ok(folds)
}

/// `(train, validation)` index lists per fold.
pub fn fold_indices(folds: &[usize], k: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    (0..k)
        .map(|f| {
            let (val, train): (Vec<usize>, Vec<usize>) = (0..folds.len()).partition(|&i| folds[i] == f);
            (train, val)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Folds {
    KFold(usize),
    LeaveOneOut,
}

impl Folds {
    pub fn count(&self, n: usize) -> usize {
        match *self {
            Folds::KFold(k) => k,
            Folds::LeaveOneOut => n,
        }
    }
}

/// One point of the hyperparameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub lambda1: f64,
    pub lambda2: f64,
    pub rho: f64,
    /// Kernel bandwidth `sigma`.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub rho: Vec<f64>,
    pub scale: Vec<f64>,
    pub folds: Folds,
    pub seed: u64,
}

fn powers(from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|e| 10f64.powi(-e)).collect()
}

fn descending(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.total_cmp(a));
    v.dedup();
    v
}

impl GridSpec {
    /// PSD regression: `lambda1 in {1, ..., 1e-8, 0}`, `lambda2 in {1, ..., 1e-8}`,
    /// `sigma in {1, 0.1, 0.01}`, leave-one-out.
    pub fn psd_default() -> Self {
        let mut lambda1 = powers(0, 8);
        lambda1.push(0.0);
        Self { lambda1, lambda2: powers(0, 8), rho: vec![0.0], scale: vec![1.0, 0.1, 0.01], folds: Folds::LeaveOneOut, seed: 0 }
    }

    /// Convex regression: `lambda2 in {1e-3, ..., 1e-7}`, `sigma^2 in {1, 5, 10}`,
    /// `lambda1 = 0`, 5-fold, over the given ridge values.
    pub fn convex_default(rho: Vec<f64>) -> Self {
        Self {
            lambda1: vec![0.0],
            lambda2: powers(3, 7),
            rho,
            scale: [1.0f64, 5.0, 10.0].iter().map(|s| s.sqrt()).collect(),
            folds: Folds::KFold(5),
            seed: 0,
        }
    }

    /// Ridge regression over `rho` and the convex-task bandwidths.
    pub fn krr_default(rho: Vec<f64>) -> Self {
        Self { lambda1: vec![0.0], lambda2: vec![0.0], ..Self::convex_default(rho) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda1.is_empty() || self.lambda2.is_empty() || self.rho.is_empty() || self.scale.is_empty() {
            return Err(SosError::Empty("candidate list"));
        }
        let all = self.lambda1.iter().chain(&self.lambda2).chain(&self.rho).chain(&self.scale);
        if all.clone().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(SosError::InvalidParameter("grid values must be finite and non-negative".into()));
        }
        if let Folds::KFold(k) = self.folds {
            if k < 2 {
                return Err(SosError::InvalidParameter(format!("need at least 2 folds, got {k}")));
            }
        }
        Ok(())
    }

    /// Cells with the bandwidth outermost and `lambda2` innermost, every
    /// axis in decreasing order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &scale in &descending(self.scale.clone()) {
            for &rho in &descending(self.rho.clone()) {
                for &lambda1 in &descending(self.lambda1.clone()) {
                    for &lambda2 in &descending(self.lambda2.clone()) {
                        out.push(Cell { lambda1, lambda2, rho, scale });
                    }
                }
            }
        }
        out
    }
}

/// Data that can be split by index.
pub trait Subset: Sized {
    fn len(&self) -> usize;
    fn subset(&self, idx: &[usize]) -> Self;
}

impl Subset for ScalarDataset {
    fn len(&self) -> usize {
        ScalarDataset::len(self)
    }
    fn subset(&self, idx: &[usize]) -> Self {
        ScalarDataset::subset(self, idx)
    }
}

impl Subset for PsdDataset {
    fn len(&self) -> usize {
        PsdDataset::len(self)
    }
    fn subset(&self, idx: &[usize]) -> Self {
        PsdDataset::subset(self, idx)
    }
}

pub struct Fitted<M> {
    pub model: M,
    pub warm: Option<Blocks>,
    pub report: Option<SolveReport>,
}

/// A model family that cross-validation can fit and score.
pub trait Estimator: Sync {
    type Data: Subset + Sync;
    type Model;

    fn fit(&self, cell: &Cell, train: &Self::Data, warm: Option<&Blocks>) -> Result<Fitted<Self::Model>>;

    /// Mean validation loss.
    fn loss(&self, model: &Self::Model, val: &Self::Data) -> Result<f64>;
}

/// PSD sum-of-squares regression; loss is the mean squared Frobenius error.
#[derive(Debug, Clone)]
pub struct PsdEstimator {
    pub family: KernelFamily,
    pub opts: FitOptions,
}

impl PsdEstimator {
    /// Semismooth Newton unless `opts` names a solver.
    pub fn new(family: KernelFamily, opts: FitOptions) -> Self {
        let solver = opts.solver.unwrap_or(SolverKind::Newton);
        Self { family, opts: opts.with_solver(solver) }
    }
}

impl Estimator for PsdEstimator {
    type Data = PsdDataset;
    type Model = SosModel;

    fn fit(&self, cell: &Cell, train: &PsdDataset, warm: Option<&Blocks>) -> Result<Fitted<SosModel>> {
        let kernel = KernelSpec::new(self.family, cell.scale)?;
        let problem = PsdProblem::new(train, kernel, RegularizerSpec::new(cell.lambda1, cell.lambda2)?)?;
        let sol = problem.solve(warm.map(|w| w.as_slice()), &self.opts)?;
        Ok(Fitted { model: problem.into_model(sol.b)?, warm: Some(sol.gammas), report: Some(sol.report) })
    }

    fn loss(&self, model: &SosModel, val: &PsdDataset) -> Result<f64> {
        let preds = model.predict(&val.inputs)?;
        Ok(preds.iter().zip(&val.targets).map(|(p, t)| (p - t).norm_squared()).sum::<f64>() / val.len() as f64)
    }
}

/// Landmark compression applied when the training set exceeds `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NystromPolicy {
    pub threshold: usize,
    pub rank: usize,
    pub seed: u64,
}

impl NystromPolicy {
    pub fn spec_for(&self, n: usize) -> Option<NystromSpec> {
        (n > self.threshold).then(|| NystromSpec::random(self.rank.min(n), self.seed))
    }
}

/// Convex SoS regression with Gaussian kernel; loss is the mean squared error.
#[derive(Debug, Clone)]
pub struct ConvexEstimator {
    pub representation: Representation,
    pub opts: FitOptions,
    pub nystrom: Option<NystromPolicy>,
}

impl Estimator for ConvexEstimator {
    type Data = ScalarDataset;
    type Model = ConvexModel;

    fn fit(&self, cell: &Cell, train: &ScalarDataset, warm: Option<&Blocks>) -> Result<Fitted<ConvexModel>> {
        let mut params = ConvexParams::new(KernelSpec::gaussian(cell.scale)?, cell.rho, cell.lambda1, cell.lambda2)?;
        if let Some(spec) = self.nystrom.and_then(|p| p.spec_for(train.len())) {
            params = params.with_nystrom(spec);
        }
        let warm = warm.map(|w| w.as_slice());
        let fit = match self.representation {
            Representation::Approximate => ApproxProblem::new(train, None, &params)?.solve(warm, &self.opts)?,
            Representation::Exact => ExactProblem::new(train, None, &params)?.solve(warm, &self.opts)?,
        };
        Ok(Fitted { model: fit.model, warm: Some(fit.gammas), report: Some(fit.report) })
    }

    fn loss(&self, model: &ConvexModel, val: &ScalarDataset) -> Result<f64> {
        mse(&model.predict(&val.inputs)?, &val.outputs)
    }
}

/// Kernel ridge regression; only `rho` and the bandwidth are used.
#[derive(Debug, Clone, Copy)]
pub struct KrrEstimator {
    pub family: KernelFamily,
}

impl Estimator for KrrEstimator {
    type Data = ScalarDataset;
    type Model = KrrModel;

    fn fit(&self, cell: &Cell, train: &ScalarDataset, _warm: Option<&Blocks>) -> Result<Fitted<KrrModel>> {
        let model = krr_fit(train, KernelSpec::new(self.family, cell.scale)?, cell.rho)?;
        Ok(Fitted { model, warm: None, report: None })
    }

    fn loss(&self, model: &KrrModel, val: &ScalarDataset) -> Result<f64> {
        mse(&model.predict(&val.inputs)?, &val.outputs)
    }
}

/// Mean squared error between predictions and targets.
pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(SosError::DimensionMismatch { expected: truth.len(), got: pred.len() });
    }
    if pred.is_empty() {
        return Err(SosError::Empty("prediction list"));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub cell: Cell,
    pub mean_loss: f64,
    pub std_loss: f64,
    /// Folds whose fit returned an error.
    pub failures: usize,
    /// Folds whose solver reported non-convergence (still scored).
    pub unconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub scores: Vec<CellScore>,
    pub selected: usize,
    pub folds: Vec<usize>,
}

impl CvResult {
    pub fn selected_cell(&self) -> Cell {
        self.scores[self.selected].cell
    }
}

/// Index of the smallest finite loss, earliest on ties.
pub fn select(losses: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &l) in losses.iter().enumerate() {
        if l.is_finite() && best.is_none_or(|(_, b)| l < b) {
            best = Some((i, l));
        }
    }
    best.map(|(i, _)| i)
}

/// Scores every cell, selects the best and refits it on all of `data`.
pub fn grid_search<E: Estimator>(est: &E, data: &E::Data, grid: &GridSpec) -> Result<(CvResult, Fitted<E::Model>)> {
    grid.validate()?;
    let n = data.len();
    let k = grid.folds.count(n);
    let folds = match grid.folds {
        Folds::KFold(k) => kfold_split(n, k, grid.seed)?,
        Folds::LeaveOneOut => kfold_split(n, n, grid.seed)?,
    };
    let cells = grid.cells();
    let splits = fold_indices(&folds, k);

    // per fold: (loss, converged) per cell, None on error
    let per_fold: Vec<Vec<Option<(f64, bool)>>> = splits
        .par_iter()
        .map(|(train_idx, val_idx)| {
            let train = data.subset(train_idx);
            let val = data.subset(val_idx);
            let mut warm: Option<(f64, Blocks)> = None;
            cells
                .iter()
                .map(|cell| {
                    let start = warm.as_ref().filter(|(s, _)| *s == cell.scale).map(|(_, g)| g);
                    let outcome = est.fit(cell, &train, start).and_then(|f| {
                        let loss = est.loss(&f.model, &val)?;
                        Ok((f, loss))
                    });
                    match outcome {
                        Ok((fitted, loss)) if loss.is_finite() => {
                            let converged = fitted.report.as_ref().is_none_or(|r| r.converged);
                            if let Some(g) = fitted.warm {
                                warm = Some((cell.scale, g));
                            }
                            Some((loss, converged))
                        }
                        _ => None,
                    }
                })
                .collect()
        })
        .collect();

    let scores: Vec<CellScore> = cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let results: Vec<Option<(f64, bool)>> = per_fold.iter().map(|f| f[c]).collect();
            let failures = results.iter().filter(|r| r.is_none()).count();
            let unconverged = results.iter().filter(|r| matches!(r, Some((_, false)))).count();
            let (mean_loss, std_loss) = if failures > 0 {
                (f64::INFINITY, f64::INFINITY)
            } else {
                let v: Vec<f64> = results.iter().map(|r| r.expect("no failures").0).collect();
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
                (mean, var.sqrt())
            };
            CellScore { cell: *cell, mean_loss, std_loss, failures, unconverged }
        })
        .collect();

    let losses: Vec<f64> = scores.iter().map(|s| s.mean_loss).collect();
    let selected = select(&losses).ok_or(SosError::AllCellsFailed(cells.len()))?;
    let refit = est.fit(&cells[selected], data, None)?;
    Ok((CvResult { scores, selected, folds }, refit))
}

#[cfg(test)]
mod tests;
