//! Desk-scale experiments: geodesic interpolation, the convex-regression
//! benchmark against ridge and piecewise-linear baselines, certificate
//! soundness checks and the effect of denser constraint grids.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agd::{FitOptions, SolveReport};
use crate::baselines::{pwl_fit, pwl_predict};
use crate::certify::{box_probes, empirical_min_eig, CertificateReport, CertifyOptions, SmoothnessConstants};
use crate::cvxreg::{ApproxProblem, ConvexModel, ConvexParams, Representation};
use crate::datasets::{gen_convex_samples, BuresSpec, ConvexRegSpec};
use crate::error::{Result, SosError};
use crate::io::{PsdDataset, ScalarDataset};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::modelselect::{grid_search, mse, ConvexEstimator, CvResult, GridSpec, KrrEstimator, NystromPolicy, PsdEstimator};
use crate::sos::{GramFactorization, SosModel};

/// Cross-validated fit of a sampled geodesic.
#[derive(Debug, Clone)]
pub struct BuresRun {
    pub data: PsdDataset,
    pub cv: CvResult,
    pub model: SosModel,
    pub report: Option<SolveReport>,
    /// `max_i |F(x_i) - M_i|_F` over the training points.
    pub max_train_error: f64,
    /// `max_i |M_i|_F`.
    pub max_target_norm: f64,
    pub seconds: f64,
}

impl BuresRun {
    pub fn relative_error(&self) -> f64 {
        self.max_train_error / self.max_target_norm
    }
}

pub fn bures_cv(spec: &BuresSpec, family: KernelFamily, grid: &GridSpec, opts: FitOptions) -> Result<BuresRun> {
    let start = Instant::now();
    let data = spec.generate()?;
    let (cv, fitted) = grid_search(&PsdEstimator::new(family, opts), &data, grid)?;
    let model = fitted.model;
    let max_train_error = (0..data.len())
        .map(|i| (model.evaluate_at_anchor(i) - &data.targets[i]).norm())
        .fold(0.0, f64::max);
    let max_target_norm = data.targets.iter().map(|m| m.norm()).fold(0.0, f64::max);
    Ok(BuresRun { data, cv, model, report: fitted.report, max_train_error, max_target_norm, seconds: start.elapsed().as_secs_f64() })
}

/// Fitted and true geodesic at `points` evenly spaced times, for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    /// Row-major entries.
    pub fitted: Vec<f64>,
    pub truth: Vec<f64>,
    pub fitted_min_eig: f64,
}

pub fn bures_curve(model: &SosModel, spec: &BuresSpec, points: usize) -> Result<Vec<CurvePoint>> {
    if points < 2 {
        return Err(SosError::InvalidParameter("a curve needs at least two points".into()));
    }
    (0..points)
        .map(|i| {
            let t = i as f64 / (points - 1) as f64;
            let f = model.evaluate(&[t])?;
            let truth = crate::datasets::bures_geodesic(&spec.sigma0, &spec.sigma1, t)?;
            Ok(CurvePoint {
                t,
                fitted: crate::sos::row_major(&f),
                truth: crate::sos::row_major(&truth),
                fitted_min_eig: crate::linalg::lambda_min(&f)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sos,
    Krr,
    Pwl,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Sos, Method::Krr, Method::Pwl];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sos => "sos",
            Method::Krr => "krr",
            Method::Pwl => "pwl",
        }
    }
}

/// Benchmark settings. The defaults are the full single-machine run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub dims: Vec<usize>,
    pub noises: Vec<f64>,
    pub sizes: Vec<usize>,
    pub seeds: u64,
    pub a: f64,
    /// Radial extent: inputs are uniform on `[-b / sqrt(p), b / sqrt(p)]^p`,
    /// so `|x| <= b` in every dimension.
    pub b: f64,
    pub test_size: usize,
    pub sos_rho: Vec<f64>,
    pub krr_rho: Vec<f64>,
    /// Nystrom compression of the certificate above this many points.
    pub nystrom_threshold: usize,
    pub nystrom_rank: usize,
    pub pwl_tol: f64,
    pub pwl_max_iters: usize,
    /// Certify every SoS fit and compare with a dense Hessian scan.
    pub check_convexity: bool,
    pub hessian_probes: usize,
    pub fit: FitOptions,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            dims: vec![1, 2],
            noises: vec![0.1, 0.3],
            sizes: vec![10, 20, 40],
            seeds: 10,
            a: 1.0,
            b: std::f64::consts::PI,
            test_size: 10_000,
            sos_rho: (1..=6).map(|e| 10f64.powi(-e)).collect(),
            krr_rho: (1..=8).map(|e| 10f64.powi(-e)).collect(),
            nystrom_threshold: 25,
            nystrom_rank: 25,
            pwl_tol: 1e-6,
            pwl_max_iters: 20_000,
            check_convexity: true,
            hessian_probes: 2_000,
            fit: FitOptions { max_iters: 60, ..FitOptions::default() },
        }
    }
}

impl BenchmarkConfig {
    /// Half-width of the input cube in dimension `p`.
    pub fn half_width(&self, p: usize) -> f64 {
        self.b / (p as f64).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.noises.is_empty() || self.sizes.is_empty() || self.seeds == 0 {
            return Err(SosError::Empty("benchmark axis"));
        }
        if self.test_size == 0 || self.sos_rho.is_empty() || self.krr_rho.is_empty() {
            return Err(SosError::InvalidParameter("test size and ridge grids must be non-empty".into()));
        }
        for &p in &self.dims {
            ConvexRegSpec { a: self.a, b: self.half_width(p), p, n: 2, noise: self.noises[0], seed: 0 }.validate()?;
        }
        Ok(())
    }
}

/// One method on one dataset; tidy, one row per (run, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub dim: usize,
    pub noise: f64,
    pub n: usize,
    pub seed: u64,
    pub method: Method,
    pub test_mse: f64,
    pub converged: bool,
    pub seconds: f64,
    /// SoS only: convexity deficit when the certificate applies.
    pub eta: Option<f64>,
    /// SoS only: the deficit formula evaluated even when the fill-distance
    /// precondition fails.
    pub eta_formula: Option<f64>,
    /// SoS only: smallest Hessian eigenvalue on the dense probe grid.
    pub min_hessian_eig: Option<f64>,
    pub fill_distance: Option<f64>,
}

impl BenchmarkRow {
    /// `None` when no certificate was computed or it does not apply.
    pub fn convexity_holds(&self) -> Option<bool> {
        Some(self.min_hessian_eig? >= -self.eta?)
    }

    /// As [`Self::convexity_holds`], against the unconditional formula value.
    pub fn formula_holds(&self) -> Option<bool> {
        Some(self.min_hessian_eig? >= -self.eta_formula?)
    }
}

/// Noisy training and test sets for one run. Test points use an
/// independent stream.
pub fn benchmark_data(cfg: &BenchmarkConfig, dim: usize, noise: f64, n: usize, seed: u64) -> Result<(ScalarDataset, ScalarDataset)> {
    let spec = ConvexRegSpec { a: cfg.a, b: cfg.half_width(dim), p: dim, n, noise, seed };
    let train = gen_convex_samples(&spec)?;
    let test = gen_convex_samples(&ConvexRegSpec { n: cfg.test_size, seed: seed ^ 0x7e57_0000_0000_0000, ..spec })?;
    Ok((train, test))
}

/// Certificate and dense Hessian scan of a fitted convex model.
pub fn convexity_check(model: &ConvexModel, b: f64, probes: usize) -> Result<(CertificateReport, f64)> {
    let p = model.input_dim();
    let constants = SmoothnessConstants::first_order(&model.kernel)?;
    let report = CertificateReport::for_convex_model(model, &CertifyOptions::cube(constants, b, p))?;
    let scan = empirical_min_eig(|x| model.hessian(x), &box_probes(&vec![-b; p], &vec![b; p], probes)?)?;
    Ok((report, scan.value))
}

/// Fits the three methods on one dataset.
pub fn run_instance(cfg: &BenchmarkConfig, dim: usize, noise: f64, n: usize, seed: u64) -> Result<Vec<BenchmarkRow>> {
    let (train, test) = benchmark_data(cfg, dim, noise, n, seed)?;
    let row = |method, test_mse, converged, seconds| BenchmarkRow {
        dim,
        noise,
        n,
        seed,
        method,
        test_mse,
        converged,
        seconds,
        eta: None,
        eta_formula: None,
        min_hessian_eig: None,
        fill_distance: None,
    };
    let mut rows = Vec::with_capacity(3);

    let start = Instant::now();
    let est = ConvexEstimator {
        representation: Representation::Approximate,
        opts: cfg.fit.clone(),
        nystrom: Some(NystromPolicy { threshold: cfg.nystrom_threshold, rank: cfg.nystrom_rank, seed }),
    };
    let grid = GridSpec { seed, ..GridSpec::convex_default(cfg.sos_rho.clone()) };
    let (_, sos) = grid_search(&est, &train, &grid)?;
    let converged = sos.report.as_ref().is_some_and(|r| r.converged);
    let mut sos_row = row(Method::Sos, mse(&sos.model.predict(&test.inputs)?, &test.outputs)?, converged, 0.0);
    if cfg.check_convexity {
        let (cert, min_eig) = convexity_check(&sos.model, cfg.half_width(dim), cfg.hessian_probes)?;
        sos_row.eta = cert.eta;
        sos_row.eta_formula = Some(cert.formula_bound());
        sos_row.fill_distance = Some(cert.fill_distance);
        sos_row.min_hessian_eig = Some(min_eig);
    }
    sos_row.seconds = start.elapsed().as_secs_f64();
    rows.push(sos_row);

    let start = Instant::now();
    let grid = GridSpec { seed, ..GridSpec::krr_default(cfg.krr_rho.clone()) };
    let (_, krr) = grid_search(&KrrEstimator { family: KernelFamily::Gaussian }, &train, &grid)?;
    rows.push(row(Method::Krr, mse(&krr.model.predict(&test.inputs)?, &test.outputs)?, true, start.elapsed().as_secs_f64()));

    let start = Instant::now();
    let pwl = pwl_fit(&train, cfg.pwl_tol, cfg.pwl_max_iters)?;
    let pwl_mse = mse(&pwl_predict(&pwl.model, &test.inputs)?, &test.outputs)?;
    rows.push(row(Method::Pwl, pwl_mse, pwl.report.converged, start.elapsed().as_secs_f64()));
    Ok(rows)
}

/// Runs every (dim, noise, n, seed) combination; `on_row` sees rows as
/// they are produced.
pub fn run_benchmark(cfg: &BenchmarkConfig, mut on_row: impl FnMut(&BenchmarkRow)) -> Result<Vec<BenchmarkRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &dim in &cfg.dims {
        for &noise in &cfg.noises {
            for &n in &cfg.sizes {
                for seed in 0..cfg.seeds {
                    for r in run_instance(cfg, dim, noise, n, seed)? {
                        on_row(&r);
                        rows.push(r);
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Mean and standard deviation of the test error per method in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub dim: usize,
    pub noise: f64,
    pub n: usize,
    pub runs: usize,
    /// Indexed like [`Method::ALL`].
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl CellSummary {
    pub fn mean_of(&self, m: Method) -> f64 {
        self.mean[m as usize]
    }

    /// `SoS <= KRR <= PWL` in mean test error.
    pub fn ordered(&self) -> bool {
        self.mean_of(Method::Sos) <= self.mean_of(Method::Krr) && self.mean_of(Method::Krr) <= self.mean_of(Method::Pwl)
    }
}

pub fn summarize(rows: &[BenchmarkRow]) -> Vec<CellSummary> {
    let mut keys: Vec<(usize, f64, usize)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|k| *k == (r.dim, r.noise, r.n)) {
            keys.push((r.dim, r.noise, r.n));
        }
    }
    keys.into_iter()
        .map(|(dim, noise, n)| {
            let mut mean = [0.0; 3];
            let mut std = [0.0; 3];
            let mut runs = 0;
            for m in Method::ALL {
                let v: Vec<f64> =
                    rows.iter().filter(|r| r.dim == dim && r.noise == noise && r.n == n && r.method == m).map(|r| r.test_mse).collect();
                runs = runs.max(v.len());
                if v.is_empty() {
                    mean[m as usize] = f64::NAN;
                    std[m as usize] = f64::NAN;
                    continue;
                }
                let mu = v.iter().sum::<f64>() / v.len() as f64;
                mean[m as usize] = mu;
                std[m as usize] = (v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
            }
            CellSummary { dim, noise, n, runs, mean, std }
        })
        .collect()
}

/// A PSD-valued function that matches an SoS model at the samples and
/// departs from it in between.
#[derive(Debug, Clone)]
pub struct SoundnessInstance {
    pub samples: DMatrix<f64>,
    pub model: SosModel,
    pub bump: DMatrix<f64>,
    /// `s(x) = scale * prod_i (x - x_i)`.
    pub scale: f64,
}

impl SoundnessInstance {
    /// Gaussian kernel on `[0, 1]`, `d = 2`, a rank-one `B` and an
    /// indefinite perturbation that vanishes at the samples.
    pub fn random(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(5..=9);
        let mut xs: Vec<f64> = (0..n).map(|i| (i as f64 + rng.random_range(0.2..0.8)) / n as f64).collect();
        xs.sort_by(f64::total_cmp);
        let samples = DMatrix::from_column_slice(n, 1, &xs);
        let kernel = KernelSpec::gaussian(rng.random_range(0.3..0.8))?;
        let d = 2;
        let fact = GramFactorization::build(kernel, samples.clone(), d)?;
        let v = DVector::from_fn(n * d, |_, _| rng.random_range(-1.0..1.0));
        let model = SosModel::new(fact, &v * v.transpose())?;
        let c = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let bump = (&c + c.transpose()) * 0.5;
        let peak = (0..=200).map(|i| Self::node_poly(&xs, i as f64 / 200.0).abs()).fold(0.0, f64::max);
        let scale = rng.random_range(0.5..2.0) / peak;
        Ok(Self { samples, model, bump, scale })
    }

    fn node_poly(xs: &[f64], x: f64) -> f64 {
        xs.iter().map(|xi| x - xi).product()
    }

    pub fn value(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let s = self.scale * Self::node_poly(self.samples.as_slice(), x[0]);
        Ok(self.model.evaluate(x)? + &self.bump * s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundnessCase {
    pub seed: u64,
    pub report: CertificateReport,
    pub min_eig: f64,
}

impl SoundnessCase {
    /// Violated only when the bound applies and the scan goes below it.
    pub fn holds(&self) -> bool {
        match self.report.epsilon {
            Some(eps) => self.min_eig >= -eps,
            None => true,
        }
    }
}

pub fn soundness_case(seed: u64, scan_points: usize) -> Result<SoundnessCase> {
    let inst = SoundnessInstance::random(seed)?;
    let constants = SmoothnessConstants::first_order(inst.model.factorization.kernel())?;
    let mut opts = CertifyOptions::new(constants, vec![0.0], vec![1.0], 0.5);
    opts.seminorm_probes = 2_000;
    opts.step = 1e-5;
    let report = CertificateReport::for_function(&inst.samples, |x| inst.value(x), inst.model.b.trace(), &opts)?;
    let scan = empirical_min_eig(|x| inst.value(x), &box_probes(&[0.0], &[1.0], scan_points)?)?;
    Ok(SoundnessCase { seed, report, min_eig: scan.value })
}

/// A 1-D convex fit with constraints on successively denser grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrendConfig {
    pub data: ConvexRegSpec,
    pub sigma: f64,
    pub rho: f64,
    pub lambda2: f64,
    pub grid_sizes: Vec<usize>,
    pub reference_size: usize,
    pub fit: FitOptions,
}

impl Default for TrendConfig {
    fn default() -> Self {
        Self {
            data: ConvexRegSpec { a: 1.0, b: std::f64::consts::PI, p: 1, n: 30, noise: 0.1, seed: 0 },
            sigma: 1.0,
            rho: 1e-4,
            lambda2: 1e-4,
            grid_sizes: vec![5, 10, 20, 40],
            reference_size: 160,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub grid_size: usize,
    pub fill_distance: f64,
    pub eta: Option<f64>,
    /// Training loss of `f + (eta/2) x^2`.
    pub loss: f64,
    /// `loss - reference loss`.
    pub gap: f64,
    pub converged: bool,
}

fn even_grid(b: f64, size: usize) -> DMatrix<f64> {
    DMatrix::from_fn(size, 1, |i, _| -b + 2.0 * b * i as f64 / (size - 1) as f64)
}

fn training_loss(data: &ScalarDataset, f: impl Fn(&[f64]) -> Result<f64>) -> Result<f64> {
    let pred = (0..data.len()).map(|i| f(data.inputs.row(i).transpose().as_slice())).collect::<Result<Vec<_>>>()?;
    mse(&pred, &data.outputs)
}

/// Convexified subsampled fits compared with a dense-grid reference.
pub fn subsampling_trend(cfg: &TrendConfig) -> Result<Vec<TrendPoint>> {
    if cfg.data.p != 1 {
        return Err(SosError::InvalidParameter("the grid trend is one-dimensional".into()));
    }
    if cfg.grid_sizes.iter().chain([&cfg.reference_size]).any(|&s| s < 2) {
        return Err(SosError::InvalidParameter("grids need at least two points".into()));
    }
    let data = gen_convex_samples(&cfg.data)?;
    let b = cfg.data.b;
    let params = ConvexParams::new(KernelSpec::gaussian(cfg.sigma)?, cfg.rho, 0.0, cfg.lambda2)?;
    let reference = ApproxProblem::new(&data, Some(&even_grid(b, cfg.reference_size)), &params)?.solve(None, &cfg.fit)?;
    let ref_loss = training_loss(&data, |x| reference.model.value(x))?;
    let constants = SmoothnessConstants::first_order(&params.kernel)?;
    cfg.grid_sizes
        .iter()
        .map(|&size| {
            let fit = ApproxProblem::new(&data, Some(&even_grid(b, size)), &params)?.solve(None, &cfg.fit)?;
            let cert = CertificateReport::for_convex_model(&fit.model, &CertifyOptions::cube(constants, b, 1))?;
            let eta = cert.eta.unwrap_or(0.0);
            let loss = training_loss(&data, |x| Ok(fit.model.value(x)? + 0.5 * eta * x[0] * x[0]))?;
            Ok(TrendPoint {
                grid_size: size,
                fill_distance: cert.fill_distance,
                eta: cert.eta,
                loss,
                gap: loss - ref_loss,
                converged: fit.report.converged,
            })
        })
        .collect()
}

/// True when `values` has at most `allowed` strict increases.
pub fn non_increasing_up_to(values: &[f64], allowed: usize) -> bool {
    values.windows(2).filter(|w| w[1] > w[0]).count() <= allowed
}
