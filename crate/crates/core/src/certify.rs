//! Post-hoc certificates for subsampled PSD constraints.
//!
//! If `F(x_i) = Psi_i^T B Psi_i` on samples `x_i` with fill distance `h`,
//! then `lambda_min(F(x)) >= -eps` everywhere with `eps = C h^m` and
//! `C = C0 (N + M D_m tr B)`, where `N` aggregates the order-`m` semi-norms
//! of the entries of `F`. Semi-norms are estimated by central finite
//! differences and always reported as estimates.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::cvxreg::ConvexModel;
use crate::error::{Result, SosError};
use crate::kernels::{rows_of, KernelFamily, KernelSpec};
use crate::linalg::{lambda_max, lambda_min};

/// Default probe density for fill distances, per input dimension.
pub const PROBES_PER_DIM: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantSource {
    UserSupplied,
    SobolevFormula,
    UnitDiagonal,
}

/// Derivative order `m`, algebra constant `M` and derivative bound `D_m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    pub m: u32,
    pub algebra: f64,
    pub derivative: f64,
    pub source: ConstantSource,
}

impl SmoothnessConstants {
    pub fn user(m: u32, algebra: f64, derivative: f64) -> Result<Self> {
        Self::checked(m, algebra, derivative, ConstantSource::UserSupplied)
    }

    fn checked(m: u32, algebra: f64, derivative: f64, source: ConstantSource) -> Result<Self> {
        if m == 0 {
            return Err(SosError::InvalidParameter("derivative order m must be at least 1".into()));
        }
        if !(algebra >= 1.0) || !(derivative >= 1.0) || !algebra.is_finite() || !derivative.is_finite() {
            return Err(SosError::InvalidParameter(format!(
                "smoothness constants must be finite and >= 1 (M={algebra}, D={derivative})"
            )));
        }
        Ok(Self { m, algebra, derivative, source })
    }

    /// First-order constants for a kernel with `k(x, x) = 1`: `M = 2` and
    /// `D_1^2 = max_a sup |d^2 k / dx_a dy_a| = 2 / sigma^2` (Gaussian).
    /// With these, `|d (u^T F_B u)| <= M D_1 tr B` by the product rule.
    pub fn first_order(kernel: &KernelSpec) -> Result<Self> {
        match kernel.family {
            KernelFamily::Gaussian => {
                let d1 = (2.0_f64).sqrt() / kernel.sigma;
                Self::checked(1, 2.0, d1.max(1.0), ConstantSource::UnitDiagonal)
            }
            KernelFamily::Exponential => Err(SosError::UnsupportedFamily(kernel.family.name())),
        }
    }
}

/// `C0 = 3 (p^m / m!) max(1, 18 (m - 1)^2)^m`.
pub fn c0_constant(m: u32, p: usize) -> f64 {
    let mf = m as f64;
    let factorial: f64 = (1..=m).map(f64::from).product();
    let spread = (18.0 * (mf - 1.0).powi(2)).max(1.0);
    3.0 * (p as f64).powi(m as i32) / factorial * spread.powi(m as i32)
}

/// Constants of the Sobolev kernel of smoothness `s` on `R^p`. `D_m` is
/// raised to 1 when the formula falls below it.
pub fn sobolev_constants(s: f64, p: usize, m: u32) -> Result<SmoothnessConstants> {
    let half_p = p as f64 / 2.0;
    let mf = m as f64;
    if p == 0 || m == 0 || !(s > half_p + mf) {
        return Err(SosError::InvalidParameter(format!("Sobolev constants need s > p/2 + m (s={s}, p={p}, m={m})")));
    }
    let two_pi_p = (2.0 * PI).powf(half_p);
    let algebra = two_pi_p * 2f64.powf(s + 0.5);
    let ratio = gamma(mf + half_p) * gamma(s - half_p - mf) / (gamma(s - half_p) * gamma(half_p));
    let derivative = two_pi_p * ratio.sqrt();
    SmoothnessConstants::checked(m, algebra, derivative.max(1.0), ConstantSource::SobolevFormula)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FillDistance {
    pub h: f64,
    pub probes: usize,
}

/// `max_probe min_i |probe - x_i|`, a lower estimate of the fill distance.
pub fn fill_distance(samples: &DMatrix<f64>, probes: &DMatrix<f64>) -> Result<FillDistance> {
    if samples.nrows() == 0 {
        return Err(SosError::Empty("samples"));
    }
    if probes.nrows() == 0 {
        return Err(SosError::Empty("probe set"));
    }
    if samples.ncols() != probes.ncols() {
        return Err(SosError::DimensionMismatch { expected: samples.ncols(), got: probes.ncols() });
    }
    let xs = rows_of(samples);
    let h = rows_of(probes)
        .par_iter()
        .map(|q| {
            xs.iter()
                .map(|x| x.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| 0.0, f64::max)
        .sqrt();
    Ok(FillDistance { h, probes: probes.nrows() })
}

/// Tensor grid over the box `[lower, upper]` with at least `count` points
/// (`ceil(count^(1/p))` per axis, endpoints included).
pub fn box_probes(lower: &[f64], upper: &[f64], count: usize) -> Result<DMatrix<f64>> {
    let p = lower.len();
    if p == 0 {
        return Err(SosError::Empty("domain box"));
    }
    if upper.len() != p {
        return Err(SosError::DimensionMismatch { expected: p, got: upper.len() });
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
        return Err(SosError::InvalidParameter("domain box needs lower <= upper".into()));
    }
    let mut per_axis = ((count.max(2) as f64).powf(1.0 / p as f64)).ceil() as usize;
    while per_axis.pow(p as u32) < count {
        per_axis += 1;
    }
    let per_axis = per_axis.max(2);
    let total = per_axis.pow(p as u32);
    let mut out = DMatrix::zeros(total, p);
    for row in 0..total {
        let mut rest = row;
        for a in 0..p {
            let k = rest % per_axis;
            rest /= per_axis;
            out[(row, a)] = lower[a] + (upper[a] - lower[a]) * k as f64 / (per_axis - 1) as f64;
        }
    }
    Ok(out)
}

/// How the semi-norm matrix `N` enters the constant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeminormAggregate {
    /// `tr N = sum_i |F_ii|_m`.
    #[default]
    Trace,
    /// `lambda_max(N)`, never larger than the trace form for PSD `N`.
    LambdaMax,
}

/// Finite-difference estimate of `[N]_ij = max_{|alpha| = m} sup |d^alpha F_ij|`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeminormEstimate {
    pub matrix: DMatrix<f64>,
    pub m: u32,
    pub step: f64,
    pub probes: usize,
}

impl SeminormEstimate {
    pub fn zero(d: usize, m: u32) -> Self {
        Self { matrix: DMatrix::zeros(d, d), m, step: 0.0, probes: 0 }
    }

    pub fn aggregate(&self, how: SeminormAggregate) -> Result<f64> {
        match how {
            SeminormAggregate::Trace => Ok(self.matrix.trace()),
            SeminormAggregate::LambdaMax => lambda_max(&self.matrix),
        }
    }
}

/// Offsets (in steps) and weights of the tensor central difference for the
/// multi-index given as per-axis counts.
fn stencil(counts: &[u32]) -> Vec<(Vec<f64>, f64)> {
    let mut out = vec![(vec![0.0; counts.len()], 1.0)];
    for (axis, &k) in counts.iter().enumerate() {
        if k == 0 {
            continue;
        }
        let mut next = Vec::with_capacity(out.len() * (k as usize + 1));
        for (offsets, w) in &out {
            let mut binom = 1.0;
            for j in 0..=k {
                let mut o = offsets.clone();
                o[axis] = k as f64 / 2.0 - j as f64;
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                next.push((o, w * sign * binom));
                binom = binom * (k - j) as f64 / (j + 1) as f64;
            }
        }
        out = next;
    }
    out
}

/// Per-axis counts of every multi-index with `|alpha| = m`.
fn multi_indices(p: usize, m: u32) -> Vec<Vec<u32>> {
    fn rec(p: usize, left: u32, axis: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if axis + 1 == p {
            cur[axis] = left;
            out.push(cur.clone());
            return;
        }
        for k in (0..=left).rev() {
            cur[axis] = k;
            rec(p, left - k, axis + 1, cur, out);
        }
        cur[axis] = 0;
    }
    let mut out = Vec::new();
    rec(p, m, 0, &mut vec![0; p], &mut out);
    out
}

/// Estimates the order-`m` semi-norms of the entries of `f` by central
/// differences with spacing `step`, taking the maximum over `probes`.
pub fn seminorm_matrix<F>(f: F, probes: &DMatrix<f64>, m: u32, step: f64) -> Result<SeminormEstimate>
where
    F: Fn(&[f64]) -> Result<DMatrix<f64>> + Sync,
{
    if probes.nrows() == 0 {
        return Err(SosError::Empty("probe set"));
    }
    if m == 0 || !(step > 0.0) {
        return Err(SosError::InvalidParameter(format!("need m >= 1 and step > 0 (m={m}, step={step})")));
    }
    let p = probes.ncols();
    let stencils: Vec<_> = multi_indices(p, m).iter().map(|c| stencil(c)).collect();
    let scale = step.powi(m as i32);
    let points = rows_of(probes);
    let per_point = points
        .par_iter()
        .map(|x| {
            let mut best: Option<DMatrix<f64>> = None;
            for st in &stencils {
                let mut acc: Option<DMatrix<f64>> = None;
                for (offsets, w) in st {
                    let y: Vec<f64> = x.iter().zip(offsets).map(|(xi, o)| xi + o * step).collect();
                    let v = f(&y)? * *w;
                    acc = Some(match acc {
                        Some(a) => a + v,
                        None => v,
                    });
                }
                let d = acc.expect("stencils are nonempty").abs() / scale;
                best = Some(match best {
                    Some(b) => b.zip_map(&d, f64::max),
                    None => d,
                });
            }
            Ok(best.expect("at least one multi-index"))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut it = per_point.into_iter();
    let first = it.next().expect("nonempty probes");
    let matrix = it.fold(first, |a, b| a.zip_map(&b, f64::max));
    Ok(SeminormEstimate { matrix, m, step, probes: probes.nrows() })
}

/// Hessian semi-norm estimate of a fitted convex model.
pub fn hessian_seminorms(model: &ConvexModel, probes: &DMatrix<f64>, m: u32, step: f64) -> Result<SeminormEstimate> {
    if probes.ncols() != model.input_dim() {
        return Err(SosError::DimensionMismatch { expected: model.input_dim(), got: probes.ncols() });
    }
    seminorm_matrix(|x| model.hessian(x), probes, m, step)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenBound {
    pub c0: f64,
    pub c: f64,
    pub epsilon: f64,
    /// Whether `h <= r min(1, 1 / (18 (m - 1)^2))`.
    pub valid: bool,
}

impl EigenBound {
    /// The bound, or `None` when its precondition fails.
    pub fn applicable(&self) -> Option<f64> {
        self.valid.then_some(self.epsilon)
    }
}

fn fill_precondition(h: f64, radius: f64, m: u32) -> bool {
    let spread = 18.0 * (m as f64 - 1.0).powi(2);
    let factor = if spread > 0.0 { (1.0 / spread).min(1.0) } else { 1.0 };
    h <= radius * factor
}

/// `eps = C0 (N + M D_m tr B) h^m` on an input space of dimension `p`
/// with declared domain radius `radius`.
pub fn eigen_bound(seminorm: f64, trace_b: f64, constants: &SmoothnessConstants, h: f64, radius: f64, p: usize) -> Result<EigenBound> {
    for (name, v) in [("semi-norm", seminorm), ("tr B", trace_b), ("fill distance", h), ("radius", radius)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(SosError::InvalidParameter(format!("{name} must be finite and non-negative, got {v}")));
        }
    }
    if p == 0 {
        return Err(SosError::InvalidParameter("input dimension must be positive".into()));
    }
    let c0 = c0_constant(constants.m, p);
    let c = c0 * (seminorm + constants.algebra * constants.derivative * trace_b);
    Ok(EigenBound { c0, c, epsilon: c * h.powi(constants.m as i32), valid: fill_precondition(h, radius, constants.m) })
}

/// Convexity deficit `eta` of a fitted model: `f + (eta/2) |x|^2` is convex
/// when the bound is valid. `seminorms` estimates the Hessian semi-norms.
pub fn convexity_deficit(
    model: &ConvexModel,
    seminorms: &SeminormEstimate,
    aggregate: SeminormAggregate,
    constants: &SmoothnessConstants,
    h: f64,
    radius: f64,
) -> Result<EigenBound> {
    let b = &model.certificate.b;
    if b.nrows() == 0 || b.iter().any(|v| !v.is_finite()) {
        return Err(SosError::Format("model carries no usable certificate matrix".into()));
    }
    if seminorms.m != constants.m {
        return Err(SosError::InvalidParameter(format!(
            "semi-norms of order {} paired with constants of order {}",
            seminorms.m, constants.m
        )));
    }
    eigen_bound(seminorms.aggregate(aggregate)?, b.trace().max(0.0), constants, h, radius, model.input_dim())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinEigenvalue {
    pub value: f64,
    /// Row of the probe grid attaining it.
    pub index: usize,
}

/// `min_x lambda_min(F(x))` over the rows of `probes`.
pub fn empirical_min_eig<F>(f: F, probes: &DMatrix<f64>) -> Result<MinEigenvalue>
where
    F: Fn(&[f64]) -> Result<DMatrix<f64>> + Sync,
{
    if probes.nrows() == 0 {
        return Err(SosError::Empty("probe set"));
    }
    let vals = rows_of(probes).par_iter().map(|x| lambda_min(&f(x)?)).collect::<Result<Vec<_>>>()?;
    let (index, value) = vals
        .into_iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best });
    Ok(MinEigenvalue { value, index })
}

/// Settings for [`CertificateReport::for_convex_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    pub constants: SmoothnessConstants,
    /// Domain as a box, `lower[a] <= x_a <= upper[a]`.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Radius `r` of the domain geometry, used for the validity check.
    pub radius: f64,
    /// Probe points for the fill distance; `None` uses `PROBES_PER_DIM * p`.
    pub fill_probes: Option<usize>,
    /// Probe points for the semi-norm estimate.
    pub seminorm_probes: usize,
    pub step: f64,
    pub aggregate: SeminormAggregate,
}

impl CertifyOptions {
    pub fn new(constants: SmoothnessConstants, lower: Vec<f64>, upper: Vec<f64>, radius: f64) -> Self {
        Self { constants, lower, upper, radius, fill_probes: None, seminorm_probes: 400, step: 1e-4, aggregate: SeminormAggregate::Trace }
    }

    /// Box `[-b, b]^p` with radius `b`.
    pub fn cube(constants: SmoothnessConstants, b: f64, p: usize) -> Self {
        Self::new(constants, vec![-b; p], vec![b; p], b)
    }
}

/// Everything that enters a certificate, with the semi-norm marked as a
/// finite-difference estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub fill_distance: f64,
    pub fill_probes: usize,
    pub m: u32,
    pub input_dim: usize,
    pub c0: f64,
    pub seminorm_fd_estimate: f64,
    pub seminorm_aggregate: SeminormAggregate,
    pub seminorm_probes: usize,
    pub trace_b: f64,
    pub algebra_constant: f64,
    pub derivative_constant: f64,
    pub constant_source: ConstantSource,
    pub c: f64,
    pub radius: f64,
    pub valid: bool,
    /// Eigenvalue bound, absent when the precondition fails.
    pub epsilon: Option<f64>,
    /// Convexity deficit, absent when the precondition fails or the
    /// certified function is not a Hessian.
    pub eta: Option<f64>,
}

impl CertificateReport {
    /// `C h^m`, whether or not the precondition holds.
    pub fn formula_bound(&self) -> f64 {
        self.c * self.fill_distance.powi(self.m as i32)
    }

    fn assemble(fill: FillDistance, semi: &SeminormEstimate, trace_b: f64, opts: &CertifyOptions, p: usize, bound: EigenBound, hessian: bool) -> Result<Self> {
        let k = &opts.constants;
        Ok(Self {
            fill_distance: fill.h,
            fill_probes: fill.probes,
            m: k.m,
            input_dim: p,
            c0: bound.c0,
            seminorm_fd_estimate: semi.aggregate(opts.aggregate)?,
            seminorm_aggregate: opts.aggregate,
            seminorm_probes: semi.probes,
            trace_b,
            algebra_constant: k.algebra,
            derivative_constant: k.derivative,
            constant_source: k.source,
            c: bound.c,
            radius: opts.radius,
            valid: bound.valid,
            epsilon: bound.applicable(),
            eta: if hessian { bound.applicable() } else { None },
        })
    }

    fn fill(samples: &DMatrix<f64>, opts: &CertifyOptions) -> Result<FillDistance> {
        let count = opts.fill_probes.unwrap_or(PROBES_PER_DIM * opts.lower.len());
        fill_distance(samples, &box_probes(&opts.lower, &opts.upper, count)?)
    }

    /// Certificate for `F` matching an SoS model with trace `trace_b` at
    /// `samples`.
    pub fn for_function<F>(samples: &DMatrix<f64>, f: F, trace_b: f64, opts: &CertifyOptions) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<DMatrix<f64>> + Sync,
    {
        let p = samples.ncols();
        let fill = Self::fill(samples, opts)?;
        let semi = seminorm_matrix(f, &box_probes(&opts.lower, &opts.upper, opts.seminorm_probes)?, opts.constants.m, opts.step)?;
        let bound = eigen_bound(semi.aggregate(opts.aggregate)?, trace_b, &opts.constants, fill.h, opts.radius, p)?;
        Self::assemble(fill, &semi, trace_b, opts, p, bound, false)
    }

    /// Convexity certificate of a fitted model over its constraint grid.
    pub fn for_convex_model(model: &ConvexModel, opts: &CertifyOptions) -> Result<Self> {
        let p = model.input_dim();
        if opts.lower.len() != p {
            return Err(SosError::DimensionMismatch { expected: p, got: opts.lower.len() });
        }
        let fill = Self::fill(&model.grid, opts)?;
        let semi = hessian_seminorms(model, &box_probes(&opts.lower, &opts.upper, opts.seminorm_probes)?, opts.constants.m, opts.step)?;
        let bound = convexity_deficit(model, &semi, opts.aggregate, &opts.constants, fill.h, opts.radius)?;
        Self::assemble(fill, &semi, model.certificate.b.trace().max(0.0), opts, p, bound, true)
    }
}

#[cfg(test)]
mod tests;
