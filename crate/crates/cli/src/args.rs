use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sos_core::cvxreg::Representation;
use sos_core::KernelFamily;

/// Kernel sum-of-squares models for PSD-valued and convex regression.
///
/// Every flag can also be set through an environment variable named
/// `SOS_<FLAG>` (for example `SOS_SIGMA=0.5`); the command line wins.
#[derive(Debug, Parser)]
#[command(name = "sos", version, about, long_about = None)]
pub struct Cli {
    /// Worker threads for cross-validation and benchmarks (default: all cores).
    #[arg(long, global = true, env = "SOS_WORKERS")]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a PSD-valued model to `x1,...,xp,m11,...,mdd` data.
    FitPsd(FitPsdArgs),
    /// Fit a convex function with an SoS Hessian to `x1,...,xp,y` data.
    FitConvex(FitConvexArgs),
    /// Evaluate any saved model at query points.
    Predict(PredictArgs),
    /// Convexity certificate of a saved convex model on a box.
    Certify(CertifyArgs),
    /// Generate a dataset.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Cross-validated grid search followed by a refit on all data.
    Cv(CvArgs),
    /// Compare SoS, kernel ridge and piecewise-linear convex regression.
    Benchmark(BenchmarkArgs),
    /// Interpolate a sampled geodesic of covariance matrices.
    Bures(BuresArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Gaussian,
    Exponential,
}

impl From<KernelArg> for KernelFamily {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Gaussian => KernelFamily::Gaussian,
            KernelArg::Exponential => KernelFamily::Exponential,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Accelerated,
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RepresentationArg {
    Approximate,
    Exact,
}

impl From<RepresentationArg> for Representation {
    fn from(r: RepresentationArg) -> Self {
        match r {
            RepresentationArg::Approximate => Representation::Approximate,
            RepresentationArg::Exact => Representation::Exact,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct KernelArgs {
    #[arg(long, value_enum, default_value = "gaussian", env = "SOS_KERNEL")]
    pub kernel: KernelArg,
    /// Kernel bandwidth.
    #[arg(long, env = "SOS_SIGMA")]
    pub sigma: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 1e-10, env = "SOS_TOL")]
    pub tol: f64,
    #[arg(long, default_value_t = 50_000, env = "SOS_MAX_ITERS")]
    pub max_iters: usize,
    /// Solver for the dual; each problem has its own default.
    #[arg(long, value_enum, env = "SOS_SOLVER")]
    pub solver: Option<SolverArg>,
}

#[derive(Debug, Clone, Args)]
pub struct FitPsdArgs {
    /// PSD dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long, default_value_t = 0.0, env = "SOS_LAMBDA1")]
    pub lambda1: f64,
    #[arg(long, env = "SOS_LAMBDA2")]
    pub lambda2: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output directory for `model.json` and `report.json`.
    #[arg(long, env = "SOS_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DomainArgs {
    /// Certify on the cube `[-b, b]^p`.
    #[arg(long = "domain-b", env = "SOS_DOMAIN_B")]
    pub domain_b: Option<f64>,
    /// Semi-norm probe count.
    #[arg(long, default_value_t = 400)]
    pub seminorm_probes: usize,
}

#[derive(Debug, Clone, Args)]
pub struct FitConvexArgs {
    /// Scalar dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long, env = "SOS_RHO")]
    pub rho: f64,
    #[arg(long, default_value_t = 0.0, env = "SOS_LAMBDA1")]
    pub lambda1: f64,
    #[arg(long, env = "SOS_LAMBDA2")]
    pub lambda2: f64,
    /// Constraint points (`x1,...,xp` CSV); defaults to the data inputs.
    #[arg(long, env = "SOS_GRID_FILE")]
    pub grid_file: Option<PathBuf>,
    /// Compress the certificate features to this many landmarks.
    #[arg(long, env = "SOS_NYSTROM_RANK")]
    pub nystrom_rank: Option<usize>,
    /// Landmark sampling seed.
    #[arg(long, default_value_t = 0, env = "SOS_SEED")]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "approximate")]
    pub representation: RepresentationArg,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub domain: DomainArgs,
    /// Output directory for `model.json`, `report.json` and `certificate.json`.
    #[arg(long, env = "SOS_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Query points, `x1,...,xp` CSV.
    #[arg(long)]
    pub queries: PathBuf,
    /// Output CSV.
    #[arg(long, env = "SOS_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CertifyArgs {
    /// Saved convex model.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "domain-b", env = "SOS_DOMAIN_B")]
    pub domain_b: f64,
    #[arg(long, default_value_t = 400)]
    pub seminorm_probes: usize,
    /// Also scan the Hessian on this many probe points.
    #[arg(long, default_value_t = 0)]
    pub scan_probes: usize,
    /// Output JSON report.
    #[arg(long, env = "SOS_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum GenCommand {
    /// Samples of a Bures geodesic at evenly spaced times in `[0, 1]`.
    Bures {
        #[arg(long, default_value_t = 12)]
        n: usize,
        #[arg(long, value_enum, default_value = "full-rank")]
        endpoints: EndpointsArg,
        #[arg(long, env = "SOS_OUT")]
        out: PathBuf,
    },
    /// Noisy samples of `(cos(a x) - 1) / a^2 + |x|^2 / 2` on `[-b, b]^p`.
    Convex {
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        #[arg(long, default_value_t = std::f64::consts::PI)]
        b: f64,
        #[arg(long, default_value_t = 1)]
        p: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0, env = "SOS_SEED")]
        seed: u64,
        #[arg(long, env = "SOS_OUT")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EndpointsArg {
    FullRank,
    RankOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Psd,
    Convex,
    Krr,
}

#[derive(Debug, Clone, Args)]
pub struct CvArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long)]
    pub data: PathBuf,
    /// Grid specification (JSON); defaults to the task's standard grid.
    #[arg(long, env = "SOS_GRID_FILE")]
    pub grid_file: Option<PathBuf>,
    /// Kernel family for the PSD task.
    #[arg(long, value_enum, default_value = "gaussian", env = "SOS_KERNEL")]
    pub kernel: KernelArg,
    /// Ridge values for the default convex and ridge grids.
    #[arg(long, value_delimiter = ',', default_values_t = [1e-3, 1e-5], env = "SOS_RHO")]
    pub rho: Vec<f64>,
    /// Compress convex-task certificates above this training size.
    #[arg(long, env = "SOS_NYSTROM_RANK")]
    pub nystrom_rank: Option<usize>,
    #[arg(long, env = "SOS_SEED")]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output directory for `cv.json` and `model.json`.
    #[arg(long, env = "SOS_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    /// Benchmark configuration (JSON); flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub noises: Option<Vec<f64>>,
    #[arg(long, env = "SOS_SEEDS")]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub test_size: Option<usize>,
    #[arg(long, env = "SOS_NYSTROM_RANK")]
    pub nystrom_rank: Option<usize>,
    /// Skip the per-fit convexity certificates.
    #[arg(long)]
    pub no_certify: bool,
    /// Output directory for `runs.csv`, `summary.csv` and the plot script.
    #[arg(long, env = "SOS_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BuresArgs {
    #[arg(long, default_value_t = 12)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "full-rank")]
    pub endpoints: EndpointsArg,
    #[arg(long, value_enum, default_value = "exponential", env = "SOS_KERNEL")]
    pub kernel: KernelArg,
    /// Grid specification (JSON); defaults to the PSD grid with leave-one-out.
    #[arg(long, env = "SOS_GRID_FILE")]
    pub grid_file: Option<PathBuf>,
    /// Points on the plotted curve.
    #[arg(long, default_value_t = 201)]
    pub curve_points: usize,
    #[arg(long, env = "SOS_OUT")]
    pub out: PathBuf,
}
