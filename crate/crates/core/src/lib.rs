//! Kernel sums-of-squares models for PSD-valued regression and convex
//! regression, with the solvers, baselines and tooling around them.

pub mod agd;
pub mod baselines;
pub mod certify;
pub mod cvxreg;
pub mod datasets;
mod dual;
pub mod error;
pub mod experiments;
pub mod io;
pub mod kernels;
pub mod modelselect;
pub mod linalg;
pub mod psdreg;
pub mod sos;

pub use agd::{FitOptions, SolveReport, SolverKind};
pub use dual::Blocks;
pub use error::{Result, SosError};
pub use io::{PsdDataset, ScalarDataset};
pub use kernels::{KernelFamily, KernelSpec};
pub use sos::{GramFactorization, RegularizerSpec, SosModel};
