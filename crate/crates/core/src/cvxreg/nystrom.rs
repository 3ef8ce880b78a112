//! Landmark compression of the grid features.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SosError};
use crate::io::select_rows;
use crate::kernels::KernelSpec;
use crate::sos::GramFactorization;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum LandmarkRule {
    /// The first `r` grid points.
    First,
    /// `r` grid points drawn uniformly without replacement.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NystromSpec {
    pub rank: usize,
    pub rule: LandmarkRule,
}

impl NystromSpec {
    pub fn random(rank: usize, seed: u64) -> Self {
        Self { rank, rule: LandmarkRule::Random { seed } }
    }

    pub fn first(rank: usize) -> Self {
        Self { rank, rule: LandmarkRule::First }
    }
}

/// Indices of the landmarks among `l` grid points, in increasing order.
pub fn select_landmarks(l: usize, spec: &NystromSpec) -> Result<Vec<usize>> {
    if spec.rank == 0 || spec.rank > l {
        return Err(SosError::InvalidParameter(format!("Nystrom rank {} outside 1..={l}", spec.rank)));
    }
    let mut idx = match spec.rule {
        LandmarkRule::First => (0..spec.rank).collect(),
        LandmarkRule::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::index::sample(&mut rng, l, spec.rank).into_vec()
        }
    };
    idx.sort_unstable();
    Ok(idx)
}

/// Landmark factorization (output size `p`) and the `r x l` matrix whose
/// column `j` is `w_j = R_L^{-T} k_L(v_j)`. Without a spec every grid point
/// is a landmark.
pub fn nystrom_features(kernel: KernelSpec, grid: &DMatrix<f64>, spec: Option<&NystromSpec>) -> Result<(GramFactorization, DMatrix<f64>)> {
    let l = grid.nrows();
    if l == 0 {
        return Err(SosError::Empty("constraint grid"));
    }
    let landmarks = match spec {
        Some(s) => select_rows(grid, &select_landmarks(l, s)?),
        None => grid.clone(),
    };
    let fact = GramFactorization::build(kernel, landmarks, grid.ncols())?;
    let cross = kernel.cross(fact.anchors(), grid)?;
    let weights = fact
        .upper()
        .tr_solve_upper_triangular(&cross)
        .ok_or_else(|| SosError::Indefinite { jitter: fact.jitter() })?;
    Ok((fact, weights))
}
