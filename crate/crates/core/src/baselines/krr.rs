use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SosError};
use crate::io::ScalarDataset;
use crate::kernels::{points_from_rows, rows_of, KernelSpec};
use crate::linalg::chol_upper_jitter;
use crate::sos::MODEL_FILE_VERSION;

/// Kernel ridge regressor `f(x) = sum_i alpha_i k(x, x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KrrModel {
    pub kernel: KernelSpec,
    pub anchors: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub rho: f64,
    /// Diagonal shift added on top of `n rho` to factorize.
    pub jitter: f64,
}

/// Minimizes `(1/n) sum_i (y_i - f(x_i))^2 + rho |f|_H^2`, i.e. solves
/// `(K + n rho I) alpha = y`.
pub fn krr_fit(data: &ScalarDataset, kernel: KernelSpec, rho: f64) -> Result<KrrModel> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(SosError::InvalidParameter(format!("rho must be positive, got {rho}")));
    }
    let n = data.len();
    let mut system = kernel.gram(&data.inputs)?;
    for i in 0..n {
        system[(i, i)] += n as f64 * rho;
    }
    let chol = chol_upper_jitter(&system)?;
    let r = &chol.upper;
    let solve = |v: &DVector<f64>| -> Result<DVector<f64>> {
        let w = r.tr_solve_upper_triangular(v).ok_or(SosError::Indefinite { jitter: chol.jitter })?;
        r.solve_upper_triangular(&w).ok_or(SosError::Indefinite { jitter: chol.jitter })
    };
    let y = DVector::from_column_slice(&data.outputs);
    let mut alpha = solve(&y)?;
    // one step of refinement against the unjittered system
    let resid = &y - &system * &alpha;
    alpha += solve(&resid)?;
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(SosError::Indefinite { jitter: chol.jitter });
    }
    Ok(KrrModel { kernel, anchors: data.inputs.clone(), alpha, rho, jitter: chol.jitter })
}

impl KrrModel {
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.kernel.column(&self.anchors, x)?.dot(&self.alpha))
    }

    pub fn predict(&self, queries: &DMatrix<f64>) -> Result<Vec<f64>> {
        if queries.ncols() != self.anchors.ncols() {
            return Err(SosError::DimensionMismatch { expected: self.anchors.ncols(), got: queries.ncols() });
        }
        rows_of(queries).iter().map(|q| self.value(q)).collect()
    }

    /// `|(K + n rho I) alpha - y|` for the training outputs `y`.
    pub fn normal_equation_residual(&self, outputs: &[f64]) -> Result<f64> {
        let n = self.anchors.nrows();
        let mut system = self.kernel.gram(&self.anchors)?;
        for i in 0..n {
            system[(i, i)] += n as f64 * self.rho;
        }
        Ok((system * &self.alpha - DVector::from_column_slice(outputs)).norm())
    }

    pub fn to_file(&self) -> KrrModelFile {
        KrrModelFile {
            version: MODEL_FILE_VERSION,
            kind: "krr".into(),
            kernel: self.kernel,
            anchors: rows_of(&self.anchors),
            alpha: self.alpha.iter().copied().collect(),
            rho: self.rho,
            jitter: self.jitter,
        }
    }

    pub fn from_file(file: KrrModelFile) -> Result<Self> {
        if file.version != MODEL_FILE_VERSION {
            return Err(SosError::Version { found: file.version, expected: MODEL_FILE_VERSION });
        }
        if file.kind != "krr" {
            return Err(SosError::Format(format!("expected a krr model, found `{}`", file.kind)));
        }
        let anchors = points_from_rows(&file.anchors)?;
        if file.alpha.len() != anchors.nrows() {
            return Err(SosError::Format(format!("{} weights for {} anchors", file.alpha.len(), anchors.nrows())));
        }
        Ok(Self {
            kernel: KernelSpec::new(file.kernel.family, file.kernel.sigma)?,
            anchors,
            alpha: DVector::from_vec(file.alpha),
            rho: file.rho,
            jitter: file.jitter,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path, &self.to_file())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(crate::io::read_json(path)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KrrModelFile {
    pub version: u32,
    pub kind: String,
    pub kernel: KernelSpec,
    pub anchors: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub jitter: f64,
}
