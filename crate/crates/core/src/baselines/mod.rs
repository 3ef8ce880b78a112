//! Reference estimators for scalar regression.

mod krr;
mod pwl;

pub use krr::{krr_fit, KrrModel, KrrModelFile};
pub use pwl::{pwl_fit, pwl_fit_with, pwl_predict, PwlFit, PwlModel, PwlModelFile, PwlOptions, PwlReport};
