//! Shared fixtures for the benchmarks.

use nalgebra::DMatrix;
use sos_core::datasets::{gen_convex_samples, BuresSpec, ConvexRegSpec};
use sos_core::{PsdDataset, ScalarDataset};

pub fn convex_data(p: usize, n: usize) -> ScalarDataset {
    gen_convex_samples(&ConvexRegSpec { a: 1.0, b: std::f64::consts::PI, p, n, noise: 0.1, seed: 7 }).expect("valid spec")
}

pub fn bures_data(n: usize) -> PsdDataset {
    BuresSpec::full_rank(n).generate().expect("n >= 2")
}

/// `count` evenly spaced points of `[-1, 1]^p` along the diagonal.
pub fn diagonal_points(p: usize, count: usize) -> DMatrix<f64> {
    DMatrix::from_fn(count, p, |i, j| -1.0 + 2.0 * i as f64 / (count.max(2) - 1) as f64 * (1.0 + 0.1 * j as f64) / 1.1)
}
