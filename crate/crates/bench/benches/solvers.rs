use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sos_bench::{bures_data, convex_data, diagonal_points};
use sos_core::baselines::{krr_fit, pwl_fit};
use sos_core::cvxreg::{ApproxProblem, ConvexParams, NystromSpec};
use sos_core::psdreg::PsdProblem;
use sos_core::{FitOptions, GramFactorization, KernelSpec, RegularizerSpec, SolverKind, SosModel};

fn psd_fit(c: &mut Criterion) {
    let data = bures_data(12);
    let problem = PsdProblem::new(&data, KernelSpec::exponential(1.0).unwrap(), RegularizerSpec::new(1e-6, 1e-6).unwrap()).unwrap();
    let mut group = c.benchmark_group("psd_fit");
    for solver in [SolverKind::Accelerated, SolverKind::Newton] {
        let opts = FitOptions::default().with_solver(solver);
        group.bench_function(format!("{solver:?}"), |b| b.iter(|| problem.solve(None, black_box(&opts)).unwrap()));
    }
    group.finish();
}

fn convex_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("convex_fit");
    group.sample_size(10);
    for n in [10, 20, 40] {
        let data = convex_data(2, n);
        let params = ConvexParams::new(KernelSpec::gaussian(1.0).unwrap(), 1e-3, 0.0, 1e-3).unwrap();
        let problem = ApproxProblem::new(&data, None, &params).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| problem.solve(None, &FitOptions::default()).unwrap()));
    }
    group.finish();
}

fn nystrom_rank(c: &mut Criterion) {
    let data = convex_data(2, 20);
    let opts = FitOptions { tol: 0.0, max_iters: 100, ..FitOptions::default() }.with_solver(SolverKind::Accelerated);
    let mut group = c.benchmark_group("nystrom_100_iterations");
    group.sample_size(10);
    for rank in [5, 10, 20] {
        let params = ConvexParams::new(KernelSpec::gaussian(1.0).unwrap(), 1e-3, 0.0, 1e-3).unwrap().with_nystrom(NystromSpec::random(rank, 1));
        let problem = ApproxProblem::new(&data, None, &params).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(rank), &rank, |b, _| b.iter(|| problem.solve(None, &opts).unwrap()));
    }
    group.finish();
}

fn baselines(c: &mut Criterion) {
    let data = convex_data(2, 40);
    c.bench_function("krr_fit_40", |b| b.iter(|| krr_fit(black_box(&data), KernelSpec::gaussian(1.0).unwrap(), 1e-4).unwrap()));
    let mut group = c.benchmark_group("pwl");
    group.sample_size(10);
    group.bench_function("fit_40", |b| b.iter(|| pwl_fit(black_box(&data), 1e-6, 20_000).unwrap()));
    group.finish();
}

fn evaluate(c: &mut Criterion) {
    let anchors = diagonal_points(2, 30);
    let fact = GramFactorization::build(KernelSpec::gaussian(0.7).unwrap(), anchors, 3).unwrap();
    let size = 30 * 3;
    let a = nalgebra::DMatrix::from_fn(size, 4, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5);
    let model = SosModel::new(fact, &a * a.transpose()).unwrap();
    c.bench_function("sos_evaluate_n30_d3", |b| b.iter(|| model.evaluate(black_box(&[0.1, -0.2])).unwrap()));
}

criterion_group!(benches, psd_fit, convex_fit, nystrom_rank, baselines, evaluate);
criterion_main!(benches);
