use super::*;
use crate::agd::FitOptions;
use crate::cvxreg::{fit_approx, ConvexParams};
use crate::io::ScalarDataset;
use approx::assert_relative_eq;
use proptest::prelude::*;

fn line(lo: f64, hi: f64, k: usize) -> DMatrix<f64> {
    box_probes(&[lo], &[hi], k).unwrap()
}

#[test]
fn fill_distance_examples() {
    let pts = DMatrix::from_column_slice(4, 1, &[0.0, 0.3, 0.7, 1.0]);
    assert_eq!(fill_distance(&pts, &pts).unwrap().h, 0.0);

    let samples = DMatrix::from_column_slice(3, 1, &[0.0, 0.5, 1.0]);
    let fd = fill_distance(&samples, &line(0.0, 1.0, 10_001)).unwrap();
    assert_relative_eq!(fd.h, 0.25, epsilon = 1e-12);
    assert_eq!(fd.probes, 10_001);

    let centre = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
    let square = box_probes(&[0.0, 0.0], &[1.0, 1.0], 20_000).unwrap();
    assert_relative_eq!(fill_distance(&centre, &square).unwrap().h, 0.5f64.sqrt(), epsilon = 1e-12);

    assert!(fill_distance(&DMatrix::zeros(0, 1), &samples).is_err());
    assert!(fill_distance(&samples, &DMatrix::zeros(0, 1)).is_err());
    assert!(fill_distance(&samples, &square).is_err());
}

#[test]
fn box_probes_cover_the_box() {
    let g = box_probes(&[-1.0, 0.0], &[1.0, 2.0], 10).unwrap();
    assert_eq!(g.nrows(), 16);
    assert_eq!(g.column(0).min(), -1.0);
    assert_eq!(g.column(1).max(), 2.0);
    assert!(box_probes(&[1.0], &[0.0], 10).is_err());
    assert!(box_probes(&[], &[], 10).is_err());
}

#[test]
fn c0_examples() {
    assert_eq!(c0_constant(1, 1), 3.0);
    assert_eq!(c0_constant(1, 3), 9.0);
    assert_relative_eq!(c0_constant(2, 1), 486.0, epsilon = 1e-12);
}

#[test]
fn sobolev_examples() {
    let c = sobolev_constants(3.0, 1, 1).unwrap();
    assert_relative_eq!(c.algebra, (2.0 * PI).sqrt() * 2f64.powf(3.5), max_relative = 1e-10);
    assert_relative_eq!(c.algebra, 28.359, epsilon = 1e-3);
    assert_relative_eq!(c.derivative, (2.0 * PI / 3.0).sqrt(), max_relative = 1e-10);
    assert_relative_eq!(c.derivative, 1.4472, epsilon = 1e-4);
    assert_eq!(c.source, ConstantSource::SobolevFormula);
    assert!(sobolev_constants(1.5, 1, 1).is_err());
    assert!(sobolev_constants(2.0, 2, 1).is_err());
}

#[test]
fn user_constants_are_validated() {
    assert!(SmoothnessConstants::user(1, 0.5, 1.0).is_err());
    assert!(SmoothnessConstants::user(1, 1.0, 0.9).is_err());
    assert!(SmoothnessConstants::user(0, 1.0, 1.0).is_err());
    let k = SmoothnessConstants::first_order(&KernelSpec::gaussian(0.5).unwrap()).unwrap();
    assert_relative_eq!(k.derivative, 8f64.sqrt());
    assert!(SmoothnessConstants::first_order(&KernelSpec::exponential(1.0).unwrap()).is_err());
}

#[test]
fn eigen_bound_examples() {
    let k = SmoothnessConstants::user(1, 1.0, 1.0).unwrap();
    assert_eq!(eigen_bound(0.0, 0.0, &k, 0.1, 1.0, 1).unwrap().epsilon, 0.0);
    let b = eigen_bound(0.0, 1.0, &k, 0.1, 1.0, 1).unwrap();
    assert_relative_eq!(b.epsilon, 0.3, epsilon = 1e-12);
    assert!(b.valid);
    assert_eq!(b.applicable(), Some(b.epsilon));

    let k2 = SmoothnessConstants::user(2, 1.0, 1.0).unwrap();
    let e1 = eigen_bound(0.5, 1.0, &k2, 0.01, 1.0, 2).unwrap().epsilon;
    let e2 = eigen_bound(0.5, 1.0, &k2, 0.02, 1.0, 2).unwrap().epsilon;
    assert_relative_eq!(e2 / e1, 4.0, epsilon = 1e-12);

    assert!(eigen_bound(-1.0, 0.0, &k, 0.1, 1.0, 1).is_err());
    assert!(eigen_bound(0.0, -1.0, &k, 0.1, 1.0, 1).is_err());
}

#[test]
fn validity_gate() {
    let k1 = SmoothnessConstants::user(1, 1.0, 1.0).unwrap();
    assert!(!eigen_bound(0.0, 1.0, &k1, 0.6, 0.5, 1).unwrap().valid);
    let k2 = SmoothnessConstants::user(2, 1.0, 1.0).unwrap();
    let b = eigen_bound(0.0, 1.0, &k2, 0.1, 1.0, 1).unwrap();
    assert!(!b.valid, "m = 2 needs h <= r / 18");
    assert_eq!(b.applicable(), None);
    assert!(eigen_bound(0.0, 1.0, &k2, 0.05, 1.0, 1).unwrap().valid);
}

#[test]
fn multi_index_enumeration() {
    assert_eq!(multi_indices(1, 3), vec![vec![3]]);
    let two = multi_indices(2, 2);
    assert_eq!(two.len(), 3);
    assert!(two.iter().all(|c| c.iter().sum::<u32>() == 2));
    assert_eq!(multi_indices(3, 2).len(), 6);
    let st = stencil(&[2]);
    let weights: Vec<f64> = st.iter().map(|s| s.1).collect();
    assert_eq!(weights, vec![1.0, -2.0, 1.0]);
}

#[test]
fn seminorm_estimates_match_closed_forms() {
    let f = |x: &[f64]| Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![x[0].sin(), x[0] * x[0]])));
    let probes = line(0.0, 1.0, 201);
    let first = seminorm_matrix(f, &probes, 1, 1e-5).unwrap();
    assert_relative_eq!(first.matrix[(0, 0)], 1.0, epsilon = 1e-6);
    assert_relative_eq!(first.matrix[(1, 1)], 2.0, epsilon = 1e-6);
    assert_eq!(first.matrix[(0, 1)], 0.0);
    let second = seminorm_matrix(f, &probes, 2, 1e-3).unwrap();
    assert_relative_eq!(second.matrix[(0, 0)], 1f64.sin(), epsilon = 1e-5);
    assert_relative_eq!(second.matrix[(1, 1)], 2.0, epsilon = 1e-5);
    assert_relative_eq!(second.aggregate(SeminormAggregate::Trace).unwrap(), 1f64.sin() + 2.0, epsilon = 1e-5);
    assert_relative_eq!(second.aggregate(SeminormAggregate::LambdaMax).unwrap(), 2.0, epsilon = 1e-5);

    let mixed = |x: &[f64]| Ok(DMatrix::from_element(1, 1, x[0] * x[1]));
    let sq = box_probes(&[-1.0, -1.0], &[1.0, 1.0], 25).unwrap();
    let est = seminorm_matrix(mixed, &sq, 2, 1e-3).unwrap();
    assert_relative_eq!(est.matrix[(0, 0)], 1.0, epsilon = 1e-6);
}

#[test]
fn empirical_min_eig_examples() {
    let f = |x: &[f64]| Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![x[0], 1.0])));
    let probes = line(-1.0, 1.0, 101);
    let m = empirical_min_eig(f, &probes).unwrap();
    assert_relative_eq!(m.value, -1.0);
    assert_eq!(m.index, 0);

    let anchors = DMatrix::from_column_slice(3, 1, &[0.0, 0.4, 0.9]);
    let fact = crate::sos::GramFactorization::build(KernelSpec::gaussian(0.5).unwrap(), anchors, 2).unwrap();
    let a = DMatrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
    let model = crate::sos::SosModel::new(fact, &a * a.transpose()).unwrap();
    let m = empirical_min_eig(|x| model.evaluate(x), &probes).unwrap();
    assert!(m.value >= -1e-8);
    assert!(empirical_min_eig(f, &DMatrix::zeros(0, 1)).is_err());
}

fn zero_model() -> ConvexModel {
    let inputs = DMatrix::from_column_slice(4, 1, &[-0.8, -0.2, 0.3, 0.9]);
    let data = ScalarDataset::new(inputs, vec![0.0; 4]).unwrap();
    let params = ConvexParams::new(KernelSpec::gaussian(1.0).unwrap(), 1e-3, 0.0, 1e-3).unwrap();
    fit_approx(&data, None, &params, &FitOptions::default()).unwrap().model
}

#[test]
fn convexity_deficit_examples() {
    let mut model = zero_model();
    let k = SmoothnessConstants::user(1, 1.0, 1.0).unwrap();
    let probes = line(-1.0, 1.0, 101);
    let semi = hessian_seminorms(&model, &probes, 1, 1e-4).unwrap();
    assert!(semi.matrix.amax() < 1e-12);
    let eta = convexity_deficit(&model, &semi, SeminormAggregate::Trace, &k, 0.1, 1.0).unwrap();
    assert_eq!(eta.epsilon, 0.0);

    let size = model.certificate.b.nrows();
    model.certificate.b = DMatrix::identity(size, size) / size as f64;
    let zero = SeminormEstimate::zero(1, 1);
    let eta = convexity_deficit(&model, &zero, SeminormAggregate::Trace, &k, 0.1, 1.0).unwrap();
    assert_relative_eq!(eta.epsilon, 0.3, epsilon = 1e-12);
    let half = convexity_deficit(&model, &zero, SeminormAggregate::Trace, &k, 0.05, 1.0).unwrap();
    assert_relative_eq!(eta.epsilon / half.epsilon, 2.0, epsilon = 1e-12);

    let wrong_order = SeminormEstimate::zero(1, 2);
    assert!(convexity_deficit(&model, &wrong_order, SeminormAggregate::Trace, &k, 0.1, 1.0).is_err());
}

#[test]
fn report_for_convex_model() {
    let model = zero_model();
    let k = SmoothnessConstants::first_order(&model.kernel).unwrap();
    let report = CertificateReport::for_convex_model(&model, &CertifyOptions::cube(k, 1.0, 1)).unwrap();
    assert!(report.valid);
    assert_relative_eq!(report.fill_distance, 0.3, epsilon = 1e-3);
    assert_eq!(report.fill_probes, PROBES_PER_DIM);
    assert_eq!(report.eta, report.epsilon);
    let text = serde_json::to_string(&report).unwrap();
    let back: CertificateReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, report);
}

proptest! {
    #[test]
    fn bound_is_monotone(
        semi in 0.0..10.0f64, tr in 0.0..10.0f64, h in 0.0..1.0f64,
        m_alg in 1.0..5.0f64, d in 1.0..5.0f64, m in 1u32..4, bump in 0.0..1.0f64,
    ) {
        let k = SmoothnessConstants::user(m, m_alg, d).unwrap();
        let base = eigen_bound(semi, tr, &k, h, 1.0, 2).unwrap().epsilon;
        prop_assert!(base >= 0.0);
        prop_assert!(eigen_bound(semi + bump, tr, &k, h, 1.0, 2).unwrap().epsilon >= base);
        prop_assert!(eigen_bound(semi, tr + bump, &k, h, 1.0, 2).unwrap().epsilon >= base);
        prop_assert!(eigen_bound(semi, tr, &k, h + bump, 1.0, 2).unwrap().epsilon >= base);
        let bigger_m = SmoothnessConstants::user(m, m_alg + bump, d).unwrap();
        prop_assert!(eigen_bound(semi, tr, &bigger_m, h, 1.0, 2).unwrap().epsilon >= base);
        let bigger_d = SmoothnessConstants::user(m, m_alg, d + bump).unwrap();
        prop_assert!(eigen_bound(semi, tr, &bigger_d, h, 1.0, 2).unwrap().epsilon >= base);
    }

    #[test]
    fn bound_is_homogeneous_in_h(semi in 0.0..10.0f64, tr in 0.0..10.0f64, h in 1e-3..1.0f64, m in 1u32..4) {
        let k = SmoothnessConstants::user(m, 1.0, 1.0).unwrap();
        let a = eigen_bound(semi, tr, &k, h, 1.0, 1).unwrap().epsilon;
        let b = eigen_bound(semi, tr, &k, 2.0 * h, 1.0, 1).unwrap().epsilon;
        prop_assert!((b - a * 2f64.powi(m as i32)).abs() <= 1e-9 * (1.0 + b));
    }
}
