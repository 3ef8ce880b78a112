use super::*;
use crate::agd::FitOptions;
use crate::io::ScalarDataset;
use crate::linalg::frob_dot;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gauss(sigma: f64) -> KernelSpec {
    KernelSpec::gaussian(sigma).unwrap()
}

fn random_data(rng: &mut ChaCha8Rng, n: usize, p: usize) -> ScalarDataset {
    let inputs = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    let outputs = (0..n).map(|i| inputs.row(i).norm_squared() + 0.1 * rng.random_range(-1.0..1.0)).collect();
    ScalarDataset::new(inputs, outputs).unwrap()
}

fn random_blocks(rng: &mut ChaCha8Rng, l: usize, p: usize) -> Blocks {
    (0..l)
        .map(|_| {
            let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
            (&a + a.transpose()) * 0.5
        })
        .collect()
}

fn fd_check(eval: impl Fn(&[DMatrix<f64>]) -> (f64, Blocks), gammas: &[DMatrix<f64>], p: usize) {
    let (_, grad) = eval(gammas);
    let h = 1e-6;
    for j in 0..gammas.len() {
        for a in 0..p {
            for b in 0..=a {
                let mut plus = gammas.to_vec();
                let mut minus = gammas.to_vec();
                for (m, s) in [(&mut plus, 1.0), (&mut minus, -1.0)] {
                    m[j][(a, b)] += s * h;
                    if a != b {
                        m[j][(b, a)] += s * h;
                    }
                }
                let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                let mut dir = DMatrix::zeros(p, p);
                dir[(a, b)] = 1.0;
                dir[(b, a)] = 1.0;
                let an = frob_dot(&grad[j], &dir);
                assert!((fd - an).abs() <= 1e-5 * (1.0 + an.abs()), "block {j} ({a},{b}): fd {fd} vs {an}");
            }
        }
    }
}

fn grid_pts(rng: &mut ChaCha8Rng, l: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(l, p, |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn hessian_of_expansion_examples() {
    let k = gauss(1.0);
    let anchors = DMatrix::from_row_slice(1, 2, &[0.3, -0.2]);
    assert_eq!(hessian_of_expansion(&k, &[0.0], &anchors, &[0.1, 0.1]).unwrap(), DMatrix::zeros(2, 2));
    let h = hessian_of_expansion(&k, &[1.0], &anchors, &[0.3, -0.2]).unwrap();
    assert!((h + DMatrix::identity(2, 2) * 2.0).amax() < 1e-14);
    assert!(hessian_of_expansion(&KernelSpec::exponential(1.0).unwrap(), &[1.0], &anchors, &[0.0, 0.0]).is_err());
}

#[test]
fn hessian_of_expansion_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let k = gauss(0.8);
    let anchors = grid_pts(&mut rng, 5, 2);
    let alpha: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f = |x: &[f64]| -> f64 { (0..5).map(|i| alpha[i] * k.eval(x, anchors.row(i).transpose().as_slice()).unwrap()).sum() };
    let v = [0.2, -0.4];
    let h = hessian_of_expansion(&k, &alpha, &anchors, &v).unwrap();
    let s = 1e-4;
    for a in 0..2 {
        for b in 0..2 {
            let at = |da: f64, db: f64| {
                let mut x = v;
                x[a] += da;
                x[b] += db;
                f(&x)
            };
            let fd = (at(s, s) - at(s, -s) - at(-s, s) + at(-s, -s)) / (4.0 * s * s);
            assert!((fd - h[(a, b)]).abs() < 1e-4, "{fd} vs {}", h[(a, b)]);
        }
    }
}

#[test]
fn approx_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..20 {
        let (n, p, l) = (rng.random_range(2..=5), rng.random_range(1..=2), rng.random_range(1..=3));
        let data = random_data(&mut rng, n, p);
        let grid = grid_pts(&mut rng, l, p);
        let params = ConvexParams::new(gauss(rng.random_range(0.7..1.5)), 1e-2, 1e-2 * (trial % 2) as f64, 0.5).unwrap();
        let prob = ApproxProblem::new(&data, Some(&grid), &params).unwrap();
        let gammas = random_blocks(&mut rng, l, p);
        fd_check(|g| prob.dual_objective_grad(g).unwrap(), &gammas, p);
    }
}

#[test]
fn exact_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let (n, p, l) = (rng.random_range(2..=5), rng.random_range(1..=2), rng.random_range(1..=3));
        let data = random_data(&mut rng, n, p);
        let grid = grid_pts(&mut rng, l, p);
        let params = ConvexParams::new(gauss(1.0), 0.1, 0.0, 0.5).unwrap();
        let prob = ExactProblem::new(&data, Some(&grid), &params).unwrap();
        let gammas = random_blocks(&mut rng, l, p);
        fd_check(|g| prob.dual_objective_grad(g).unwrap(), &gammas, p);
    }
}

#[test]
fn lagrangian_gap_identity() {
    // primal - dual = <Gamma, H_f - Psi^T B Psi> at any multipliers
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = random_data(&mut rng, 5, 2);
    let params = ConvexParams::new(gauss(1.0), 0.05, 1e-3, 0.1).unwrap();
    let gammas = random_blocks(&mut rng, 5, 2);
    let inner: f64;
    {
        let prob = ApproxProblem::new(&data, None, &params).unwrap();
        let (_, grad) = prob.dual_objective_grad(&gammas).unwrap();
        inner = gammas.iter().zip(&grad).map(|(a, b)| frob_dot(a, b)).sum();
        let (primal, dual) = prob.objectives(&gammas).unwrap();
        let gap = primal - dual;
        assert!((gap - inner).abs() < 1e-9 * (1.0 + inner.abs()), "{gap} vs {inner}");
    }
    let prob = ExactProblem::new(&data, None, &params).unwrap();
    let (_, grad) = prob.dual_objective_grad(&gammas).unwrap();
    let inner: f64 = gammas.iter().zip(&grad).map(|(a, b)| frob_dot(a, b)).sum();
    let (primal, dual) = prob.objectives(&gammas).unwrap();
    assert!((primal - dual - inner).abs() < 1e-8 * (1.0 + inner.abs()), "{} vs {inner}", primal - dual);
}

#[test]
fn zero_targets_give_zero_model() {
    let data = ScalarDataset::new(DMatrix::from_column_slice(3, 1, &[-1.0, 0.0, 1.0]), vec![0.0; 3]).unwrap();
    let params = ConvexParams::new(gauss(1.0), 1e-3, 0.0, 1e-3).unwrap();
    for fit in [fit_approx(&data, None, &params, &FitOptions::default()).unwrap(), fit_exact(&data, None, &params, &FitOptions::default()).unwrap()] {
        assert!(fit.model.alpha().amax() < 1e-12);
        assert!(fit.model.certificate.b.amax() < 1e-12);
        assert!(fit.report.primal_objective.abs() < 1e-12);
        assert_eq!(fit.model.value(&[0.4]).unwrap(), 0.0);
    }
}

#[test]
fn parabola_fit_is_convex() {
    let xs = [-1.0, 0.0, 1.0];
    let data = ScalarDataset::new(DMatrix::from_column_slice(3, 1, &xs), vec![1.01, -0.01, 0.99]).unwrap();
    let params = ConvexParams::new(gauss(1.0), 1e-4, 0.0, 1e-4).unwrap();
    let fit = fit_approx(&data, None, &params, &FitOptions::default()).unwrap();
    let res = fit.report.constraint_residual.unwrap();
    assert!(res < 1e-3, "{:?}", fit.report);
    let worst = (0..1000)
        .map(|i| fit.model.hessian(&[-1.0 + 2.0 * i as f64 / 999.0]).unwrap()[(0, 0)])
        .fold(f64::INFINITY, f64::min);
    assert!(worst >= -1e-3, "{worst}");
}

#[test]
fn approx_solution_satisfies_constraints() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data = random_data(&mut rng, 8, 1);
    let params = ConvexParams::new(gauss(1.0), 1e-3, 0.0, 1e-3).unwrap();
    let fit = fit_approx(&data, None, &params, &FitOptions::default()).unwrap();
    assert!(fit.report.converged, "{:?}", fit.report);
    let residuals = fit.model.constraint_residuals().unwrap();
    let scale = rows_of(&fit.model.grid).iter().map(|v| fit.model.hessian(v).unwrap().norm()).fold(0.0, f64::max);
    assert!(residuals.iter().all(|&r| r <= 1e-4 * (1.0 + scale)), "{residuals:?}");
    assert!(linalg::lambda_min(&fit.model.certificate.b).unwrap() >= -1e-8);
    for g in &fit.gammas {
        assert!(linalg::asymmetry(g) <= 1e-12);
    }
}

#[test]
fn exact_gap_after_solve() {
    let xs: Vec<f64> = (0..6).map(|i| -1.0 + 0.4 * i as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|x| x * x + 0.05 * (x * 7.0).sin()).collect();
    let data = ScalarDataset::new(DMatrix::from_column_slice(6, 1, &xs), ys).unwrap();
    let params = ConvexParams::new(gauss(1.0), 1e-2, 0.0, 1e-2).unwrap();
    let fit = fit_exact(&data, None, &params, &FitOptions::default()).unwrap();
    let r = &fit.report;
    assert!(r.gap.abs() <= 1e-5 * (1.0 + r.primal_objective.abs()), "{r:?}");
    let residuals = fit.model.constraint_residuals().unwrap();
    assert!(residuals.iter().all(|&v| v < 1e-3), "{residuals:?}");
}

#[test]
fn exact_with_zero_multipliers_is_ridge_regression() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let data = random_data(&mut rng, 7, 2);
    let k = gauss(0.9);
    let rho = 1e-2;
    let params = ConvexParams::new(k, rho, 0.0, 1.0).unwrap();
    let prob = ExactProblem::new(&data, None, &params).unwrap();
    let zeros = vec![DMatrix::zeros(2, 2); 7];
    let beta = prob.coefficients(&zeros);
    let mut system = k.gram(&data.inputs).unwrap();
    for i in 0..7 {
        system[(i, i)] += 7.0 * rho;
    }
    let direct = system.lu().solve(&DVector::from_column_slice(&data.outputs)).unwrap();
    assert!((&beta - &direct).amax() < 1e-10);
    assert!((&beta - prob.ridge_coefficients()).amax() < 1e-12);
}

#[test]
fn nystrom_full_rank_is_lossless() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let data = random_data(&mut rng, 10, 1);
    let params = ConvexParams::new(gauss(1.0), 1e-3, 0.0, 1e-3).unwrap();
    let full = fit_approx(&data, None, &params, &FitOptions::default()).unwrap();
    let comp = fit_approx(&data, None, &params.clone().with_nystrom(NystromSpec::random(10, 7)), &FitOptions::default()).unwrap();
    let (a, b) = (full.report.primal_objective, comp.report.primal_objective);
    assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "{a} vs {b}");
}

#[test]
fn nystrom_low_rank_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let data = random_data(&mut rng, 4, 1);
    let params = ConvexParams::new(gauss(1.0), 1e-3, 0.0, 1e-3).unwrap().with_nystrom(NystromSpec::first(1));
    let opts = FitOptions { max_iters: 2_000, ..FitOptions::default() };
    let fit = fit_approx(&data, None, &params, &opts).unwrap();
    assert!(fit.report.constraint_residual.unwrap().is_finite());
    assert_eq!(fit.model.certificate.b.nrows(), 1);
}

#[test]
fn nystrom_drops_duplicated_landmark() {
    let xs = [-1.0, -0.3, 0.4, 1.0];
    let data = ScalarDataset::new(DMatrix::from_column_slice(4, 1, &xs), xs.iter().map(|x| x * x).collect()).unwrap();
    let grid = DMatrix::from_column_slice(5, 1, &[-1.0, -0.3, 0.4, 1.0, 0.4]);
    let params = ConvexParams::new(gauss(1.0), 1e-3, 0.0, 1e-2).unwrap();
    let reference = fit_approx(&data, Some(&grid.rows(0, 4).into_owned()), &params, &FitOptions::default()).unwrap();
    let comp = fit_approx(&data, Some(&grid), &params.clone().with_nystrom(NystromSpec::first(4)), &FitOptions::default()).unwrap();
    let (a, b) = (reference.report.primal_objective, comp.report.primal_objective);
    assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "{a} vs {b}");
}

#[test]
fn prediction_examples() {
    let data = ScalarDataset::new(DMatrix::from_column_slice(2, 1, &[0.0, 3.0]), vec![1.0, 0.0]).unwrap();
    let params = ConvexParams::new(gauss(1.0), 1e-3, 0.0, 1.0).unwrap();
    let prob = ExactProblem::new(&data, None, &params).unwrap();
    let mut fit = prob.solve(None, &FitOptions { max_iters: 1, ..FitOptions::default() }).unwrap();
    fit.model.coefficients = DVector::from_vec(vec![1.0, 0.0]);
    fit.model.gammas = vec![DMatrix::zeros(1, 1); 2];
    assert!((fit.model.value(&[0.0]).unwrap() - 1.0).abs() < 1e-15);
    fit.model.coefficients.fill(0.0);
    assert_eq!(fit.model.predict(&DMatrix::from_column_slice(3, 1, &[-1.0, 0.5, 9.0])).unwrap(), vec![0.0; 3]);
    assert!(fit.model.value(&[0.0, 1.0]).is_err());
}

#[test]
fn exact_hessian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let data = random_data(&mut rng, 5, 2);
    let params = ConvexParams::new(gauss(1.0), 0.1, 0.0, 0.1).unwrap();
    let mut fit = fit_exact(&data, None, &params, &FitOptions { max_iters: 5, ..FitOptions::default() }).unwrap();
    fit.model.gammas = random_blocks(&mut rng, 5, 2);
    let v = [0.1, 0.3];
    let h = fit.model.hessian(&v).unwrap();
    let s = 1e-4;
    for a in 0..2 {
        for b in 0..2 {
            let at = |da: f64, db: f64| {
                let mut x = v;
                x[a] += da;
                x[b] += db;
                fit.model.value(&x).unwrap()
            };
            let fd = (at(s, s) - at(s, -s) - at(-s, s) + at(-s, -s)) / (4.0 * s * s);
            assert!((fd - h[(a, b)]).abs() < 1e-4 * (1.0 + fd.abs()), "{fd} vs {}", h[(a, b)]);
        }
    }
}

#[test]
fn model_file_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let data = random_data(&mut rng, 6, 2);
    let params = ConvexParams::new(gauss(1.0), 1e-2, 0.0, 1e-2).unwrap();
    let opts = FitOptions { max_iters: 200, ..FitOptions::default() };
    for fit in [fit_approx(&data, None, &params, &opts).unwrap(), fit_exact(&data, None, &params, &opts).unwrap()] {
        let text = serde_json::to_string(&fit.model.to_file()).unwrap();
        let back = ConvexModel::from_file(serde_json::from_str(&text).unwrap()).unwrap();
        for x in [[0.1, 0.2], [-0.7, 0.5]] {
            assert_eq!(back.value(&x).unwrap(), fit.model.value(&x).unwrap());
            assert_eq!(back.hessian(&x).unwrap(), fit.model.hessian(&x).unwrap());
        }
        let mut bad = fit.model.to_file();
        bad.coefficients.pop();
        assert!(ConvexModel::from_file(bad).is_err());
    }
}

#[test]
fn parameter_validation() {
    let data = ScalarDataset::new(DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), vec![0.0, 1.0]).unwrap();
    assert!(ApproxProblem::new(&data, None, &ConvexParams::new(gauss(1.0), 0.0, 0.0, 1.0).unwrap()).is_err());
    assert!(ApproxProblem::new(&data, None, &ConvexParams::new(KernelSpec::exponential(1.0).unwrap(), 1e-3, 0.0, 1.0).unwrap()).is_err());
    assert!(ExactProblem::new(&data, None, &ConvexParams::new(gauss(1.0), 1e-3, 1.0, 0.0).unwrap()).is_err());
    let bad_grid = DMatrix::zeros(2, 2);
    assert!(ApproxProblem::new(&data, Some(&bad_grid), &ConvexParams::new(gauss(1.0), 1e-3, 0.0, 1.0).unwrap()).is_err());
}
