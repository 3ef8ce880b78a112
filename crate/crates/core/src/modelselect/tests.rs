use super::*;
use crate::datasets::BuresSpec;
use nalgebra::DMatrix;
use proptest::prelude::*;

#[test]
fn kfold_examples() {
    let f = kfold_split(10, 5, 1).unwrap();
    for k in 0..5 {
        assert_eq!(f.iter().filter(|&&x| x == k).count(), 2);
    }
    let loo = kfold_split(10, 10, 1).unwrap();
    let mut sorted = loo.clone();
    sorted.sort();
    assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    let f = kfold_split(7, 3, 4).unwrap();
    let mut sizes: Vec<usize> = (0..3).map(|k| f.iter().filter(|&&x| x == k).count()).collect();
    sizes.sort();
    assert_eq!(sizes, vec![2, 2, 3]);
    assert!(kfold_split(5, 1, 0).is_err());
    assert!(kfold_split(5, 6, 0).is_err());
}

#[test]
fn fold_indices_partition() {
    let f = kfold_split(9, 3, 2).unwrap();
    for (train, val) in fold_indices(&f, 3) {
        assert_eq!(train.len() + val.len(), 9);
        assert!(val.iter().all(|i| !train.contains(i)));
    }
}

#[test]
fn grids_are_most_regularized_first() {
    let g = GridSpec::psd_default();
    let cells = g.cells();
    assert_eq!(cells.len(), 10 * 9 * 3);
    assert_eq!(cells[0], Cell { lambda1: 1.0, lambda2: 1.0, rho: 0.0, scale: 1.0 });
    assert_eq!(cells.last().unwrap(), &Cell { lambda1: 0.0, lambda2: 1e-8, rho: 0.0, scale: 0.01 });
    let c = GridSpec::convex_default(vec![1e-5, 1e-3]).cells();
    assert_eq!(c.len(), 30);
    assert_eq!(c[0].rho, 1e-3);
    assert_eq!(c[0].lambda2, 1e-3);
    assert!((c[0].scale - 10f64.sqrt()).abs() < 1e-15);
    assert!(GridSpec { rho: vec![], ..GridSpec::krr_default(vec![1.0]) }.validate().is_err());
    assert!(GridSpec { folds: Folds::KFold(1), ..GridSpec::krr_default(vec![1.0]) }.validate().is_err());
}

#[test]
fn selection_breaks_ties_early() {
    assert_eq!(select(&[3.0, 1.0, 1.0, 2.0]), Some(1));
    assert_eq!(select(&[f64::INFINITY, f64::NAN, 5.0]), Some(2));
    assert_eq!(select(&[f64::INFINITY]), None);
}

/// Loss fixed per cell; errors for negative `lambda1`.
struct Scripted;

impl Estimator for Scripted {
    type Data = ScalarDataset;
    type Model = f64;

    fn fit(&self, cell: &Cell, _train: &ScalarDataset, _warm: Option<&Blocks>) -> Result<Fitted<f64>> {
        if cell.lambda1 > 5.0 {
            return Err(SosError::InvalidParameter("scripted failure".into()));
        }
        Ok(Fitted { model: (cell.rho - 0.3).abs(), warm: None, report: None })
    }

    fn loss(&self, model: &f64, _val: &ScalarDataset) -> Result<f64> {
        Ok(*model)
    }
}

fn line_data(n: usize, f: impl Fn(f64) -> f64) -> ScalarDataset {
    let xs: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
    ScalarDataset::new(DMatrix::from_column_slice(n, 1, &xs), xs.iter().map(|&x| f(x)).collect()).unwrap()
}

#[test]
fn scripted_search() {
    let data = line_data(10, |x| x);
    let single = GridSpec { lambda1: vec![0.0], lambda2: vec![0.0], rho: vec![0.7], scale: vec![1.0], folds: Folds::KFold(5), seed: 0 };
    let (res, _) = grid_search(&Scripted, &data, &single).unwrap();
    assert_eq!(res.selected, 0);

    let two = GridSpec { rho: vec![0.9, 0.31], ..single.clone() };
    let (res, refit) = grid_search(&Scripted, &data, &two).unwrap();
    assert_eq!(res.selected_cell().rho, 0.31);
    assert!((refit.model - 0.01).abs() < 1e-12);

    let failing = GridSpec { lambda1: vec![10.0, 0.0], ..two.clone() };
    let (res, _) = grid_search(&Scripted, &data, &failing).unwrap();
    assert_eq!(res.selected_cell().lambda1, 0.0);
    assert!(res.scores.iter().filter(|s| s.cell.lambda1 == 10.0).all(|s| s.failures == 5 && s.mean_loss.is_infinite()));

    let all_fail = GridSpec { lambda1: vec![10.0], ..two };
    assert!(matches!(grid_search(&Scripted, &data, &all_fail), Err(SosError::AllCellsFailed(2))));
}

#[test]
fn krr_picks_smallest_ridge_on_noiseless_data() {
    let data = line_data(20, |x| (2.0 * x).sin());
    let grid = GridSpec { scale: vec![0.5], ..GridSpec::krr_default(vec![1e-1, 1e-3, 1e-5, 1e-7]) };
    let (res, refit) = grid_search(&KrrEstimator { family: KernelFamily::Gaussian }, &data, &grid).unwrap();
    assert_eq!(res.selected_cell().rho, 1e-7);
    let means: Vec<f64> = res.scores.iter().map(|s| s.mean_loss).collect();
    assert!(means.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(refit.model.rho, 1e-7);
}

#[test]
fn convex_search_runs_with_compression() {
    let data = line_data(14, |x| x * x + 0.05 * (7.0 * x).sin());
    let est = ConvexEstimator {
        representation: Representation::Approximate,
        opts: FitOptions::default(),
        nystrom: Some(NystromPolicy { threshold: 8, rank: 8, seed: 3 }),
    };
    let grid = GridSpec { lambda2: vec![1e-3, 1e-5], scale: vec![1.0], ..GridSpec::convex_default(vec![1e-3]) };
    let (res, refit) = grid_search(&est, &data, &grid).unwrap();
    assert_eq!(res.scores.len(), 2);
    assert!(res.scores.iter().all(|s| s.failures == 0));
    assert_eq!(refit.model.certificate.factorization.n(), 8);
}

#[test]
fn psd_search_on_a_geodesic() {
    let data = BuresSpec::full_rank(6).generate().unwrap();
    let est = PsdEstimator::new(KernelFamily::Exponential, FitOptions::default());
    let grid = GridSpec { lambda1: vec![0.0], lambda2: vec![1e-2, 1e-4], scale: vec![1.0, 0.1], ..GridSpec::psd_default() };
    let (res, refit) = grid_search(&est, &data, &grid).unwrap();
    assert_eq!(res.folds.len(), 6);
    assert!(res.scores[res.selected].mean_loss.is_finite());
    assert!(refit.report.unwrap().converged);
}

proptest! {
    #[test]
    fn folds_are_balanced_partitions(n in 2usize..60, k_frac in 0.0..1.0f64, seed in 0u64..100) {
        let k = 2 + ((n - 2) as f64 * k_frac) as usize;
        let f = kfold_split(n, k, seed).unwrap();
        prop_assert_eq!(&f, &kfold_split(n, k, seed).unwrap());
        let sizes: Vec<usize> = (0..k).map(|j| f.iter().filter(|&&x| x == j).count()).collect();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn selection_is_scale_invariant(losses in prop::collection::vec(0.0..10.0f64, 1..20), c in 1e-3..1e3f64) {
        let scaled: Vec<f64> = losses.iter().map(|l| l * c).collect();
        prop_assert_eq!(select(&losses), select(&scaled));
    }
}
