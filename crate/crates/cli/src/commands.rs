use std::fs;
use std::path::Path;

use serde::Serialize;
use sos_core::baselines::{pwl_predict, KrrModel, PwlModel};
use sos_core::certify::{box_probes, empirical_min_eig, CertificateReport, CertifyOptions, SmoothnessConstants};
use sos_core::cvxreg::{ApproxProblem, ConvexModel, ConvexParams, ExactProblem, NystromSpec, Representation};
use sos_core::datasets::{gen_convex_samples, BuresSpec, ConvexRegSpec};
use sos_core::experiments::{self, BenchmarkConfig, BenchmarkRow, Method};
use sos_core::io::{self, input_header};
use sos_core::modelselect::{grid_search, ConvexEstimator, CvResult, GridSpec, KrrEstimator, NystromPolicy, PsdEstimator};
use sos_core::{psdreg, FitOptions, KernelFamily, KernelSpec, RegularizerSpec, SolverKind, SosModel};

use crate::args::*;
use crate::plots;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn fit_options(s: &SolverArgs) -> Result<FitOptions> {
    if !(s.tol >= 0.0) {
        return Err(CliError::Usage(format!("--tol must be non-negative, got {}", s.tol)));
    }
    if s.max_iters == 0 {
        return Err(CliError::Usage("--max-iters must be positive".into()));
    }
    let mut opts = FitOptions { tol: s.tol, max_iters: s.max_iters, ..FitOptions::default() };
    opts.solver = s.solver.map(|k| match k {
        SolverArg::Accelerated => SolverKind::Accelerated,
        SolverArg::Newton => SolverKind::Newton,
    });
    Ok(opts)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    io::write_json(path, value).map_err(CliError::from)
}

fn bures_spec(endpoints: EndpointsArg, n: usize) -> BuresSpec {
    match endpoints {
        EndpointsArg::FullRank => BuresSpec::full_rank(n),
        EndpointsArg::RankOne => BuresSpec::rank_one(n),
    }
}

fn read_grid(path: Option<&Path>) -> Result<Option<GridSpec>> {
    let Some(path) = path else { return Ok(None) };
    let grid: GridSpec = io::read_json(path)?;
    grid.validate()?;
    Ok(Some(grid))
}

pub fn fit_psd(a: &FitPsdArgs) -> Result<()> {
    let opts = fit_options(&a.solver)?;
    let data = io::read_psd_csv(&a.data)?;
    let kernel = KernelSpec::new(a.kernel.kernel.into(), a.kernel.sigma)?;
    let (model, report) = psdreg::fit(&data, kernel, RegularizerSpec::new(a.lambda1, a.lambda2)?, &opts)?;
    ensure_dir(&a.out)?;
    model.save(a.out.join("model.json"))?;
    write_json(&a.out.join("report.json"), &report)?;
    let worst = (0..data.len()).map(|i| (model.evaluate_at_anchor(i) - &data.targets[i]).norm()).fold(0.0, f64::max);
    eprintln!(
        "fit-psd: {} points, gap {:.3e}, {} iterations, max training error {worst:.3e}",
        data.len(),
        report.gap,
        report.iterations
    );
    if !report.converged {
        return Err(CliError::NotConverged(format!("after {} iterations (gap {:.3e})", report.iterations, report.gap)));
    }
    Ok(())
}

fn certify_model(model: &ConvexModel, b: f64, seminorm_probes: usize) -> Result<CertificateReport> {
    let constants = SmoothnessConstants::first_order(&model.kernel)?;
    let mut opts = CertifyOptions::cube(constants, b, model.input_dim());
    opts.seminorm_probes = seminorm_probes;
    Ok(CertificateReport::for_convex_model(model, &opts)?)
}

pub fn fit_convex(a: &FitConvexArgs) -> Result<()> {
    let opts = fit_options(&a.solver)?;
    let family: KernelFamily = a.kernel.kernel.into();
    if family == KernelFamily::Exponential {
        return Err(CliError::Usage(
            "convex regression needs second derivatives of the kernel; the exponential kernel is not differentiable at zero".into(),
        ));
    }
    let data = io::read_scalar_csv(&a.data)?;
    let grid = a.grid_file.as_ref().map(io::read_points_csv).transpose()?;
    let mut params = ConvexParams::new(KernelSpec::new(family, a.kernel.sigma)?, a.rho, a.lambda1, a.lambda2)?;
    if let Some(rank) = a.nystrom_rank {
        params = params.with_nystrom(NystromSpec::random(rank, a.seed));
    }
    let fit = match Representation::from(a.representation) {
        Representation::Approximate => ApproxProblem::new(&data, grid.as_ref(), &params)?.solve(None, &opts)?,
        Representation::Exact => ExactProblem::new(&data, grid.as_ref(), &params)?.solve(None, &opts)?,
    };
    ensure_dir(&a.out)?;
    fit.model.save(a.out.join("model.json"))?;
    write_json(&a.out.join("report.json"), &fit.report)?;
    eprintln!("fit-convex: {} points, gap {:.3e}, {} iterations", data.len(), fit.report.gap, fit.report.iterations);
    let mut precondition = None;
    if let Some(b) = a.domain.domain_b {
        let cert = certify_model(&fit.model, b, a.domain.seminorm_probes)?;
        write_json(&a.out.join("certificate.json"), &cert)?;
        match cert.eta {
            Some(eta) => eprintln!("certificate: eta {eta:.4e} (fill distance {:.4})", cert.fill_distance),
            None => precondition = Some(format!("fill distance {:.4} exceeds the admissible radius", cert.fill_distance)),
        }
    }
    if !fit.report.converged {
        return Err(CliError::NotConverged(format!("after {} iterations (gap {:.3e})", fit.report.iterations, fit.report.gap)));
    }
    match precondition {
        Some(msg) => Err(CliError::Precondition(msg)),
        None => Ok(()),
    }
}

/// A saved model of any kind, dispatched on its `kind` field.
enum AnyModel {
    Psd(SosModel),
    Convex(ConvexModel),
    Krr(KrrModel),
    Pwl(PwlModel),
}

fn load_any(path: &Path) -> Result<AnyModel> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(sos_core::SosError::from)?;
    let kind = value.get("kind").and_then(|k| k.as_str()).unwrap_or_default().to_owned();
    fn parse<T: serde::de::DeserializeOwned>(v: serde_json::Value) -> std::result::Result<T, sos_core::SosError> {
        serde_json::from_value(v).map_err(sos_core::SosError::from)
    }
    Ok(match kind.as_str() {
        "psd-sos" => AnyModel::Psd(SosModel::from_file(parse(value)?)?),
        "convex" => AnyModel::Convex(ConvexModel::from_file(parse(value)?)?),
        "krr" => AnyModel::Krr(KrrModel::from_file(parse(value)?)?),
        "pwl" => AnyModel::Pwl(PwlModel::from_file(parse(value)?)?),
        other => return Err(CliError::Usage(format!("{}: unknown model kind `{other}`", path.display()))),
    })
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let model = load_any(&a.model)?;
    let queries = io::read_points_csv(&a.queries)?;
    let p = queries.ncols();
    let mut w = csv::Writer::from_path(&a.out)?;
    let mut header = input_header(p);
    let scalar = |values: Vec<f64>, w: &mut csv::Writer<fs::File>| -> Result<()> {
        for (i, y) in values.iter().enumerate() {
            let mut row: Vec<String> = queries.row(i).iter().map(|v| v.to_string()).collect();
            row.push(y.to_string());
            w.write_record(&row)?;
        }
        Ok(())
    };
    match &model {
        AnyModel::Psd(m) => {
            let d = m.d();
            header.extend((0..d * d).map(|k| format!("m{}{}", k / d + 1, k % d + 1)));
            w.write_record(&header)?;
            for (i, f) in m.predict(&queries)?.iter().enumerate() {
                let mut row: Vec<String> = queries.row(i).iter().map(|v| v.to_string()).collect();
                row.extend(f.transpose().iter().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
        }
        other => {
            header.push("y".into());
            w.write_record(&header)?;
            let values = match other {
                AnyModel::Convex(m) => m.predict(&queries)?,
                AnyModel::Krr(m) => m.predict(&queries)?,
                AnyModel::Pwl(m) => pwl_predict(m, &queries)?,
                AnyModel::Psd(_) => unreachable!(),
            };
            scalar(values, &mut w)?;
        }
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}

#[derive(Serialize)]
struct CertifyOutput {
    certificate: CertificateReport,
    /// Smallest Hessian eigenvalue over the scan, when requested.
    min_hessian_eig: Option<f64>,
}

pub fn certify(a: &CertifyArgs) -> Result<()> {
    let model = ConvexModel::load(&a.model)?;
    let cert = certify_model(&model, a.domain_b, a.seminorm_probes)?;
    let min_hessian_eig = if a.scan_probes > 0 {
        let p = model.input_dim();
        let probes = box_probes(&vec![-a.domain_b; p], &vec![a.domain_b; p], a.scan_probes)?;
        Some(empirical_min_eig(|x| model.hessian(x), &probes)?.value)
    } else {
        None
    };
    let valid = cert.eta.is_some();
    let h = cert.fill_distance;
    write_json(&a.out, &CertifyOutput { certificate: cert, min_hessian_eig })?;
    if !valid {
        return Err(CliError::Precondition(format!("fill distance {h:.4} exceeds the admissible radius")));
    }
    Ok(())
}

pub fn gen(cmd: &GenCommand) -> Result<()> {
    match cmd {
        GenCommand::Bures { n, endpoints, out } => {
            let data = bures_spec(*endpoints, *n).generate()?;
            io::write_text(out, &io::psd_csv(&data))?;
        }
        GenCommand::Convex { a, b, p, n, noise, seed, out } => {
            let data = gen_convex_samples(&ConvexRegSpec { a: *a, b: *b, p: *p, n: *n, noise: *noise, seed: *seed })?;
            io::write_text(out, &io::scalar_csv(&data))?;
        }
    }
    Ok(())
}

fn save_cv(out: &Path, cv: &CvResult) -> Result<()> {
    ensure_dir(out)?;
    write_json(&out.join("cv.json"), cv)
}

pub fn cv(a: &CvArgs) -> Result<()> {
    let opts = fit_options(&a.solver)?;
    let custom = read_grid(a.grid_file.as_deref())?;
    let with_seed = |g: GridSpec| match a.seed {
        Some(seed) => GridSpec { seed, ..g },
        None => g,
    };
    let report_selection = |cv: &CvResult| {
        let c = cv.selected_cell();
        eprintln!(
            "cv: selected sigma {} rho {:e} lambda1 {:e} lambda2 {:e} (loss {:.4e})",
            c.scale, c.rho, c.lambda1, c.lambda2, cv.scores[cv.selected].mean_loss
        );
    };
    match a.task {
        TaskArg::Psd => {
            let data = io::read_psd_csv(&a.data)?;
            let grid = with_seed(custom.unwrap_or_else(GridSpec::psd_default));
            let (cv, fitted) = grid_search(&PsdEstimator::new(a.kernel.into(), opts), &data, &grid)?;
            report_selection(&cv);
            save_cv(&a.out, &cv)?;
            fitted.model.save(a.out.join("model.json"))?;
            finish_report(&a.out, fitted.report.as_ref())
        }
        TaskArg::Convex => {
            let data = io::read_scalar_csv(&a.data)?;
            let grid = with_seed(custom.unwrap_or_else(|| GridSpec::convex_default(a.rho.clone())));
            let nystrom = a.nystrom_rank.map(|rank| NystromPolicy { threshold: rank, rank, seed: grid.seed });
            let est = ConvexEstimator { representation: Representation::Approximate, opts, nystrom };
            let (cv, fitted) = grid_search(&est, &data, &grid)?;
            report_selection(&cv);
            save_cv(&a.out, &cv)?;
            fitted.model.save(a.out.join("model.json"))?;
            finish_report(&a.out, fitted.report.as_ref())
        }
        TaskArg::Krr => {
            let data = io::read_scalar_csv(&a.data)?;
            let grid = with_seed(custom.unwrap_or_else(|| GridSpec::krr_default(a.rho.clone())));
            let (cv, fitted) = grid_search(&KrrEstimator { family: a.kernel.into() }, &data, &grid)?;
            report_selection(&cv);
            save_cv(&a.out, &cv)?;
            fitted.model.save(a.out.join("model.json"))?;
            Ok(())
        }
    }
}

fn finish_report(out: &Path, report: Option<&sos_core::SolveReport>) -> Result<()> {
    let Some(report) = report else { return Ok(()) };
    write_json(&out.join("report.json"), report)?;
    if !report.converged {
        return Err(CliError::NotConverged(format!("refit stopped after {} iterations", report.iterations)));
    }
    Ok(())
}

pub fn benchmark(a: &BenchmarkArgs) -> Result<()> {
    let mut cfg: BenchmarkConfig = match &a.config {
        Some(path) => io::read_json(path)?,
        None => BenchmarkConfig::default(),
    };
    if let Some(v) = &a.dims {
        cfg.dims = v.clone();
    }
    if let Some(v) = &a.sizes {
        cfg.sizes = v.clone();
    }
    if let Some(v) = &a.noises {
        cfg.noises = v.clone();
    }
    if let Some(v) = a.seeds {
        cfg.seeds = v;
    }
    if let Some(v) = a.test_size {
        cfg.test_size = v;
    }
    if let Some(v) = a.nystrom_rank {
        cfg.nystrom_rank = v;
        cfg.nystrom_threshold = v;
    }
    if a.no_certify {
        cfg.check_convexity = false;
    }
    cfg.validate()?;
    ensure_dir(&a.out)?;
    write_json(&a.out.join("config.json"), &cfg)?;

    let mut runs = csv::Writer::from_path(a.out.join("runs.csv"))?;
    let mut write_error = None;
    let rows = experiments::run_benchmark(&cfg, |r: &BenchmarkRow| {
        eprintln!("p={} noise={} n={} seed={} {}: mse {:.5}", r.dim, r.noise, r.n, r.seed, r.method.name(), r.test_mse);
        if let Err(e) = runs.serialize(r) {
            write_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_error {
        return Err(e.into());
    }
    runs.flush().map_err(|e| CliError::Io(e.to_string()))?;

    let cells = experiments::summarize(&rows);
    let mut summary = csv::Writer::from_path(a.out.join("summary.csv"))?;
    summary.write_record(["dim", "noise", "n", "runs", "method", "mean_mse", "std_mse"])?;
    for c in &cells {
        for m in Method::ALL {
            let i = m as usize;
            summary.write_record([
                c.dim.to_string(),
                c.noise.to_string(),
                c.n.to_string(),
                c.runs.to_string(),
                m.name().to_string(),
                c.mean[i].to_string(),
                c.std[i].to_string(),
            ])?;
        }
    }
    summary.flush().map_err(|e| CliError::Io(e.to_string()))?;
    io::write_text(a.out.join("plot_benchmark.py"), plots::BENCHMARK)?;
    for c in &cells {
        eprintln!(
            "p={} noise={} n={}: sos {:.4} krr {:.4} pwl {:.4}",
            c.dim,
            c.noise,
            c.n,
            c.mean_of(Method::Sos),
            c.mean_of(Method::Krr),
            c.mean_of(Method::Pwl)
        );
    }
    Ok(())
}

pub fn bures(a: &BuresArgs) -> Result<()> {
    let spec = bures_spec(a.endpoints, a.n);
    let grid = read_grid(a.grid_file.as_deref())?.unwrap_or_else(GridSpec::psd_default);
    let run = experiments::bures_cv(&spec, a.kernel.into(), &grid, FitOptions::default())?;
    ensure_dir(&a.out)?;
    io::write_text(a.out.join("data.csv"), &io::psd_csv(&run.data))?;
    run.model.save(a.out.join("model.json"))?;
    write_json(&a.out.join("cv.json"), &run.cv)?;
    let curve = experiments::bures_curve(&run.model, &spec, a.curve_points)?;
    let mut w = csv::Writer::from_path(a.out.join("curve.csv"))?;
    let d = spec.sigma0.nrows();
    let mut header = vec!["t".to_string(), "kind".to_string()];
    header.extend((0..d * d).map(|k| format!("m{}{}", k / d + 1, k % d + 1)));
    header.push("min_eig".into());
    w.write_record(&header)?;
    for c in &curve {
        let mut fitted = vec![c.t.to_string(), "fitted".into()];
        fitted.extend(c.fitted.iter().map(|v| v.to_string()));
        fitted.push(c.fitted_min_eig.to_string());
        w.write_record(&fitted)?;
        let mut truth = vec![c.t.to_string(), "truth".into()];
        truth.extend(c.truth.iter().map(|v| v.to_string()));
        truth.push(String::new());
        w.write_record(&truth)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    io::write_text(a.out.join("plot_bures.py"), plots::BURES)?;
    let c = run.cv.selected_cell();
    eprintln!(
        "bures: sigma {} lambda1 {:e} lambda2 {:e}; max training error {:.3e} ({:.2e} of max target norm), {:.1}s",
        c.scale,
        c.lambda1,
        c.lambda2,
        run.max_train_error,
        run.relative_error(),
        run.seconds
    );
    match &run.report {
        Some(r) if !r.converged => Err(CliError::NotConverged(format!("refit stopped after {} iterations", r.iterations))),
        _ => Ok(()),
    }
}
