use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn sos(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sos")).args(args).current_dir(dir).env_remove("SOS_SIGMA").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn gen_is_deterministic() {
    let dir = TempDir::new().unwrap();
    for name in ["a.csv", "b.csv"] {
        let out = sos(&["gen", "convex", "--n", "15", "--p", "2", "--seed", "4", "--out", name], dir.path());
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.csv")).unwrap());
    assert!(String::from_utf8(a).unwrap().starts_with("x1,x2,y\n"));

    for name in ["c.csv", "d.csv"] {
        assert_eq!(code(&sos(&["gen", "bures", "--n", "12", "--out", name], dir.path())), 0);
    }
    assert_eq!(fs::read(dir.path().join("c.csv")).unwrap(), fs::read(dir.path().join("d.csv")).unwrap());
}

#[test]
fn fit_psd_then_predict_round_trips() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(code(&sos(&["gen", "bures", "--n", "12", "--out", "bures.csv"], d)), 0);
    let out = sos(
        &["fit-psd", "--data", "bures.csv", "--kernel", "exponential", "--sigma", "1", "--lambda1", "1e-8", "--lambda2", "1e-8", "--out", "fit"],
        d,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("fit/report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], true);

    fs::write(d.join("q.csv"), "x1\n0.0\n0.25\n1.0\n").unwrap();
    let out = sos(&["predict", "--model", "fit/model.json", "--queries", "q.csv", "--out", "pred.csv"], d);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let pred = fs::read_to_string(d.join("pred.csv")).unwrap();
    let lines: Vec<&str> = pred.lines().collect();
    assert_eq!(lines[0], "x1,m11,m12,m21,m22");
    assert_eq!(lines.len(), 4);
    // the first query is a training point: prediction close to the target
    let first: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
    let target: Vec<f64> = fs::read_to_string(d.join("bures.csv")).unwrap().lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    for k in 1..5 {
        assert!((first[k] - target[k]).abs() < 5e-2, "entry {k}: {} vs {}", first[k], target[k]);
    }
}

#[test]
fn fit_convex_writes_certificate() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(code(&sos(&["gen", "convex", "--n", "10", "--noise", "0.1", "--seed", "1", "--out", "train.csv"], d)), 0);
    let out = sos(
        &[
            "fit-convex", "--data", "train.csv", "--sigma", "1", "--rho", "1e-3", "--lambda2", "1e-3", "--domain-b", "3.141592653589793", "--out", "fit",
        ],
        d,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let cert: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("fit/certificate.json")).unwrap()).unwrap();
    assert!(cert["eta"].as_f64().unwrap() > 0.0);

    let out = sos(&["certify", "--model", "fit/model.json", "--domain-b", "3.141592653589793", "--scan-probes", "500", "--out", "cert.json"], d);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let cert: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("cert.json")).unwrap()).unwrap();
    let eta = cert["certificate"]["eta"].as_f64().unwrap();
    assert!(cert["min_hessian_eig"].as_f64().unwrap() >= -eta);

    // a box much smaller than the sample spacing has fill distance above its radius
    let out = sos(&["certify", "--model", "fit/model.json", "--domain-b", "0.001", "--out", "small.json"], d);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(code(&sos(&["gen", "convex", "--n", "5", "--out", "train.csv"], d)), 0);
    // missing --sigma
    let out = sos(&["fit-convex", "--data", "train.csv", "--rho", "1e-3", "--lambda2", "1e-3", "--out", "fit"], d);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--sigma"));
    // exponential kernel rejected with a reason
    let out = sos(
        &["fit-convex", "--data", "train.csv", "--kernel", "exponential", "--sigma", "1", "--rho", "1e-3", "--lambda2", "1e-3", "--out", "fit"],
        d,
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("second derivatives"), "{}", stderr(&out));
    // empty dataset
    fs::write(d.join("empty.csv"), "x1,m11\n").unwrap();
    let out = sos(&["fit-psd", "--data", "empty.csv", "--sigma", "1", "--lambda2", "1e-3", "--out", "fit"], d);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("empty"), "{}", stderr(&out));
    // asymmetric target names its row
    fs::write(d.join("asym.csv"), "x1,m11,m12,m21,m22\n0,1,0,0,1\n1,1,0.5,0.2,1\n").unwrap();
    let out = sos(&["fit-psd", "--data", "asym.csv", "--sigma", "1", "--lambda2", "1e-3", "--out", "fit"], d);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("row 2"), "{}", stderr(&out));
}

#[test]
fn environment_supplies_flags() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(code(&sos(&["gen", "convex", "--n", "8", "--out", "train.csv"], d)), 0);
    let out = Command::new(env!("CARGO_BIN_EXE_sos"))
        .args(["fit-convex", "--data", "train.csv", "--rho", "1e-3", "--lambda2", "1e-3", "--out", "fit"])
        .env("SOS_SIGMA", "1.0")
        .current_dir(d)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(d.join("fit/model.json").exists());
}

#[test]
fn non_convergence_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(code(&sos(&["gen", "bures", "--n", "8", "--out", "bures.csv"], d)), 0);
    let out = sos(&["fit-psd", "--data", "bures.csv", "--sigma", "0.3", "--lambda2", "1e-6", "--max-iters", "2", "--out", "fit"], d);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(d.join("fit/report.json").exists());
}

#[test]
fn cv_and_small_benchmark() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(code(&sos(&["gen", "convex", "--n", "12", "--seed", "2", "--out", "train.csv"], d)), 0);
    let out = sos(&["cv", "--task", "krr", "--data", "train.csv", "--rho", "1e-2,1e-4", "--out", "cv"], d);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let cv: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("cv/cv.json")).unwrap()).unwrap();
    assert_eq!(cv["scores"].as_array().unwrap().len(), 6);
    fs::write(d.join("q.csv"), "x1\n0.5\n").unwrap();
    assert_eq!(code(&sos(&["predict", "--model", "cv/model.json", "--queries", "q.csv", "--out", "p.csv"], d)), 0);

    let out = sos(
        &["benchmark", "--dims", "1", "--sizes", "10,20", "--noises", "0.1", "--seeds", "3", "--test-size", "2000", "--no-certify", "--out", "bench"],
        d,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = fs::read_to_string(d.join("bench/summary.csv")).unwrap();
    let mut sos_mean = 0.0;
    let mut krr_mean = 0.0;
    for line in summary.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let v: f64 = f[5].parse().unwrap();
        match f[4] {
            "sos" => sos_mean += v,
            "krr" => krr_mean += v,
            _ => {}
        }
    }
    assert!(sos_mean <= krr_mean, "sos {sos_mean} vs krr {krr_mean}");
    let runs = fs::read_to_string(d.join("bench/runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 2 * 3 * 3);
    assert!(d.join("bench/plot_benchmark.py").exists());
}
