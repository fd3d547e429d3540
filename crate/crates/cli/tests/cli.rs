use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mlfp::pipeline::TrialStats;
use mlfp::sampling::Dataset;
use mlfp::sqp::trace_from_csv;
use tempfile::TempDir;

fn mlfp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlfp")).args(args).output().unwrap()
}

fn config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, format!("out = {:?}\n{text}", dir.join("out"))).unwrap();
    path.to_str().unwrap().to_string()
}

fn key(text: &str, k: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{k}=")))
        .unwrap_or_else(|| panic!("{k} missing from:\n{text}"))
        .to_string()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn sample_is_deterministic_and_complete() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "problem = \"sphere10\"\n[sampling]\nbudget = 100");
    let report = stdout(&mlfp(&["sample", "--config", &cfg]));
    assert_eq!(key(&report, "rows"), "100");
    assert_eq!(key(&report, "evaluations"), "100");
    assert_eq!(key(&report, "feasible_fraction"), "1.000000");
    let first = fs::read(dir.path().join("out/dataset.csv")).unwrap();
    stdout(&mlfp(&["sample", "--config", &cfg]));
    assert_eq!(first, fs::read(dir.path().join("out/dataset.csv")).unwrap());
    let back = Dataset::<f64>::from_csv(first.as_slice()).unwrap();
    assert_eq!(back.len(), 100);
}

#[test]
fn constrained_camel_sampling_is_mostly_feasible() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "problem = \"camel_constrained\"\n[sampling]\nbudget = 200");
    let report = stdout(&mlfp(&["sample", "--config", &cfg, "--seed", "3"]));
    let frac: f64 = key(&report, "feasible_fraction").parse().unwrap();
    assert!(frac >= 0.8, "{frac}");
    assert!(dir.path().join("out/svm.txt").exists());
}

#[test]
fn bad_configs_and_usage_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "problem = \"sphere10\"\n[sampling]\nbudgett = 100");
    let o = mlfp(&["sample", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("budgett"));

    let cfg = config(dir.path(), "problem = \"nope\"");
    assert_eq!(mlfp(&["sample", "--config", &cfg]).status.code(), Some(1));
    assert_eq!(mlfp(&[]).status.code(), Some(1));
    assert_eq!(mlfp(&["sample"]).status.code(), Some(1));
    assert_eq!(mlfp(&["--help"]).status.code(), Some(0));
    assert_eq!(mlfp(&["sample", "--config", "/does/not/exist.toml"]).status.code(), Some(1));
}

fn linear_dataset(rows: usize) -> String {
    let mut d = Dataset::<f64>::new(2, 1);
    for i in 0..rows {
        let a = (i as f64 * 0.618).fract() * 4.0 - 2.0;
        let b = (i as f64 * 0.414).fract() * 4.0 - 2.0;
        let x = nalgebra::DVector::from_vec(vec![a, b]);
        let y = nalgebra::DVector::from_vec(vec![2.0 * a - b + 1.0]);
        d.push(&x, &y, true, true, mlfp::sampling::Provenance::Initial);
    }
    d.to_csv()
}

#[test]
fn train_reports_test_metrics_on_linear_data() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("lin.csv");
    fs::write(&data, linear_dataset(300)).unwrap();
    let cfg = config(dir.path(), "problem = \"camel\"\n[training]\nhidden_dims = [16]");
    let metrics = stdout(&mlfp(&["train", "--config", &cfg, "--data", data.to_str().unwrap()]));
    assert_eq!(key(&metrics, "test_rows"), "30");
    let r2: f64 = key(&metrics, "test_r2_y1").parse().unwrap();
    assert!(r2 >= 0.999, "{r2}");
    let model = fs::read_to_string(dir.path().join("out/model.txt")).unwrap();
    assert!(mlfp::surrogate::MlpSurrogate::<f64>::from_text(&model).is_ok());
    let log = fs::read(dir.path().join("out/training_log.csv")).unwrap();
    assert!(!mlfp::surrogate::read_training_log::<f64, _>(log.as_slice()).unwrap().is_empty());
}

#[test]
fn corrupt_dataset_reports_the_row() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("bad.csv");
    let text = linear_dataset(20).replacen("\n", "\n1.0,oops,3.0,1,1,initial\n", 2);
    fs::write(&data, text).unwrap();
    let cfg = config(dir.path(), "problem = \"camel\"");
    let o = mlfp(&["train", "--config", &cfg, "--data", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line"), "{err}");
}

#[test]
fn sphere_end_to_end_reaches_the_minimum() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        dir.path(),
        "problem = \"sphere10\"\n[sampling]\nstrategy = \"lhs\"\nbudget = 1000\n[training]\nhidden_dims = [32, 32]\ntest_fraction = 0.0",
    );
    stdout(&mlfp(&["sample", "--config", &cfg]));
    stdout(&mlfp(&["train", "--config", &cfg]));
    let result = stdout(&mlfp(&["optimize", "--config", &cfg]));
    assert!(key(&result, "status").starts_with("converged"));
    let d: f64 = key(&result, "distance").parse().unwrap();
    assert!(d <= 0.1, "{d}");
    assert_eq!(key(&result, "validation_evaluations"), "1");
    let trace = fs::read(dir.path().join("out/trace.csv")).unwrap();
    let rows = trace_from_csv::<f64, _>(trace.as_slice()).unwrap();
    assert_eq!(rows.len().to_string(), key(&result, "iterations"));

    // An iteration cap of one cannot converge from the corner.
    let capped = config(dir.path(), "problem = \"sphere10\"\n[sqp]\nmax_iterations = 1");
    let o = mlfp(&["optimize", "--config", &capped]);
    assert_eq!(o.status.code(), Some(2));

    // The sphere model does not fit a 2-D problem.
    let wrong = config(dir.path(), "problem = \"camel\"");
    let o = mlfp(&["optimize", "--config", &wrong, "--model", dir.path().join("out/model.txt").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ackley_from_lower_corner_converges() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        dir.path(),
        "problem = \"ackley5\"\n[sampling]\nstrategy = \"lhs\"\nbudget = 2000\n[training]\ntest_fraction = 0.0\n[sqp]\nstart = \"lower\"",
    );
    stdout(&mlfp(&["sample", "--config", &cfg]));
    stdout(&mlfp(&["train", "--config", &cfg]));
    let result = stdout(&mlfp(&["optimize", "--config", &cfg]));
    assert!(key(&result, "status").starts_with("converged"));
    assert!(key(&result, "iterations").parse::<usize>().unwrap() <= 200);
}

#[test]
fn single_trial_benchmark_aggregates_equal_the_trial() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        dir.path(),
        "problem = \"camel_constrained\"\nn_trials = 1\nseed = 9\n[sampling]\nbudget = 100\n[training]\nhidden_dims = [16, 16]\nepochs = 200",
    );
    let o = mlfp(&["benchmark", "--config", &cfg, "--jobs", "2"]);
    assert!(matches!(o.status.code(), Some(0 | 2)), "{}", String::from_utf8_lossy(&o.stderr));
    let stats = TrialStats::from_csv(&fs::read_to_string(dir.path().join("out/trials.csv")).unwrap()).unwrap();
    assert_eq!(stats.rows.len(), 1);
    let row = &stats.rows[0];
    assert_eq!((row.seed, row.evaluations), (9, 101));
    let s = stats.objective().unwrap();
    assert_eq!([s.min, s.q1, s.median, s.q3, s.max], [row.f_true; 5]);
}

#[test]
fn benchmark_is_independent_of_job_count() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        dir.path(),
        "problem = \"camel\"\nn_trials = 3\n[sampling]\nbudget = 60\n[training]\nhidden_dims = [8]\nepochs = 100",
    );
    mlfp(&["benchmark", "--config", &cfg, "--jobs", "1"]);
    let one = fs::read_to_string(dir.path().join("out/trials.csv")).unwrap();
    mlfp(&["benchmark", "--config", &cfg, "--jobs", "3"]);
    assert_eq!(one, fs::read_to_string(dir.path().join("out/trials.csv")).unwrap());
    let stats = TrialStats::from_csv(&one).unwrap();
    assert_eq!(stats.rows.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![0, 1, 2]);
}

#[test]
fn validate_checks_a_point() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "problem = \"camel_constrained\"");
    let good = stdout(&mlfp(&["validate", "--config", &cfg, "--x", "0.0898,-0.7126"]));
    assert_eq!(key(&good, "feasible"), "true");
    assert!(key(&good, "distance").parse::<f64>().unwrap() < 1e-6);
    let bad = stdout(&mlfp(&["validate", "--config", &cfg, "--x", "-0.5,0.5"]));
    assert_eq!(key(&bad, "feasible"), "false");
    assert_eq!(mlfp(&["validate", "--config", &cfg, "--x", "1,2,3"]).status.code(), Some(1));
}
