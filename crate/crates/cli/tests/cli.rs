use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use okf_core::data::read_dataset;
use serde_json::Value;
use tempfile::TempDir;

fn okf(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_okf"))
        .args(args)
        .current_dir(cwd)
        .env("OKF_OUTPUT_ROOT", cwd.join("root"))
        .output()
        .expect("spawn okf")
}

fn ok(cwd: &Path, args: &[&str]) -> Output {
    let out = okf(cwd, args);
    assert!(
        out.status.success(),
        "okf {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(cwd: &Path, args: &[&str]) -> i32 {
    okf(cwd, args).status.code().expect("exit code")
}

fn simulate(cwd: &Path, dir: &str, n_train: usize, n_test: usize) -> PathBuf {
    ok(
        cwd,
        &[
            "simulate",
            "--preset",
            "toy",
            "--seed",
            "3",
            "--n-train",
            &n_train.to_string(),
            "--n-test",
            &n_test.to_string(),
            "--out-dir",
            dir,
        ],
    );
    cwd.join(dir)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_is_reproducible_and_honors_sizes() {
    let tmp = TempDir::new().unwrap();
    let a = simulate(tmp.path(), "a", 12, 7);
    let b = simulate(tmp.path(), "b", 12, 7);
    for f in ["train.okfd", "test.okfd", "metadata.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    assert_eq!(read_dataset(a.join("train.okfd")).unwrap().len(), 12);
    assert_eq!(read_dataset(a.join("test.okfd")).unwrap().len(), 7);
    assert!(a.join("simulate.resolved.toml").exists());
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let a = simulate(tmp.path(), "a", 9, 4);
    let resolved = a.join("simulate.resolved.toml");
    ok(
        tmp.path(),
        &["simulate", "--config", resolved.to_str().unwrap(), "--out-dir", "b"],
    );
    let b = tmp.path().join("b");
    for f in ["train.okfd", "test.okfd"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn flags_override_the_config_file() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("sim.toml");
    fs::write(&cfg, "preset = \"toy\"\nn_train = 5\nn_test = 5\nout_dir = \"from-file\"\n").unwrap();
    ok(tmp.path(), &["simulate", "--config", "sim.toml", "--n-train", "8"]);
    let ds = read_dataset(tmp.path().join("from-file/train.okfd")).unwrap();
    assert_eq!(ds.len(), 8);
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["simulate", "--n-train", "3", "--n-test", "2"]);
    assert!(tmp.path().join("root/simulate-toy/train.okfd").exists());
}

#[test]
fn usage_errors_exit_with_the_usage_code() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(tmp.path(), &["simulate", "--preset", "nope"]), 2);
    assert_eq!(code(tmp.path(), &["simulate", "--n-train", "many"]), 2);
    assert_eq!(code(tmp.path(), &["frobnicate"]), 2);
    assert_eq!(code(tmp.path(), &["tune"]), 2);
    fs::write(tmp.path().join("bad.toml"), "presett = \"toy\"\n").unwrap();
    assert_eq!(code(tmp.path(), &["simulate", "--config", "bad.toml"]), 2);
}

#[test]
fn data_errors_exit_with_the_data_code() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(tmp.path(), &["tune", "--dataset", "missing.okfd"]), 3);
    assert_eq!(code(tmp.path(), &["simulate", "--config", "missing.toml"]), 3);
    fs::write(tmp.path().join("junk.okfd"), b"not a dataset").unwrap();
    assert_eq!(code(tmp.path(), &["tune", "--dataset", "junk.okfd"]), 3);
}

#[test]
fn unwritable_output_fails_cleanly() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("blocker"), b"").unwrap();
    let out = okf(
        tmp.path(),
        &["simulate", "--n-train", "3", "--n-test", "2", "--out-dir", "blocker/sub"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn params_for_another_model_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let toy = simulate(tmp.path(), "toy", 20, 5);
    ok(tmp.path(), &["tune", "--dataset", "toy/train.okfd", "--out-dir", "tune"]);
    ok(
        tmp.path(),
        &["simulate", "--preset", "linear", "--n-train", "5", "--n-test", "5", "--out-dir", "lin"],
    );
    let c = code(
        tmp.path(),
        &["evaluate", "--dataset", "lin/test.okfd", "--params", "tune/params.json"],
    );
    assert_eq!(c, 3);
    // Same dimensions, different variant.
    let c = code(
        tmp.path(),
        &[
            "evaluate",
            "--dataset",
            toy.join("test.okfd").to_str().unwrap(),
            "--variant",
            "kfp",
            "--params",
            "tune/params.json",
        ],
    );
    assert_eq!(c, 3);
}

#[test]
fn tune_train_evaluate_pipeline() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path();
    simulate(t, "sim", 200, 150);
    ok(t, &["tune", "--dataset", "sim/train.okfd", "--out-dir", "tune"]);
    ok(
        t,
        &["train", "--dataset", "sim/train.okfd", "--epochs", "2", "--out-dir", "train"],
    );
    let params = json(&t.join("train/params.json"));
    assert_eq!(params["method"], "optimized");
    let trace = json(&t.join("train/trace.json"));
    assert_eq!(trace["losses"].as_array().unwrap().len(), 40);

    let eval = [
        "evaluate",
        "--dataset",
        "sim/test.okfd",
        "--params",
        "tune/params.json",
        "train/params.json",
        "--out-dir",
    ];
    let first = ok(t, &[&eval[..], &["e1"]].concat());
    let second = ok(t, &[&eval[..], &["e2"]].concat());
    assert_eq!(first.stdout, second.stdout);
    for f in ["report.json", "per_trajectory.csv", "comparisons.json"] {
        assert_eq!(fs::read(t.join("e1").join(f)).unwrap(), fs::read(t.join("e2").join(f)).unwrap());
    }

    let report = json(&t.join("e1/report.json"));
    let mse = |k: usize| report[k]["report"]["aggregate_mse"].as_f64().unwrap();
    assert!(mse(1) < mse(0), "optimized {} vs estimated {}", mse(1), mse(0));
    let rows = fs::read_to_string(t.join("e1/per_trajectory.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 150);

    let md = ok(t, &["report", "--input", "e1"]);
    assert!(String::from_utf8_lossy(&md.stdout).contains("| train/params.json | optimized |"));
    assert!(t.join("e1/report.md").exists());
}

#[test]
fn small_ablation_grid_and_report() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path();
    ok(
        t,
        &[
            "--threads",
            "2",
            "experiment",
            "--grid",
            "ablation",
            "--benchmarks",
            "toy",
            "--n-train",
            "30",
            "--n-test",
            "20",
            "--out-dir",
            "abl",
        ],
    );
    let rows = json(&t.join("abl/ablation.json"));
    assert_eq!(rows.as_array().unwrap().len(), 1);
    assert!(fs::read_to_string(t.join("abl/summary.txt")).unwrap().contains("1 of 1"));
    assert!(t.join("abl/experiment.resolved.toml").exists());
    let md = ok(t, &["report", "--input", "abl"]);
    assert!(String::from_utf8_lossy(&md.stdout).contains("Diagonal ablation"));
}

#[test]
fn report_without_results_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    fs::create_dir(tmp.path().join("empty")).unwrap();
    assert_eq!(code(tmp.path(), &["report", "--input", "empty"]), 3);
}
