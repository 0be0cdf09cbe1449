use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "dataset": {"kind": "gaussian2", "n": 120, "split": [0.7, 0.3]},
  "optimizer": {"kind": "lbfgs", "max_iter": 20},
  "scheduler": {"e": {"mode": "fixed", "value": 0.3}, "q": {"mode": "fixed", "value": 8.0}},
  "variant": "apw-e",
  "seeds": [1]
}"#;

fn apw(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apw"))
        .args(args)
        .env("APW_OUTPUT_ROOT", root)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("small.json");
    fs::write(&path, SMALL).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn train_then_verify_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = apw(&["train", "-c", &cfg, "--output-dir", "run"], tmp.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run = tmp.path().join("run");
    assert!(run.join("seed-1").join("epochs.csv").exists());
    let v = apw(&["verify", run.to_str().unwrap()], tmp.path());
    assert_eq!(code(&v), 0, "{}", stdout(&v));
    assert!(stdout(&v).contains("chain_identity"));
}

#[test]
fn tampered_trace_exits_with_verification_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    assert_eq!(code(&apw(&["train", "-c", &cfg, "--output-dir", "run"], tmp.path())), 0);
    let trace_path = tmp.path().join("run/seed-1/trace.json");
    let mut trace: serde_json::Value = serde_json::from_str(&fs::read_to_string(&trace_path).unwrap()).unwrap();
    let z = trace["z_history"][2].as_f64().unwrap();
    trace["z_history"][2] = serde_json::json!(z * 1.05);
    fs::write(&trace_path, trace.to_string()).unwrap();
    let v = apw(&["verify", tmp.path().join("run").to_str().unwrap()], tmp.path());
    assert_eq!(code(&v), 2);
}

#[test]
fn iteration_weighting_reports_chain_not_applicable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = apw(
        &[
            "verify", "-c", &cfg, "--variant", "apw-i", "--set", "optimizer={\"kind\":\"sgd\",\"epochs\":4}", "--output-dir", "run-i",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let line = stdout(&out).lines().find(|l| l.trim_start().starts_with("chain_identity")).unwrap().to_string();
    assert!(line.contains("n/a    4"), "{line}");
}

#[test]
fn configuration_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    assert_eq!(code(&apw(&["train", "-c", &cfg, "--variant", "apw-x"], tmp.path())), 1);
    assert_eq!(code(&apw(&["train", "-c", "/nonexistent/config.json"], tmp.path())), 1);
    assert_eq!(code(&apw(&["train", "-c", &cfg, "--seeds", "1,x"], tmp.path())), 1);
    assert_eq!(code(&apw(&["train", "-c", &cfg, "--set", "colour=1"], tmp.path())), 1);
    assert_eq!(code(&apw(&["train", "-c", &cfg, "--q", "1.5"], tmp.path())), 1);
    assert_eq!(code(&apw(&["frobnicate"], tmp.path())), 1);
    assert_eq!(code(&apw(&["--help"], tmp.path())), 0);
}

#[test]
fn failing_seeds_exit_with_runtime_abort() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = apw(
        &["train", "-c", &cfg, "--set", "scheduler.q={\"mode\":\"train_fraction\",\"fraction\":0.01}", "--output-dir", "bad"],
        tmp.path(),
    );
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("below 2"));
    assert!(tmp.path().join("bad").join("summary.json").exists());
}

#[test]
fn flags_override_config_and_runs_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    for dir in ["a", "b"] {
        let out = apw(&["train", "-c", &cfg, "--seeds", "2", "--output-dir", dir], tmp.path());
        assert_eq!(code(&out), 0);
    }
    let read = |d: &str| fs::read(tmp.path().join(d).join("seed-2").join("epochs.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert!(!tmp.path().join("a").join("seed-1").exists());
}

#[test]
fn gen_data_writes_datasets_and_metadata() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = apw(&["gen-data", "-c", &cfg, "--seeds", "3,4", "--out", "data"], tmp.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for seed in [3, 4] {
        let dir = tmp.path().join("data").join(format!("seed-{seed}"));
        let train = fs::read_to_string(dir.join("train.csv")).unwrap();
        assert_eq!(train.lines().count(), 85);
        assert!(dir.join("test.csv").exists());
    }
}

#[test]
fn pd_and_report_read_run_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    assert_eq!(code(&apw(&["train", "-c", &cfg, "--output-dir", "run"], tmp.path())), 0);
    let pd = apw(&["pd", tmp.path().join("run/seed-1").to_str().unwrap()], tmp.path());
    assert_eq!(code(&pd), 0, "{}", String::from_utf8_lossy(&pd.stderr));
    let json: serde_json::Value = serde_json::from_str(&stdout(&pd)).unwrap();
    assert!(json["t_star"].as_u64().unwrap() >= 2);

    let rep = apw(&["report", tmp.path().join("run").to_str().unwrap(), "--out", "figs"], tmp.path());
    assert_eq!(code(&rep), 0, "{}", String::from_utf8_lossy(&rep.stderr));
    assert!(tmp.path().join("figs/summary.txt").exists());
    assert!(tmp.path().join("figs/eprop_train.svg").exists());

    let missing = apw(&["pd", tmp.path().join("nowhere.bin").to_str().unwrap()], tmp.path());
    assert_eq!(code(&missing), 1);
}
