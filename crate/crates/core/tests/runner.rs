use std::fs;
use std::path::Path;

use apw::runner::report;
use apw::runner::run::{self, read_epochs_csv, EPOCHS_FILE, SUMMARY_FILE, TRACE_FILE};
use apw::runner::{run_experiment, verify_dir, ExperimentConfig};
use apw::theory::{CheckStatus, TheoryTrace};
use apw::Error;
use serde_json::json;

fn config(variant: &str, extra: serde_json::Value) -> ExperimentConfig {
    let mut doc = json!({
        "dataset": {"kind": "gaussian2", "n": 120, "split": [0.7, 0.3]},
        "optimizer": {"kind": "lbfgs", "max_iter": 25},
        "scheduler": {"e": {"mode": "fixed", "value": 0.3}, "q": {"mode": "fixed", "value": 8.0}},
        "variant": variant,
        "seeds": [1, 2],
    });
    for (k, v) in extra.as_object().unwrap() {
        doc[k] = v.clone();
    }
    ExperimentConfig::from_value(doc).unwrap()
}

fn seed_trace(dir: &Path) -> TheoryTrace {
    serde_json::from_str(&fs::read_to_string(dir.join("seed-1").join(TRACE_FILE)).unwrap()).unwrap()
}

#[test]
fn experiment_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&config("apw-e", json!({})), dir.path()).unwrap();
    assert!(summary.all_ok());
    assert_eq!(summary.eprop_test.unwrap().n, 2);
    for s in &summary.seeds {
        assert!(s.bounds_passed.unwrap());
        for f in &s.files {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }
    let cols = read_epochs_csv(&dir.path().join("seed-1").join(EPOCHS_FILE)).unwrap();
    let names: Vec<&str> = cols.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(&names[..14], &run::EPOCH_COLUMNS[..14]);
    assert_eq!(cols[0].1.len(), summary.seeds[0].epochs.unwrap());
    let reports = verify_dir(dir.path()).unwrap();
    assert_eq!(reports.len(), 2);
    assert!(reports.iter().all(|(_, r)| r.passed()));
}

#[test]
fn tampered_normaliser_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&config("apw-e", json!({})), dir.path()).unwrap();
    let path = dir.path().join("seed-1").join(TRACE_FILE);
    let mut trace = seed_trace(dir.path());
    trace.z_history[3] *= 1.01;
    fs::write(&path, serde_json::to_string(&trace).unwrap()).unwrap();
    let reports = verify_dir(&dir.path().join("seed-1")).unwrap();
    let report = &reports[0].1;
    assert!(!report.passed());
    assert!(report.count("chain_identity", CheckStatus::Fail) > 0);
}

#[test]
fn iteration_weighting_marks_chain_not_applicable() {
    let dir = tempfile::tempdir().unwrap();
    let extra = json!({"optimizer": {"kind": "sgd", "epochs": 6, "batch_size": 16}});
    run_experiment(&config("apw-i", extra), dir.path()).unwrap();
    let (_, report) = &verify_dir(&dir.path().join("seed-1")).unwrap()[0];
    assert_eq!(report.count("chain_identity", CheckStatus::NotApplicable), 6);
    assert_eq!(report.count("chain_identity", CheckStatus::Pass), 0);
    assert!(report.count("hard_mass_bound", CheckStatus::Pass) > 0);
}

#[test]
fn vanilla_keeps_uniform_weights() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&config("vanilla", json!({})), dir.path()).unwrap();
    let cols = read_epochs_csv(&dir.path().join("seed-1").join(EPOCHS_FILE)).unwrap();
    let u = 1.0 / 84.0;
    for name in ["w_min", "w_max"] {
        let col = run::column(&cols, name, Path::new("epochs.csv")).unwrap();
        assert!(col.iter().all(|v| (v.unwrap() - u).abs() < 1e-15));
    }
}

#[test]
fn pd_threshold_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let extra = json!({"scheduler": {"e": {"mode": "pd_estimated"}, "q": {"mode": "fixed", "value": 8.0}}});
    let summary = run_experiment(&config("apw-e", extra), dir.path()).unwrap();
    for s in &summary.seeds {
        let t = s.pd_t_star.unwrap();
        assert!(t >= 2);
        assert!(s.e.unwrap() > 0.0);
    }
}

#[test]
fn failing_seed_does_not_stop_the_others() {
    let dir = tempfile::tempdir().unwrap();
    let extra = json!({"scheduler": {"e": {"mode": "fixed", "value": 0.3}, "q": {"mode": "train_fraction", "fraction": 0.01}}});
    let summary = run_experiment(&config("apw-e", extra), dir.path()).unwrap();
    assert_eq!(summary.failed_seeds, vec![1, 2]);
    assert!(summary.seeds.iter().all(|s| s.error.as_ref().unwrap().contains("below 2")));
    assert!(dir.path().join(SUMMARY_FILE).exists());
}

#[test]
fn report_is_deterministic() {
    let runs = tempfile::tempdir().unwrap();
    let (a, b) = (runs.path().join("apw"), runs.path().join("vanilla"));
    run_experiment(&config("apw-e", json!({})), &a).unwrap();
    run_experiment(&config("vanilla", json!({})), &b).unwrap();
    let out1 = runs.path().join("r1");
    let out2 = runs.path().join("r2");
    let files = report::report(&[a.clone(), b.clone()], &out1).unwrap();
    report::report(&[a, b], &out2).unwrap();
    let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert!(names.contains(&"hyperplane-apw.svg".to_string()));
    assert!(names.contains(&"eprop_test.svg".to_string()));
    for f in &names {
        assert_eq!(fs::read(out1.join(f)).unwrap(), fs::read(out2.join(f)).unwrap(), "{f}");
    }
    let table = fs::read_to_string(out1.join("summary.txt")).unwrap();
    assert!(table.lines().next().unwrap().starts_with("run"));
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn report_rejects_missing_columns() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&config("apw-e", json!({"seeds": [1]})), dir.path()).unwrap();
    let csv = dir.path().join("seed-1").join(EPOCHS_FILE);
    let text = fs::read_to_string(&csv).unwrap().replace("eprop_train", "something_else");
    fs::write(&csv, text).unwrap();
    let err = report::report(&[dir.path().to_path_buf()], &dir.path().join("out")).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }));
    assert!(err.to_string().contains("eprop_train"));
}

#[test]
fn config_validation() {
    let base = json!({"variant": "apw-e", "seeds": []});
    assert!(matches!(ExperimentConfig::from_value(base), Err(Error::Config(_))));
    let unknown = json!({"variant": "apw-e", "seeds": [1], "colour": 1});
    assert!(ExperimentConfig::from_value(unknown).is_err());
    let bad_variant = json!({"variant": "apw-x", "seeds": [1]});
    assert!(ExperimentConfig::from_value(bad_variant).is_err());
    let ok = ExperimentConfig::from_value(json!({"variant": "s-apw-ei", "seeds": [4]})).unwrap();
    assert_eq!(ok.variant.to_string(), "s-apw-ei");
}

#[test]
fn mlp_on_blobs_runs_every_variant() {
    for variant in ["apw-ei", "s-apw-i", "m-apw-e", "mixup"] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_value(json!({
            "dataset": {"kind": "blobs", "n": 90, "classes": 3, "split": [0.8, 0.2]},
            "model": {"kind": "mlp", "hidden": [8]},
            "optimizer": {"kind": "sgd", "epochs": 5, "batch_size": 16},
            "variant": variant,
            "seeds": [3],
        }))
        .unwrap();
        let summary = run_experiment(&cfg, dir.path()).unwrap();
        assert!(summary.all_ok(), "{variant}: {:?}", summary.seeds[0].error);
        assert!(verify_dir(dir.path()).unwrap()[0].1.passed(), "{variant}");
    }
}
