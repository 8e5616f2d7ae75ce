//! Binary-level behavior: exit codes, manifest lifecycle, and rerun
//! determinism, driven through the compiled executable.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfgldp"))
        .args(args)
        .output()
        .expect("binary launched")
}

fn write_config(dir: &Path, body: serde_json::Value) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&body).unwrap()).unwrap();
    path
}

fn systemic_config(out_dir: &Path) -> serde_json::Value {
    serde_json::json!({
        "spec": {
            "family": "systemic_risk",
            "a": 0.5, "q": 0.8, "eps": 1.0, "c": 0.5,
            "sigma": 1.0, "T": 0.5, "x0": 0.0
        },
        "scenario": "validate",
        "Ns": [8, 16],
        "K": 50,
        "reps": 100,
        "seed": 11,
        "out_dir": out_dir
    })
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        files.insert(
            entry.file_name().to_string_lossy().into_owned(),
            std::fs::read(entry.path()).unwrap(),
        );
    }
    files
}

#[test]
fn validate_on_the_default_config_lists_passing_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let result = run(&["validate", "--out", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&result.stderr));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "completed");
    assert_eq!(manifest["riccati_solvable"], true);
    let checks = manifest["assumptions"]["checks"].as_array().unwrap();
    let names: Vec<&str> = checks.iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["A1", "A2", "A3", "A4", "A5"]);
    assert!(checks.iter().all(|c| c["passed"] == true));

    let marker: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("completed.json")).unwrap()).unwrap();
    assert_eq!(marker["status"], "completed");
}

#[test]
fn family_restriction_violations_exit_with_the_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut body = systemic_config(&out);
    body["spec"]["q"] = serde_json::json!(2.0);
    let config = write_config(dir.path(), body);
    let result = run(&["validate", "--config", config.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "failed");
    assert!(manifest["failure"].as_str().unwrap().contains("q^2"));
}

#[test]
fn unreadable_or_malformed_configs_exit_with_the_validation_code() {
    let result = run(&["validate", "--config", "/nonexistent/config.json"]);
    assert_eq!(result.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(&path, "{ not json").unwrap();
    let result = run(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn coop_rejects_the_interbank_family() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), systemic_config(&out));
    let result = run(&["coop", "--config", config.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&result.stderr).contains("general_lq"));
}

#[test]
fn backward_blowup_exits_with_the_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let body = serde_json::json!({
        "spec": {
            "family": "general_lq",
            "A": 0.0, "Abar": 0.0, "B": 1.0, "Bbar": 0.0,
            "Q": -5.0, "Qbar": 0.0, "R": 0.5, "Rbar": 0.0, "Sbar": 0.0,
            "QT": 0.0, "QbarT": 0.0, "sigma": 1.0, "T": 4.0, "x0": 0.0
        },
        "scenario": "solve-mfg",
        "Ns": [8], "K": 200, "reps": 100, "seed": 1,
        "out_dir": out
    });
    let config = write_config(dir.path(), body);
    let result = run(&["solve-mfg", "--config", config.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(3));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "failed");
    assert!(manifest["failure"].as_str().unwrap().contains("blow-up"));
    assert!(!out.join("completed.json").exists());
}

#[test]
fn rerunning_an_identical_config_reproduces_every_byte() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut body = systemic_config(&out);
    body["scenario"] = serde_json::json!("residuals");
    let config = write_config(dir.path(), body);

    let first = run(&["residuals", "--config", config.to_str().unwrap()]);
    assert_eq!(first.status.code(), Some(0));
    let snap_a = snapshot(&out);

    let second = run(&["residuals", "--config", config.to_str().unwrap()]);
    assert_eq!(second.status.code(), Some(0));
    let snap_b = snapshot(&out);

    assert_eq!(snap_a.keys().collect::<Vec<_>>(), vec!["completed.json", "manifest.json", "residuals.csv"]);
    assert_eq!(snap_a, snap_b);
}

#[test]
fn seed_override_changes_estimates_but_not_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut body = systemic_config(&out);
    body["scenario"] = serde_json::json!("residuals");
    let config = write_config(dir.path(), body);

    assert_eq!(run(&["residuals", "--config", config.to_str().unwrap()]).status.code(), Some(0));
    let base = std::fs::read_to_string(out.join("residuals.csv")).unwrap();
    assert_eq!(
        run(&["residuals", "--config", config.to_str().unwrap(), "--seed", "99"]).status.code(),
        Some(0)
    );
    let reseeded = std::fs::read_to_string(out.join("residuals.csv")).unwrap();
    assert_ne!(base, reseeded);
    assert_eq!(base.lines().next(), reseeded.lines().next());
    assert_eq!(base.lines().count(), reseeded.lines().count());

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 99);
}

#[test]
fn monotone_regime_reruns_at_the_long_horizon_and_records_the_drift_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut body = systemic_config(&out);
    body["scenario"] = serde_json::json!("solve-mfg");
    body["monotone_regime"] = serde_json::json!(true);
    let config = write_config(dir.path(), body);
    let result = run(&["solve-mfg", "--config", config.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(0));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["spec"]["T"], 2.0);
    assert_eq!(manifest["monotone_check"]["passed"], true);

    let field = std::fs::read_to_string(out.join("field.csv")).unwrap();
    let last = field.lines().last().unwrap();
    let t_last: f64 = last.split(',').next().unwrap().parse().unwrap();
    assert_eq!(t_last, 2.0);
}

#[test]
fn monotone_regime_rejects_drift_without_dissipation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut body = systemic_config(&out);
    body["spec"]["a"] = serde_json::json!(0.0);
    body["spec"]["q"] = serde_json::json!(0.0);
    body["scenario"] = serde_json::json!("solve-mfg");
    body["monotone_regime"] = serde_json::json!(true);
    let config = write_config(dir.path(), body);
    let result = run(&["solve-mfg", "--config", config.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "failed");
    assert_eq!(manifest["monotone_check"]["passed"], false);
}
