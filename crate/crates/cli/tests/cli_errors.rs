//! Exit codes, missing artifacts and cleanup on failure, through the binary.

use std::path::Path;
use std::process::Command;

fn icurisk(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_icurisk")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn small_cohort(dir: &Path) {
    let (code, err) = icurisk(&["synth", "--n", "300", "--out", dir.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
}

#[test]
fn missing_upstream_artifact_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    small_cohort(dir.path());
    let config = dir.path().join("config.json");
    let (code, err) = icurisk(&["train", "--config", config.to_str().unwrap()]);
    assert_eq!(code, 3);
    assert!(err.contains("stage `train`") && err.contains("missing artifact"), "{err}");
    // Nothing from the failed invocation is left behind.
    assert!(!dir.path().join("out/resolved_config.json").exists());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    small_cohort(dir.path());
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"cohort": "cohort.csv", "no_such_key": 1}"#).unwrap();
    let (code, err) = icurisk(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
    std::fs::write(&bad, r#"{"cohort": "missing.csv"}"#).unwrap();
    assert_eq!(icurisk(&["ingest", "--config", bad.to_str().unwrap()]).0, 2);
    assert_eq!(icurisk(&[]).0, 2);
}

#[test]
fn malformed_cohort_exits_3_with_location() {
    let dir = tempfile::tempdir().unwrap();
    small_cohort(dir.path());
    let cohort = dir.path().join("cohort.csv");
    let text = std::fs::read_to_string(&cohort).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[5].split(',').map(String::from).collect();
    cells[2] = "abc".into();
    lines[5] = cells.join(",");
    std::fs::write(&cohort, lines.join("\n") + "\n").unwrap();
    let (code, err) = icurisk(&["ingest", "--config", dir.path().join("config.json").to_str().unwrap()]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("stage `ingest`"), "{err}");
}

#[test]
fn version_reports_model_format() {
    let out = Command::new(env!("CARGO_BIN_EXE_icurisk")).arg("--version").output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("icurisk-model v1"));
}
