use std::path::Path;
use std::process::{Command, Output};

fn synth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synth")).args(args).env_remove("SYNTH_CORPUS_DIR").output().expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

#[test]
fn learn_writes_report_and_histograms() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = synth(&[
        "learn",
        "--target",
        "bernoulli",
        "--chains",
        "1",
        "--iterations",
        "20",
        "--seed",
        "3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    assert_eq!(summary["task"], "learn");
    for name in ["report.json", "best_program.sx", "traces.csv"] {
        assert!(out_dir.join(name).exists(), "{name} missing");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 3);
    assert_eq!(report["config"]["iterations"], 20);
    assert_eq!(report["best_program"], summary["best_program"]);
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"task": {"kind": "learn", "target": "poisson"}, "chains": 1, "iterations": 10, "seed": 9}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("o");
    let out = synth(&["learn", "--config", cfg.to_str().unwrap(), "--seed", "11", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 11);
    assert_eq!(report["config"]["task"]["target"], "poisson");
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(synth(&["learn"]).status.code(), Some(2));
    assert_eq!(synth(&["learn", "--target", "cauchy"]).status.code(), Some(2));
    assert_eq!(synth(&["learn", "--target", "bernoulli", "--iterations", "0"]).status.code(), Some(2));
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"task": {"kind": "compile", "model": "beta-binomial"}, "bogus": 1}"#).unwrap();
    assert_eq!(synth(&["compile", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    // Task kind mismatch between subcommand and config.
    std::fs::write(&cfg, r#"{"task": {"kind": "compile", "model": "beta-binomial"}}"#).unwrap();
    assert_eq!(synth(&["learn", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

fn write_lines(path: &Path, lines: &[String]) {
    std::fs::write(path, lines.join("\n")).unwrap();
}

#[test]
fn data_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    let mut lines: Vec<String> = (0..30).map(|i| format!("{}", i as f64 * 0.1)).collect();
    lines[7] = "abc".into();
    write_lines(&csv, &lines);
    let out = synth(&["generalize", "--data", csv.to_str().unwrap(), "--chains", "1", "--iterations", "5"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 8"));
    let missing = dir.path().join("missing.csv");
    let out = synth(&["generalize", "--data", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn generalize_runs_on_valid_data() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    let mut lines = vec!["x".to_string()];
    lines.extend((0..40).map(|i| format!("{}", (i % 7) as f64 * 0.5)));
    write_lines(&csv, &lines);
    let out =
        synth(&["generalize", "--data", csv.to_str().unwrap(), "--header", "--chains", "1", "--iterations", "10"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["task"], "generalize");
}

#[test]
fn showcase_writes_histograms() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth(&["showcase", "--count", "3", "--samples", "200", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["programs"], 3);
    for i in 0..3 {
        assert!(dir.path().join(format!("prior_{i}.csv")).exists());
    }
    assert!(dir.path().join("showcase.json").exists());
}

#[test]
fn corpus_dir_override_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_synth"))
        .args(["learn", "--target", "bernoulli", "--chains", "1", "--iterations", "5"])
        .env("SYNTH_CORPUS_DIR", dir.path().join("nowhere"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}
