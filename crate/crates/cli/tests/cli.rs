//! Binary-level tests: subcommand wiring, exit codes, and the negative
//! control for the gradient-check failure path.

use std::path::PathBuf;
use std::process::Command;

use prefcal_cli::config::RunConfig;
use prefcal_cli::experiments::gradcheck::{run_with_options, GradcheckOptions};
use prefcal_cli::RunnerError;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prefcal"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("prefcal-cli-{}-{tag}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("temp dir");
    dir
}

#[test]
fn invalid_config_exits_2() {
    let dir = temp_dir("badcfg");
    let cfg = dir.join("bad.json");
    std::fs::write(&cfg, "{\"bogus_key\": true}").unwrap();
    let out = bin()
        .args(["gradcheck", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn divergence_maps_to_exit_4() {
    // The stable primitives saturate instead of overflowing, so a
    // divergence cannot be provoked from a well-formed config; the error
    // path itself is exercised in the core train tests. Here: the exit-code
    // contract.
    let err = RunnerError::from(prefcal::Error::Divergence("logits overflowed".into()));
    assert_eq!(err.exit_code(), 4);
    assert_eq!(RunnerError::Config("x".into()).exit_code(), 2);
    assert_eq!(RunnerError::Invariant("x".into()).exit_code(), 3);
}

#[test]
fn gradcheck_passes_and_reports() {
    let dir = temp_dir("gradcheck");
    let out = bin()
        .args(["gradcheck", "--seed", "3", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let run_dir = stdout.trim().strip_prefix("run directory: ").unwrap();
    let csv = std::fs::read_to_string(PathBuf::from(run_dir).join("reports/gradcheck.csv")).unwrap();
    assert!(csv.lines().count() > 5);
    assert!(!csv.contains("false"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn corrupted_gradient_fails_with_counterexample() {
    // Library-level negative control: a deliberately corrupted analytic
    // gradient must fail the suite and serialize the violating sample.
    let config = RunConfig {
        output_dir: temp_dir("corrupt"),
        ..RunConfig::default()
    };
    let err = run_with_options(
        &config,
        GradcheckOptions {
            corrupt_joint_gradient: Some(0.05),
        },
    )
    .expect_err("corrupted gradient must fail");
    assert!(matches!(err, RunnerError::Invariant(_)));
    assert_eq!(err.exit_code(), 3);
    // The failure report names the corrupted check.
    let mut found = false;
    for entry in std::fs::read_dir(&config.output_dir).unwrap() {
        let failure = entry.unwrap().path().join("reports/failure.json");
        if failure.is_file() {
            let text = std::fs::read_to_string(failure).unwrap();
            assert!(text.contains("fd_joint_loss"));
            found = true;
        }
    }
    assert!(found, "failure.json was not written");
    std::fs::remove_dir_all(&config.output_dir).ok();
}

#[test]
fn ece_subcommand_round_trips_records() {
    let dir = temp_dir("ece");
    let csv = dir.join("records.csv");
    std::fs::write(
        &csv,
        "confidence,correct,true_class,group_key,oracle_z\n\
         9.0000000000000002e-1,1,0,p0,\n\
         9.0000000000000002e-1,0,1,p0,\n\
         2.0000000000000001e-1,0,0,p1,\n\
         2.0000000000000001e-1,0,0,p1,\n",
    )
    .unwrap();
    let out = bin()
        .arg("ece")
        .arg(&csv)
        .args(["--bins", "10", "--out"])
        .arg(dir.join("metrics"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((summary["ece_binned"].as_f64().unwrap() - 0.3).abs() < 1e-12);
    assert!((summary["l1_risk"].as_f64().unwrap() - 0.35).abs() < 1e-12);
    assert!((summary["exact_ece"].as_f64().unwrap() - 0.3).abs() < 1e-12);
    assert!(dir.join("metrics/reliability.csv").is_file());
    assert!(dir.join("metrics/summary.json").is_file());
    // Malformed input is an invalid-config error.
    std::fs::write(&csv, "not,a,record,csv\n").unwrap();
    let out = bin().arg("ece").arg(&csv).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn report_renders_run_directories() {
    let dir = temp_dir("report");
    let out = bin()
        .args(["metrics-suite", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let run_dir = stdout.trim().strip_prefix("run directory: ").unwrap();
    let out = bin().arg("report").arg(run_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let rendered = String::from_utf8_lossy(&out.stdout);
    assert!(rendered.contains("metrics_suite.csv"));
    assert!(rendered.contains("jensen_exact_le_l1"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn flag_overrides_take_effect() {
    let dir = temp_dir("flags");
    let out = bin()
        .args(["contaminate", "--seed", "9", "--out"])
        .arg(&dir)
        .args(["--bins", "10"])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    let run_dir = stdout.trim().strip_prefix("run directory: ").unwrap();
    let config: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(PathBuf::from(run_dir).join("config.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(config["master_seed"], 9);
    assert_eq!(config["bins"], 10);
    std::fs::remove_dir_all(&dir).ok();
}
