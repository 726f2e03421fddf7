use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mise-lab"))
        .args(args)
        .env("MISE_LAB_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL: &str = r#"{
    "mode": "mise",
    "evaluator": {"tag": "biased", "bias_target": "inventory", "seed": 3},
    "iterations": 2,
    "train": {"batch_size": 8},
    "env": {"n_train_tasks": 8, "n_valid_tasks": 4, "n_test_tasks": 2}
}"#;

#[test]
fn train_then_replay_and_audit() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    let train = cli(&["train", "--config", &config, "--seed", "7", "--out", out]);
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    let last: serde_json::Value = serde_json::from_slice(&train.stdout).unwrap();
    assert_eq!(last["iteration"], 2);

    let log = format!("{out}/trajectories.jsonl");
    for sub in ["replay", "audit-rewards"] {
        let o = cli(&[sub, "--log", &log]);
        assert!(o.status.success(), "{sub}: {}", String::from_utf8_lossy(&o.stderr));
        let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(report["divergences"].as_array().unwrap().len(), 0);
    }
}

#[test]
fn unknown_config_field_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"mode": "mise", "evaluator": {"tag": "oracle"}, "lr": 1}"#);
    let o = cli(&["train", "--config", &config, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_log_exits_1() {
    let o = cli(&["replay", "--log", "/nonexistent/trajectories.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_theory_reports_and_fails_at_zero_tolerance() {
    let ok = cli(&["verify-theory", "--trials", "10"]);
    assert!(ok.status.success());
    let report: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(cli(&["verify-theory", "--trials", "10", "--tol", "0"]).status.code(), Some(2));
}

#[test]
fn ablate_rejects_unknown_suite() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["ablate", "--suite", "nope", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn tiny_ablation_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("abl");
    let o = cli(&[
        "ablate", "--suite", "bias", "--seeds", "2", "--iterations", "1", "--config", &config, "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("report.json").is_file());
    assert!(out.join("curves.csv").is_file());
}
