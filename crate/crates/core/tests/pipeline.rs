use mise_lab::env::{walkthrough, Difficulty, Task};
use mise_lab::evaluator::{oracle_labels, EvaluatorKind};
use mise_lab::experiment::{parse_metrics_csv, run_label, ExperimentConfig, METRICS_SCHEMA};
use mise_lab::harness::{self, HarnessError};
use mise_lab::policy::PolicyParams;
use mise_lab::reward::{RewardMode, RewardVector};
use mise_lab::trajectory::{encode_record, Observation, Step, Trajectory, TrajectoryLogRecord};
use serde_json::Value;

fn small(mode: RewardMode, evaluator: EvaluatorKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(mode, evaluator);
    cfg.iterations = 3;
    cfg.train.batch_size = 16;
    cfg.env.n_valid_tasks = 8;
    cfg.env.n_test_tasks = 4;
    cfg
}

fn log_of(cfg: &ExperimentConfig, seed: u64) -> String {
    let dir = tempfile::tempdir().unwrap();
    harness::run_train(cfg, seed, dir.path()).unwrap();
    std::fs::read_to_string(dir.path().join("trajectories.jsonl")).unwrap()
}

/// Log of walkthrough episodes, which score on every subgoal.
fn solved_log(seeds: std::ops::Range<u64>) -> String {
    seeds
        .map(|seed| {
            let task = Task::generate(seed, Difficulty::Easy);
            let (mut state, obs) = task.spec.reset();
            let mut traj = Trajectory::new(task.id.clone(), task.seed, task.spec.max_score, 20).unwrap();
            let mut text = obs.text;
            for (t, action) in walkthrough(&task.spec).into_iter().enumerate() {
                let (next, fb) = task.spec.step(&state, &action).unwrap();
                traj.append_step(Step::new(Observation::new(text, t).unwrap(), action, fb.score_delta, fb.parse_ok).unwrap())
                    .unwrap();
                (state, text) = (next, fb.text);
                if fb.done {
                    traj.terminate();
                }
            }
            let judged = traj.with_verdicts(&oracle_labels(&task, &traj).unwrap()).unwrap();
            let rewards = RewardVector::from_judged(&judged, RewardMode::Mise).unwrap().to_logged();
            encode_record(&TrajectoryLogRecord {
                trajectory: judged,
                rewards: Some(rewards),
                run_label: run_label(RewardMode::Mise, "train", 0),
            })
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Zeroes the first scoring step of the first record that has one.
fn tamper(log: &str) -> (String, usize) {
    let mut lines: Vec<String> = log.lines().map(str::to_owned).collect();
    for (i, line) in lines.iter_mut().enumerate() {
        let mut v: Value = serde_json::from_str(line).unwrap();
        let steps = v["steps"].as_array_mut().unwrap();
        if let Some(step) = steps.iter_mut().find(|s| s["score"] == 1) {
            step["score"] = 0.into();
            *line = serde_json::to_string(&v).unwrap();
            return (lines.join("\n"), i);
        }
    }
    panic!("no scoring step in the log");
}

#[test]
fn run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(RewardMode::Mise, EvaluatorKind::oracle());
    let art = harness::run_train(&cfg, 3, dir.path()).unwrap();
    for f in ["config.json", "metrics.csv", "params.json", "trajectories.jsonl"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(csv.starts_with(METRICS_SCHEMA));
    assert_eq!(parse_metrics_csv(&csv).unwrap(), art.metrics);
    assert_eq!(art.metrics.len(), cfg.iterations + 1);

    let json = std::fs::read_to_string(dir.path().join("params.json")).unwrap();
    assert_eq!(PolicyParams::from_json(&json).unwrap(), art.params);

    let saved = harness::load_config(&dir.path().join("config.json")).unwrap();
    assert_eq!(saved, cfg);
}

#[test]
fn clean_log_replays_and_audits() {
    let log = log_of(&small(RewardMode::Mise, EvaluatorKind::biased("inventory", 0.81, 5)), 1);
    let replay = harness::replay_log(&log).unwrap();
    assert!(replay.ok(), "{:?}", replay.divergences);
    assert_eq!(replay.records, log.lines().count());
    assert!(harness::audit_rewards(&log).unwrap().ok());
}

#[test]
fn one_edited_score_is_one_divergence() {
    let log = solved_log(0..6);
    assert!(harness::replay_log(&log).unwrap().ok());
    let (edited, line) = tamper(&log);
    for report in [harness::replay_log(&edited).unwrap(), harness::audit_rewards(&edited).unwrap()] {
        assert_eq!(report.divergences.len(), 1, "{:?}", report.divergences);
        assert_eq!(report.divergences[0].record, line);
    }
}

#[test]
fn malformed_log_is_a_validation_error() {
    let err = harness::replay_log("{\"task_id\": 3}\n").unwrap_err();
    assert!(matches!(err, HarnessError::Validation(_)));
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn raw_and_prm_logs_audit_cleanly() {
    for mode in [RewardMode::Raw, RewardMode::Prm, RewardMode::PpoOnly] {
        let log = log_of(&small(mode, EvaluatorKind::flipped()), 4);
        assert!(harness::audit_rewards(&log).unwrap().ok(), "{mode:?}");
    }
}

#[test]
fn bad_config_is_rejected_before_training() {
    let mut cfg = small(RewardMode::Mise, EvaluatorKind::oracle());
    cfg.train.clip_epsilon = -1.0;
    let dir = tempfile::tempdir().unwrap();
    let err = harness::run_train(&cfg, 0, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(!dir.path().join("metrics.csv").exists());
}
