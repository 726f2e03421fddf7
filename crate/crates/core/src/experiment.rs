//! Experiment configuration, task pools, validation metrics and the training loop.

use std::collections::HashSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Difficulty, Task, INVENTORY_ACTION};
use crate::evaluator::EvaluatorKind;
use crate::policy::PolicyParams;
use crate::reward::{calibration_inputs, calibration_reward, RewardMode};
use crate::trainer::{
    categorical_kl, collect_rollouts, compute_advantages, ppo_update, prepare_samples, Decoding, RolloutBatch,
    RolloutSettings, TrainConfig, TrainError, UpdateReport,
};
use crate::policy::ReferenceSnapshot;
use crate::trajectory::{TrajectoryLogRecord, Verdict};

/// SplitMix64 finaliser; used to derive independent seeds from tuples.
pub fn mix(state: u64, value: u64) -> u64 {
    let mut z = state ^ value.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub difficulty: Difficulty,
    pub n_train_tasks: usize,
    pub n_valid_tasks: usize,
    pub n_test_tasks: usize,
    pub seed: u64,
    /// Explicit pools override the derived ones.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid_seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_seeds: Option<Vec<u64>>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            difficulty: Difficulty::Easy,
            n_train_tasks: 64,
            n_valid_tasks: 32,
            n_test_tasks: 32,
            seed: 0,
            train_seeds: None,
            valid_seeds: None,
            test_seeds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: RewardMode,
    pub evaluator: EvaluatorKind,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub env: EnvConfig,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<std::path::PathBuf>,
}

pub const DEFAULT_ITERATIONS: usize = 300;

impl ExperimentConfig {
    pub fn new(mode: RewardMode, evaluator: EvaluatorKind) -> Self {
        Self {
            mode,
            evaluator,
            train: TrainConfig::default(),
            env: EnvConfig::default(),
            iterations: DEFAULT_ITERATIONS,
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.train.validate()?;
        self.evaluator
            .validate()
            .map_err(|e| TrainError::Config(format!("evaluator: {e}")))?;
        let env = &self.env;
        for (name, n, explicit) in [
            ("train", env.n_train_tasks, &env.train_seeds),
            ("valid", env.n_valid_tasks, &env.valid_seeds),
            ("test", env.n_test_tasks, &env.test_seeds),
        ] {
            let size = explicit.as_ref().map_or(n, Vec::len);
            if size == 0 && name != "test" {
                return Err(TrainError::Config(format!("env.{name}: pool must not be empty")));
            }
        }
        Ok(())
    }
}

/// Disjoint train / validation / test task pools.
#[derive(Debug, Clone)]
pub struct TaskPools {
    pub train: Vec<Arc<Task>>,
    pub valid: Vec<Arc<Task>>,
    pub test: Vec<Arc<Task>>,
}

impl TaskPools {
    /// Seeds of the three pools, checked for disjointness.
    pub fn seeds(env: &EnvConfig, master_seed: u64) -> Result<[Vec<u64>; 3], TrainError> {
        let derive = |pool: u64, n: usize| -> Vec<u64> {
            let base = mix(mix(env.seed, master_seed), pool);
            (0..n as u64).map(|i| mix(base, i) >> 16).collect()
        };
        let pools = [
            env.train_seeds.clone().unwrap_or_else(|| derive(0, env.n_train_tasks)),
            env.valid_seeds.clone().unwrap_or_else(|| derive(1, env.n_valid_tasks)),
            env.test_seeds.clone().unwrap_or_else(|| derive(2, env.n_test_tasks)),
        ];
        let names = ["train", "valid", "test"];
        let mut seen: HashSet<u64> = HashSet::new();
        for (pool, name) in pools.iter().zip(names) {
            let mut own = HashSet::new();
            for &s in pool {
                if !own.insert(s) {
                    return Err(TrainError::Config(format!("env.{name}_seeds: duplicate seed {s}")));
                }
                if seen.contains(&s) {
                    return Err(TrainError::Config(format!(
                        "env.{name}_seeds: seed {s} also appears in another pool"
                    )));
                }
            }
            seen.extend(own);
        }
        Ok(pools)
    }

    pub fn build(env: &EnvConfig, master_seed: u64) -> Result<Self, TrainError> {
        let [train, valid, test] = Self::seeds(env, master_seed)?;
        let gen = |seeds: Vec<u64>| -> Vec<Arc<Task>> {
            seeds.into_par_iter().map(|s| Task::generate(s, env.difficulty)).collect()
        };
        Ok(Self {
            train: gen(train),
            valid: gen(valid),
            test: gen(test),
        })
    }
}

pub const METRICS_SCHEMA: &str = "#schema:mise-lab-metrics/1";
pub const METRICS_COLUMNS: [&str; 8] = [
    "iteration",
    "success_rate_valid",
    "ff_rate",
    "positive_eval_rate",
    "eval_accuracy_vs_oracle",
    "mean_rC",
    "mean_kl_to_ref",
    "inventory_action_fraction",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub success_rate_valid: f64,
    pub ff_rate: f64,
    pub positive_eval_rate: f64,
    pub eval_accuracy_vs_oracle: f64,
    #[serde(rename = "mean_rC")]
    pub mean_rc: f64,
    pub mean_kl_to_ref: f64,
    pub inventory_action_fraction: f64,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iteration,
            self.success_rate_valid,
            self.ff_rate,
            self.positive_eval_rate,
            self.eval_accuracy_vs_oracle,
            self.mean_rc,
            self.mean_kl_to_ref,
            self.inventory_action_fraction
        )
    }

    pub fn parse_csv_line(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != METRICS_COLUMNS.len() {
            return None;
        }
        let r = |i: usize| f[i].parse::<f64>().ok();
        Some(Self {
            iteration: f[0].parse().ok()?,
            success_rate_valid: r(1)?,
            ff_rate: r(2)?,
            positive_eval_rate: r(3)?,
            eval_accuracy_vs_oracle: r(4)?,
            mean_rc: r(5)?,
            mean_kl_to_ref: r(6)?,
            inventory_action_fraction: r(7)?,
        })
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = format!("{METRICS_SCHEMA}\n{}\n", METRICS_COLUMNS.join(","));
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Option<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next()? != METRICS_SCHEMA || lines.next()? != METRICS_COLUMNS.join(",") {
        return None;
    }
    lines.map(MetricsRow::parse_csv_line).collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Summary statistics of a greedy validation batch.
pub fn summarize(
    iteration: usize,
    batch: &RolloutBatch,
    params: &PolicyParams,
    reference: &ReferenceSnapshot,
) -> Result<MetricsRow, TrainError> {
    let rs = &batch.rollouts;
    let success = mean(rs.iter().map(|r| {
        f64::from(r.trajectory.total_score()) / f64::from(r.trajectory.max_score)
    }));
    let verdict_pairs: Vec<(Verdict, Verdict)> = rs
        .iter()
        .flat_map(|r| {
            r.trajectory
                .steps()
                .iter()
                .zip(&r.oracle)
                .map(|(s, o)| (s.verdict.expect("judged"), *o))
        })
        .collect();
    let positive = mean(verdict_pairs.iter().map(|(v, _)| f64::from(u8::from(v.is_positive()))));
    let accuracy = mean(verdict_pairs.iter().map(|(v, o)| f64::from(u8::from(v == o))));
    let mean_rc = rs
        .iter()
        .map(|r| {
            let v = r.trajectory.verdicts().expect("judged");
            Ok(calibration_reward(calibration_inputs(&r.trajectory, &v)?))
        })
        .collect::<Result<Vec<f64>, TrainError>>()?;
    let decisions = || rs.iter().flat_map(|r| &r.action_decisions);
    let kl = mean(decisions().map(|d| {
        let p = params.action_head.probs(&d.features);
        let q = reference.params().action_head.probs(&d.features);
        categorical_kl(&p, &q)
    }));
    let inventory = mean(decisions().map(|d| params.action_head.probs(&d.features)[INVENTORY_ACTION]));
    Ok(MetricsRow {
        iteration,
        success_rate_valid: success,
        ff_rate: batch.ff_rate(),
        positive_eval_rate: positive,
        eval_accuracy_vs_oracle: accuracy,
        mean_rc: mean(mean_rc.into_iter()),
        mean_kl_to_ref: kl,
        inventory_action_fraction: inventory,
    })
}

/// Greedy rollouts on `tasks` and their metrics row.
pub fn evaluate_policy(
    iteration: usize,
    params: &PolicyParams,
    reference: &ReferenceSnapshot,
    tasks: &[Arc<Task>],
    cfg: &ExperimentConfig,
) -> Result<(MetricsRow, RolloutBatch), TrainError> {
    let settings = RolloutSettings {
        mode: cfg.mode,
        evaluator: cfg.evaluator.clone(),
        horizon_cap: cfg.train.horizon_cap,
        history_window: cfg.train.history_window,
        decoding: Decoding::Greedy,
    };
    // greedy decoding consumes no randomness
    let batch = collect_rollouts(params, tasks, 0, iteration, &settings)?;
    Ok((summarize(iteration, &batch, params, reference)?, batch))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    /// Validation every this many iterations (the last one is always evaluated).
    pub eval_interval: usize,
    pub keep_logs: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            eval_interval: 1,
            keep_logs: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub metrics: Vec<MetricsRow>,
    pub params: PolicyParams,
    pub updates: Vec<UpdateReport>,
    pub logs: Vec<TrajectoryLogRecord>,
}

pub fn run_label(mode: RewardMode, split: &str, iteration: usize) -> String {
    format!("{}:{split}:iter{iteration}", mode.as_str())
}

/// Parses `<mode>:<split>:iter<k>`.
pub fn parse_run_label(label: &str) -> Option<(RewardMode, &str, usize)> {
    let mut parts = label.split(':');
    let mode = RewardMode::parse(parts.next()?)?;
    let split = parts.next()?;
    let k = parts.next()?.strip_prefix("iter")?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some((mode, split, k))
}

fn log_batch(batch: &RolloutBatch, mode: RewardMode, split: &str, logs: &mut Vec<TrajectoryLogRecord>) {
    for r in &batch.rollouts {
        logs.push(TrajectoryLogRecord {
            trajectory: r.trajectory.clone(),
            rewards: Some(r.rewards.to_logged()),
            run_label: run_label(mode, split, batch.iteration),
        });
    }
}

/// Collect, judge, assemble rewards and update, `iterations` times.
/// Fully determined by `(cfg, master_seed)`.
pub fn train(cfg: &ExperimentConfig, master_seed: u64, opts: &TrainOptions) -> Result<RunArtifacts, TrainError> {
    cfg.validate()?;
    let pools = TaskPools::build(&cfg.env, master_seed)?;
    train_on(cfg, master_seed, &pools, opts)
}

pub fn train_on(
    cfg: &ExperimentConfig,
    master_seed: u64,
    pools: &TaskPools,
    opts: &TrainOptions,
) -> Result<RunArtifacts, TrainError> {
    cfg.validate()?;
    let mut params = PolicyParams::initial(&cfg.evaluator);
    let reference = ReferenceSnapshot::of(&params);
    let mut metrics = Vec::with_capacity(cfg.iterations + 1);
    let mut updates = Vec::with_capacity(cfg.iterations);
    let mut logs = Vec::new();
    let settings = RolloutSettings {
        mode: cfg.mode,
        evaluator: cfg.evaluator.clone(),
        horizon_cap: cfg.train.horizon_cap,
        history_window: cfg.train.history_window,
        decoding: Decoding::Sample,
    };
    let (row, _) = evaluate_policy(0, &params, &reference, &pools.valid, cfg)?;
    metrics.push(row);
    let mut picker = ChaCha8Rng::seed_from_u64(mix(master_seed, 0x7461_736b));
    for k in 1..=cfg.iterations {
        let at = |source: TrainError| TrainError::AtIteration {
            iteration: k,
            source: Box::new(source),
        };
        let tasks: Vec<Arc<Task>> = (0..cfg.train.batch_size)
            .map(|_| Arc::clone(&pools.train[picker.random_range(0..pools.train.len())]))
            .collect();
        let batch = collect_rollouts(&params, &tasks, mix(master_seed, k as u64), k, &settings).map_err(at)?;
        let adv = compute_advantages(&batch, cfg.train.baseline);
        let samples = prepare_samples(&batch, &adv, &reference);
        let (next, report) = ppo_update(&params, &samples, &cfg.train).map_err(at)?;
        params = next;
        updates.push(report);
        if opts.keep_logs {
            log_batch(&batch, cfg.mode, "train", &mut logs);
        }
        if k % opts.eval_interval.max(1) == 0 || k == cfg.iterations {
            let (row, vbatch) = evaluate_policy(k, &params, &reference, &pools.valid, cfg).map_err(at)?;
            metrics.push(row);
            if opts.keep_logs && k == cfg.iterations {
                log_batch(&vbatch, cfg.mode, "valid", &mut logs);
            }
        }
    }
    Ok(RunArtifacts {
        metrics,
        params,
        updates,
        logs,
    })
}
