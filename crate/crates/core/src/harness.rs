//! Orchestration: artifact files, ablation suites, replay and audit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::env::Task;
use crate::evaluator::EvaluatorKind;
use crate::experiment::{
    metrics_csv, mix, parse_run_label, train, ExperimentConfig, MetricsRow, RunArtifacts, TrainOptions,
};
use crate::reward::{RewardMode, RewardVector};
use crate::theory::{verify_theory, TheoryReport};
use crate::trainer::TrainError;
use crate::trajectory::{decode_record, encode_record};

pub const THREADS_ENV: &str = "MISE_LAB_THREADS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("training failed: {0}")]
    Train(TrainError),
    #[error("{0} divergence(s) found")]
    Divergence(usize),
    #[error("verification failed")]
    VerificationFailed,
    #[error("no successful run for variant(s): {0}")]
    RunsFailed(String),
}

impl HarnessError {
    /// 1 for invalid input, 2 for divergence or failed verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation(_) | HarnessError::Io { .. } => 1,
            HarnessError::Train(TrainError::Config(_)) => 1,
            HarnessError::Train(_)
            | HarnessError::Divergence(_)
            | HarnessError::VerificationFailed
            | HarnessError::RunsFailed(_) => 2,
        }
    }
}

impl From<TrainError> for HarnessError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => HarnessError::Validation(m),
            other => HarnessError::Train(other),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Bounds the global worker pool by `MISE_LAB_THREADS` when set.
pub fn configure_threads() -> Result<(), HarnessError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| HarnessError::Validation(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    // a second initialisation in the same process is harmless
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(contents).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| HarnessError::Validation(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn logs_jsonl(artifacts: &RunArtifacts) -> String {
    let mut out = String::new();
    for r in &artifacts.logs {
        out.push_str(&encode_record(r));
        out.push('\n');
    }
    out
}

/// Trains and writes `metrics.csv`, `params.json`, `trajectories.jsonl`
/// and the resolved `config.json` into `out_dir`.
pub fn run_train(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<RunArtifacts, HarnessError> {
    cfg.validate()?;
    let artifacts = train(cfg, seed, &TrainOptions::default())?;
    let resolved = serde_json::to_string_pretty(cfg).expect("config serializes");
    write_atomic(&out_dir.join("config.json"), resolved.as_bytes())?;
    write_atomic(&out_dir.join("metrics.csv"), metrics_csv(&artifacts.metrics).as_bytes())?;
    write_atomic(&out_dir.join("params.json"), artifacts.params.to_json().as_bytes())?;
    write_atomic(&out_dir.join("trajectories.jsonl"), logs_jsonl(&artifacts).as_bytes())?;
    Ok(artifacts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSuite {
    pub name: String,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
}

pub const SUITE_NAMES: [&str; 2] = ["table4", "bias"];

fn variant(name: &str, mode: RewardMode, evaluator: EvaluatorKind, base: &ExperimentConfig) -> Variant {
    Variant {
        name: name.to_owned(),
        config: ExperimentConfig {
            mode,
            evaluator,
            ..base.clone()
        },
    }
}

impl AblationSuite {
    /// `table4`: progressively corrupted self-evaluation; `bias`: a learned
    /// evaluator that starts out favouring the `inventory` command.
    pub fn named(name: &str, seeds: usize, base: &ExperimentConfig) -> Result<Self, HarnessError> {
        let variants = match name {
            "table4" => vec![
                variant("mise", RewardMode::Mise, EvaluatorKind::oracle(), base),
                variant("prm", RewardMode::Prm, EvaluatorKind::oracle(), base),
                variant("random_eval", RewardMode::Mise, EvaluatorKind::random(mix(base.env.seed, 0x72)), base),
                variant("flipped_eval", RewardMode::Mise, EvaluatorKind::flipped(), base),
                variant("ppo_only", RewardMode::PpoOnly, EvaluatorKind::oracle(), base),
            ],
            "bias" => {
                let learned = EvaluatorKind::learned(Some("inventory"), crate::evaluator::DEFAULT_BIAS_RATE);
                vec![
                    variant("mise", RewardMode::Mise, learned.clone(), base),
                    variant("prm", RewardMode::Prm, learned, base),
                ]
            }
            other => {
                return Err(HarnessError::Validation(format!(
                    "unknown suite `{other}` (expected one of {})",
                    SUITE_NAMES.join(", ")
                )))
            }
        };
        if seeds == 0 {
            return Err(HarnessError::Validation("seeds must be at least 1".into()));
        }
        Ok(Self {
            name: name.to_owned(),
            variants,
            seeds: (0..seeds as u64).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: String,
    pub mode: RewardMode,
    pub seeds_ok: usize,
    pub failures: Vec<String>,
    pub median_success: f64,
    pub median_ff_rate: f64,
    pub median_eval_accuracy: f64,
    pub median_positive_eval_rate: f64,
    pub median_inventory_fraction: f64,
    pub median_calibration_gap: f64,
    pub final_success: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub suite: String,
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantSummary>,
    /// Baseline of the untrained policy (iteration 0, median over seeds).
    pub untrained_success: f64,
    #[serde(skip)]
    pub curves: Vec<(String, Vec<Vec<MetricsRow>>)>,
}

impl AblationReport {
    pub fn variant(&self, name: &str) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| v.variant == name)
    }

    /// Per-iteration medians of completion and positive-evaluation rate.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("variant,iteration,median_success_rate,median_positive_eval_rate\n");
        for (name, runs) in &self.curves {
            if runs.is_empty() {
                continue;
            }
            let len = runs.iter().map(Vec::len).min().unwrap_or(0);
            for i in 0..len {
                let success: Vec<f64> = runs.iter().map(|r| r[i].success_rate_valid).collect();
                let positive: Vec<f64> = runs.iter().map(|r| r[i].positive_eval_rate).collect();
                out.push_str(&format!(
                    "{name},{},{},{}\n",
                    runs[0][i].iteration,
                    median(&success),
                    median(&positive)
                ));
            }
        }
        out
    }
}

/// Median; the mean of the middle pair for even counts, 0 when empty.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Runs every variant for every seed; failed runs are recorded and skipped.
pub fn run_ablation(suite: &AblationSuite) -> AblationReport {
    let jobs: Vec<(usize, u64)> = (0..suite.variants.len())
        .flat_map(|v| suite.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let opts = TrainOptions {
        eval_interval: 1,
        keep_logs: false,
    };
    let results: Vec<Result<Vec<MetricsRow>, String>> = jobs
        .par_iter()
        .map(|&(v, s)| {
            train(&suite.variants[v].config, s, &opts)
                .map(|a| a.metrics)
                .map_err(|e| format!("seed {s}: {e}"))
        })
        .collect();
    let mut untrained = Vec::new();
    let mut variants = Vec::new();
    let mut curves = Vec::new();
    for (vi, v) in suite.variants.iter().enumerate() {
        let mut runs = Vec::new();
        let mut failures = Vec::new();
        for ((job_v, _), r) in jobs.iter().zip(&results) {
            if *job_v != vi {
                continue;
            }
            match r {
                Ok(m) => runs.push(m.clone()),
                Err(e) => failures.push(e.clone()),
            }
        }
        if vi == 0 {
            untrained = runs.iter().map(|m| m[0].success_rate_valid).collect();
        }
        let last: Vec<MetricsRow> = runs.iter().map(|m| *m.last().expect("iteration 0 row")).collect();
        let col = |f: fn(&MetricsRow) -> f64| median(&last.iter().map(f).collect::<Vec<_>>());
        variants.push(VariantSummary {
            variant: v.name.clone(),
            mode: v.config.mode,
            seeds_ok: runs.len(),
            failures,
            median_success: col(|r| r.success_rate_valid),
            median_ff_rate: col(|r| r.ff_rate),
            median_eval_accuracy: col(|r| r.eval_accuracy_vs_oracle),
            median_positive_eval_rate: col(|r| r.positive_eval_rate),
            median_inventory_fraction: col(|r| r.inventory_action_fraction),
            median_calibration_gap: col(|r| (r.positive_eval_rate - r.success_rate_valid).abs()),
            final_success: last.iter().map(|r| r.success_rate_valid).collect(),
        });
        if matches!(v.config.mode, RewardMode::Mise | RewardMode::Prm) {
            curves.push((v.name.clone(), runs));
        }
    }
    AblationReport {
        suite: suite.name.clone(),
        seeds: suite.seeds.clone(),
        variants,
        untrained_success: median(&untrained),
        curves,
    }
}

/// Writes `report.json` and `curves.csv` into `out_dir`.
pub fn write_ablation(report: &AblationReport, out_dir: &Path) -> Result<(), HarnessError> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    write_atomic(&out_dir.join("report.json"), json.as_bytes())?;
    write_atomic(&out_dir.join("curves.csv"), report.curves_csv().as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Divergence {
    /// Zero-based line number of the record.
    pub record: usize,
    pub task_id: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub records: usize,
    pub divergences: Vec<Divergence>,
}

impl AuditReport {
    pub fn ok(&self) -> bool {
        self.divergences.is_empty()
    }
}

fn check_rewards(rec: &crate::trajectory::TrajectoryLogRecord) -> Result<(), String> {
    let Some(logged) = &rec.rewards else {
        return Ok(());
    };
    let (mode, _, _) =
        parse_run_label(&rec.run_label).ok_or_else(|| format!("unrecognised run label `{}`", rec.run_label))?;
    let recomputed = RewardVector::from_judged(&rec.trajectory, mode).map_err(|e| e.to_string())?;
    if recomputed.matches_logged(logged) {
        Ok(())
    } else {
        Err("logged rewards differ from recomputed rewards".into())
    }
}

/// Decodes a JSONL log; a malformed line is a validation error.
fn read_log(text: &str) -> Result<Vec<crate::trajectory::TrajectoryLogRecord>, HarnessError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| decode_record(l).map_err(|e| HarnessError::Validation(format!("line {}: {e}", i + 1))))
        .collect()
}

fn audit(text: &str, replay_env: bool) -> Result<AuditReport, HarnessError> {
    let records = read_log(text)?;
    let divergences: Vec<Divergence> = records
        .par_iter()
        .enumerate()
        .filter_map(|(i, rec)| {
            let result = (|| {
                if replay_env {
                    let task = Task::from_id(&rec.trajectory.task_id).map_err(|e| e.to_string())?;
                    if task.spec.max_score != rec.trajectory.max_score {
                        return Err("max score differs from the regenerated task".into());
                    }
                    task.replay_states(&rec.trajectory).map_err(|e| e.to_string())?;
                }
                check_rewards(rec)
            })();
            result.err().map(|detail| Divergence {
                record: i,
                task_id: rec.trajectory.task_id.clone(),
                detail,
            })
        })
        .collect();
    Ok(AuditReport {
        records: records.len(),
        divergences,
    })
}

/// Re-executes every logged action sequence and recomputes its rewards.
pub fn replay_log(text: &str) -> Result<AuditReport, HarnessError> {
    audit(text, true)
}

/// Recomputes rewards from logged scores and verdicts only.
pub fn audit_rewards(text: &str) -> Result<AuditReport, HarnessError> {
    audit(text, false)
}

pub fn read_text(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub const THEORY_SEED: u64 = 0x7468_656f;

pub fn run_verify_theory(trials: usize, tolerance: f64) -> Result<TheoryReport, HarnessError> {
    if trials == 0 {
        return Err(HarnessError::Validation("trials must be at least 1".into()));
    }
    if !(tolerance >= 0.0) {
        return Err(HarnessError::Validation("tolerance must be non-negative".into()));
    }
    verify_theory(trials, tolerance, THEORY_SEED).map_err(|e| HarnessError::Validation(e.to_string()))
}
