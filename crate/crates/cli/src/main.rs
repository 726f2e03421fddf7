use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mise_lab::evaluator::EvaluatorKind;
use mise_lab::experiment::ExperimentConfig;
use mise_lab::harness::{self, AblationSuite, HarnessError};
use mise_lab::reward::RewardMode;

#[derive(Parser)]
#[command(name = "mise-lab", version, about = "Hindsight self-evaluation rewards on a text-grid cooking quest")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write metrics, parameters and trajectory logs.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an ablation suite over several seeds.
    Ablate {
        #[arg(long, default_value = "table4")]
        suite: String,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
        /// Base configuration shared by every variant (mode and evaluator are overridden).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Check the KL decomposition and the equivalence gap on random enumerable instances.
    VerifyTheory {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Re-execute a trajectory log against regenerated tasks and recompute its rewards.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
    /// Recompute the rewards of a trajectory log from its scores and verdicts.
    AuditRewards {
        #[arg(long)]
        log: PathBuf,
    },
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    harness::configure_threads()?;
    match cli.command {
        Command::Train { config, seed, out } => {
            let cfg = harness::load_config(&config)?;
            let out = out
                .or_else(|| cfg.out_dir.clone())
                .ok_or_else(|| HarnessError::Validation("no output directory: pass --out or set out_dir".into()))?;
            let artifacts = harness::run_train(&cfg, seed, &out)?;
            let last = artifacts.metrics.last().expect("iteration 0 row");
            print_json(last);
        }
        Command::Ablate {
            suite,
            seeds,
            out,
            config,
            iterations,
        } => {
            let mut base = match config {
                Some(p) => harness::load_config(&p)?,
                None => ExperimentConfig::new(RewardMode::Mise, EvaluatorKind::oracle()),
            };
            if let Some(n) = iterations {
                base.iterations = n;
            }
            let suite = AblationSuite::named(&suite, seeds, &base)?;
            let report = harness::run_ablation(&suite);
            harness::write_ablation(&report, &out)?;
            print_json(&report);
            let failed: Vec<&str> = report
                .variants
                .iter()
                .filter(|v| v.seeds_ok == 0)
                .map(|v| v.variant.as_str())
                .collect();
            if !failed.is_empty() {
                return Err(HarnessError::RunsFailed(failed.join(", ")));
            }
        }
        Command::VerifyTheory { trials, tol } => {
            let report = harness::run_verify_theory(trials, tol)?;
            print_json(&report);
            if !report.pass {
                return Err(HarnessError::VerificationFailed);
            }
        }
        Command::Replay { log } => {
            let report = harness::replay_log(&harness::read_text(&log)?)?;
            print_json(&report);
            if !report.ok() {
                return Err(HarnessError::Divergence(report.divergences.len()));
            }
        }
        Command::AuditRewards { log } => {
            let report = harness::audit_rewards(&harness::read_text(&log)?)?;
            print_json(&report);
            if !report.ok() {
                return Err(HarnessError::Divergence(report.divergences.len()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
