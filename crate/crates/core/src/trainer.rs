//! On-policy collection and the clipped-surrogate update with an exact KL
//! penalty against a frozen reference.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{vocabulary, EnvError, EnvState, FeedbackKind, Task};
use crate::evaluator::{EvalError, EvaluatorKind, EvaluatorTag, HindsightEvaluator};
use crate::policy::{action_features, argmax, eval_features, Head, PolicyError, PolicyParams, ReferenceSnapshot};
use crate::reward::{RewardError, RewardMode, RewardVector};
use crate::trajectory::{Observation, Step, Trajectory, TrajectoryError, Verdict};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Evaluator(#[from] EvalError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("non-finite gradient (norm {norm}, mean KL {mean_kl}, {decisions} decisions)")]
    NonFiniteGradient { norm: f64, mean_kl: f64, decisions: usize },
    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<TrainError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// Per-step-index batch mean of the same reward-to-go.
    Mean,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub beta_kl: f64,
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    pub epochs_per_batch: usize,
    pub batch_size: usize,
    pub horizon_cap: usize,
    pub history_window: usize,
    pub baseline: Baseline,
}

/// Step size for the linear heads, tuned on easy tasks.
pub const DEFAULT_LEARNING_RATE: f64 = 2.0;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta_kl: 0.1,
            clip_epsilon: 0.2,
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs_per_batch: 3,
            batch_size: 32,
            horizon_cap: crate::trajectory::DEFAULT_HORIZON_CAP,
            history_window: 10,
            baseline: Baseline::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |field: &str, why: &str| Err(TrainError::Config(format!("train.{field}: {why}")));
        if !(self.beta_kl >= 0.0 && self.beta_kl.is_finite()) {
            return bad("beta_kl", "must be finite and >= 0");
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon", "must lie in (0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be finite and > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        if self.horizon_cap == 0 {
            return bad("horizon_cap", "must be >= 1");
        }
        if self.history_window == 0 {
            return bad("history_window", "must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Action,
    Eval,
}

/// One sampled choice of either head.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub head: HeadKind,
    pub t: usize,
    pub features: Vec<f64>,
    pub choice: usize,
    /// Log-probability under the parameters that sampled it.
    pub behavior_logp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub task: Arc<Task>,
    /// Finalized, with verdicts on every step.
    pub trajectory: Trajectory,
    pub rewards: RewardVector,
    pub oracle: Vec<Verdict>,
    pub action_decisions: Vec<Decision>,
    /// Present only when the evaluation head produced the verdicts.
    pub eval_decisions: Vec<Decision>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub iteration: usize,
    pub seed: u64,
    pub rollouts: Vec<Rollout>,
}

impl RolloutBatch {
    /// Fraction of steps whose command parsed.
    pub fn ff_rate(&self) -> f64 {
        let (ok, n) = self.rollouts.iter().flat_map(|r| r.trajectory.steps()).fold((0usize, 0usize), |(ok, n), s| {
            (ok + usize::from(s.parse_ok), n + 1)
        });
        if n == 0 {
            0.0
        } else {
            ok as f64 / n as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoding {
    Sample,
    Greedy,
}

/// Everything an episode needs besides parameters and the task.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutSettings {
    pub mode: RewardMode,
    pub evaluator: EvaluatorKind,
    pub horizon_cap: usize,
    pub history_window: usize,
    pub decoding: Decoding,
}

fn sample_index(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    p.len() - 1
}

/// Plays one episode and judges it in hindsight.
pub fn run_episode(
    params: &PolicyParams,
    task: &Arc<Task>,
    settings: &RolloutSettings,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout, TrainError> {
    let spec = &task.spec;
    let (mut state, obs) = spec.reset();
    let mut obs_text = obs.text;
    let mut last = FeedbackKind::Start;
    let mut traj = Trajectory::new(task.id.clone(), task.seed, spec.max_score, settings.horizon_cap)?;
    let mut states: Vec<EnvState> = Vec::with_capacity(settings.horizon_cap);
    let mut action_decisions = Vec::with_capacity(settings.horizon_cap);
    for t in 0..settings.horizon_cap {
        let x = action_features(&spec.percept(&state), last, traj.truncate_history(settings.history_window)?);
        let p = params.action_dist(&x)?;
        let a = match settings.decoding {
            Decoding::Sample => sample_index(&p, rng.random::<f64>()),
            Decoding::Greedy => argmax(&p),
        };
        let action = vocabulary()[a].clone();
        let (next, fb) = spec.step(&state, &action)?;
        traj.append_step(Step::new(Observation::new(obs_text, t)?, action, fb.score_delta, fb.parse_ok)?)?;
        action_decisions.push(Decision {
            head: HeadKind::Action,
            t,
            features: x,
            choice: a,
            behavior_logp: p[a].ln(),
        });
        states.push(state);
        obs_text = fb.text;
        last = fb.kind;
        state = next;
        if fb.done {
            traj.terminate();
            break;
        }
    }
    let oracle: Vec<Verdict> = traj
        .steps()
        .iter()
        .zip(&states)
        .map(|(s, st)| task.label(st, &s.action))
        .collect();
    let mut eval_decisions = Vec::new();
    let verdicts = if settings.evaluator.tag == EvaluatorTag::Learned {
        let mut out = Vec::with_capacity(traj.len());
        for (t, &label) in oracle.iter().enumerate() {
            let x = eval_features(&traj, t, label);
            let q = params.eval_dist(&x)?;
            let positive = match settings.decoding {
                Decoding::Sample => rng.random::<f64>() < q,
                Decoding::Greedy => q > 0.5,
            };
            let choice = usize::from(positive);
            eval_decisions.push(Decision {
                head: HeadKind::Eval,
                t,
                features: x,
                choice,
                behavior_logp: if positive { q.ln() } else { (1.0 - q).ln() },
            });
            out.push(Verdict::from_sign(positive));
        }
        out
    } else {
        settings.evaluator.evaluate_all(task, &traj)?
    };
    let trajectory = traj.with_verdicts(&verdicts)?;
    let rewards = RewardVector::from_judged(&trajectory, settings.mode)?;
    Ok(Rollout {
        task: Arc::clone(task),
        trajectory,
        rewards,
        oracle,
        action_decisions,
        eval_decisions,
    })
}

/// Per-environment random stream; independent of thread scheduling.
pub fn env_rng(seed: u64, env_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(env_index as u64);
    rng
}

/// One episode per task, collected in parallel and ordered by env index.
pub fn collect_rollouts(
    params: &PolicyParams,
    tasks: &[Arc<Task>],
    seed: u64,
    iteration: usize,
    settings: &RolloutSettings,
) -> Result<RolloutBatch, TrainError> {
    if tasks.is_empty() {
        return Err(TrainError::Config("collect_rollouts needs at least one task".into()));
    }
    let rollouts = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| run_episode(params, task, settings, &mut env_rng(seed, i)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RolloutBatch {
        iteration,
        seed,
        rollouts,
    })
}

/// Advantages aligned with each rollout's decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageRecords {
    pub action: Vec<Vec<f64>>,
    pub eval: Vec<Vec<f64>>,
}

fn reward_to_go(r: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; r.len()];
    let mut acc = 0.0;
    for j in (0..r.len()).rev() {
        acc += r[j];
        out[j] = acc;
    }
    out
}

fn center_by_index(rtg: &mut [Vec<f64>]) {
    let horizon = rtg.iter().map(Vec::len).max().unwrap_or(0);
    for t in 0..horizon {
        let (sum, n) = rtg
            .iter()
            .filter_map(|v| v.get(t))
            .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        let mean = sum / n as f64;
        for v in rtg.iter_mut() {
            if let Some(x) = v.get_mut(t) {
                *x -= mean;
            }
        }
    }
}

pub fn compute_advantages(batch: &RolloutBatch, baseline: Baseline) -> AdvantageRecords {
    let mut action: Vec<Vec<f64>> = batch
        .rollouts
        .iter()
        .map(|r| reward_to_go(&r.rewards.combined_action))
        .collect();
    // only rollouts whose verdicts came from the evaluation head carry eval decisions
    let mut eval: Vec<Vec<f64>> = batch
        .rollouts
        .iter()
        .map(|r| {
            if r.eval_decisions.is_empty() {
                Vec::new()
            } else {
                reward_to_go(&r.rewards.combined_eval)
            }
        })
        .collect();
    if baseline == Baseline::Mean {
        center_by_index(&mut action);
        center_by_index(&mut eval);
    }
    AdvantageRecords { action, eval }
}

/// One decision prepared for the update: features, choice, advantage and the
/// frozen reference distribution at that history.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub head: HeadKind,
    pub features: Vec<f64>,
    pub choice: usize,
    pub behavior_logp: f64,
    pub advantage: f64,
    pub reference: Vec<f64>,
}

pub fn prepare_samples(batch: &RolloutBatch, adv: &AdvantageRecords, reference: &ReferenceSnapshot) -> Vec<Sample> {
    let mut out = Vec::new();
    for (i, r) in batch.rollouts.iter().enumerate() {
        for (d, a) in r.action_decisions.iter().zip(&adv.action[i]) {
            out.push(sample_of(d, *a, reference.params()));
        }
        for (d, a) in r.eval_decisions.iter().zip(&adv.eval[i]) {
            out.push(sample_of(d, *a, reference.params()));
        }
    }
    out
}

fn sample_of(d: &Decision, advantage: f64, reference: &PolicyParams) -> Sample {
    Sample {
        head: d.head,
        features: d.features.clone(),
        choice: d.choice,
        behavior_logp: d.behavior_logp,
        advantage,
        reference: head_of(reference, d.head).probs(&d.features),
    }
}

fn head_of(params: &PolicyParams, head: HeadKind) -> &Head {
    match head {
        HeadKind::Action => &params.action_head,
        HeadKind::Eval => &params.eval_head,
    }
}

fn head_of_mut(params: &mut PolicyParams, head: HeadKind) -> &mut Head {
    match head {
        HeadKind::Action => &mut params.action_head,
        HeadKind::Eval => &mut params.eval_head,
    }
}

/// Exact `KL(p || q)` of two categoricals.
pub fn categorical_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pk, _)| **pk > 0.0)
        .map(|(pk, qk)| pk * (pk.ln() - qk.ln()))
        .sum()
}

fn clipped(advantage: f64, ratio: f64, eps: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clip = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if clip < unclipped {
        (clip, true)
    } else {
        (unclipped, false)
    }
}

/// Penalized clipped surrogate, averaged over decisions.
pub fn objective(params: &PolicyParams, samples: &[Sample], cfg: &TrainConfig) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let total: f64 = samples
        .iter()
        .map(|s| {
            let p = head_of(params, s.head).probs(&s.features);
            let ratio = (p[s.choice].ln() - s.behavior_logp).exp();
            clipped(s.advantage, ratio, cfg.clip_epsilon).0 - cfg.beta_kl * categorical_kl(&p, &s.reference)
        })
        .sum();
    total / samples.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpdateReport {
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

/// Analytic gradient of [`objective`], with the diagnostics of the same pass.
pub fn gradient(params: &PolicyParams, samples: &[Sample], cfg: &TrainConfig) -> (PolicyParams, UpdateReport) {
    let mut grad = PolicyParams {
        action_head: Head::zeros(params.action_head.rows, params.action_head.cols),
        eval_head: Head::zeros(params.eval_head.rows, params.eval_head.cols),
    };
    let n = samples.len().max(1) as f64;
    let mut kl_sum = 0.0;
    let mut clipped_count = 0usize;
    for s in samples {
        let head = head_of(params, s.head);
        let p = head.probs(&s.features);
        let ratio = (p[s.choice].ln() - s.behavior_logp).exp();
        let (_, is_clipped) = clipped(s.advantage, ratio, cfg.clip_epsilon);
        clipped_count += usize::from(is_clipped);
        let kl = categorical_kl(&p, &s.reference);
        kl_sum += kl;
        // d/dz of the per-decision objective
        let mut g: Vec<f64> = p
            .iter()
            .zip(&s.reference)
            .map(|(pk, qk)| -cfg.beta_kl * pk * (pk.ln() - qk.ln() - kl))
            .collect();
        if !is_clipped && s.advantage != 0.0 {
            for (k, gk) in g.iter_mut().enumerate() {
                let indicator = if k == s.choice { 1.0 } else { 0.0 };
                *gk += s.advantage * ratio * (indicator - p[k]);
            }
        }
        let out = head_of_mut(&mut grad, s.head);
        let cols = out.cols;
        for (f, &xf) in s.features.iter().enumerate() {
            if xf == 0.0 {
                continue;
            }
            let row = &mut out.weights[f * cols..(f + 1) * cols];
            for (w, gk) in row.iter_mut().zip(&g) {
                *w += xf * gk / n;
            }
        }
    }
    let grad_norm = grad
        .action_head
        .weights
        .iter()
        .chain(&grad.eval_head.weights)
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    let report = UpdateReport {
        mean_kl: kl_sum / n,
        clip_fraction: clipped_count as f64 / n,
        grad_norm,
    };
    (grad, report)
}

/// `epochs_per_batch` gradient-ascent steps on the penalized surrogate.
pub fn ppo_update(
    params: &PolicyParams,
    samples: &[Sample],
    cfg: &TrainConfig,
) -> Result<(PolicyParams, UpdateReport), TrainError> {
    let mut current = params.clone();
    let mut first = None;
    for _ in 0..cfg.epochs_per_batch {
        let (grad, report) = gradient(&current, samples, cfg);
        if !report.grad_norm.is_finite() {
            return Err(TrainError::NonFiniteGradient {
                norm: report.grad_norm,
                mean_kl: report.mean_kl,
                decisions: samples.len(),
            });
        }
        first.get_or_insert(report);
        for (w, g) in current
            .action_head
            .weights
            .iter_mut()
            .chain(current.eval_head.weights.iter_mut())
            .zip(grad.action_head.weights.iter().chain(&grad.eval_head.weights))
        {
            *w += cfg.learning_rate * g;
        }
        current.check_finite()?;
    }
    let report = first.unwrap_or(UpdateReport {
        mean_kl: 0.0,
        clip_fraction: 0.0,
        grad_norm: 0.0,
    });
    Ok((current, report))
}
