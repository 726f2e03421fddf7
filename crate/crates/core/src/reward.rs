//! The three reward streams and their routing to the two policy heads.
//!
//! * environmental `r_E`: suffix-averaged raw scores rescaled to `[-1, 1]`;
//! * process `r_P`: one ±1 hindsight verdict per step;
//! * calibration `r_C`: one value per trajectory, scoring how well the
//!   positive-verdict rate tracks the actual completion fraction.
//!
//! The action head is paid `(r_E + r_P) / 2` per step. The evaluation head is
//! paid `r_C` on each of its decisions and never sees `r_E` or `r_P`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Task;
use crate::evaluator::{EvalError, HindsightEvaluator};
use crate::trajectory::{LoggedRewards, Trajectory, Verdict};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("empty trajectory")]
    Empty,
    #[error("trajectory is not finalized")]
    NotFinalized,
    #[error("step {0} has no verdict")]
    MissingVerdict(usize),
    #[error("{got} process rewards for {len} steps")]
    LengthMismatch { got: usize, len: usize },
    #[error("max score must be positive")]
    ZeroMaxScore,
    #[error("evaluator failed: {0}")]
    Evaluator(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// All three streams.
    Mise,
    /// Process rewards without calibration.
    Prm,
    /// Shaped environmental reward only.
    PpoOnly,
    /// Terminal-only environmental reward.
    Raw,
}

impl RewardMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RewardMode::Mise => "mise",
            RewardMode::Prm => "prm",
            RewardMode::PpoOnly => "ppo_only",
            RewardMode::Raw => "raw",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [RewardMode::Mise, RewardMode::Prm, RewardMode::PpoOnly, RewardMode::Raw]
            .into_iter()
            .find(|m| m.as_str() == s)
    }
}

/// Score units per subgoal; every subgoal is worth one point.
const SCORE_PER_SUBGOAL: f64 = 1.0;

/// `r_E[j] = -1 + 2 * mean(s[j..])`.
pub fn env_step_rewards(trajectory: &Trajectory) -> Result<Vec<f64>, RewardError> {
    if trajectory.is_empty() {
        return Err(RewardError::Empty);
    }
    let scores = trajectory.scores();
    let n = scores.len();
    let mut out = vec![0.0; n];
    let mut suffix = 0.0;
    for j in (0..n).rev() {
        suffix += f64::from(scores[j]) / SCORE_PER_SUBGOAL;
        out[j] = -1.0 + 2.0 * (suffix / (n - j) as f64);
    }
    Ok(out)
}

/// Terminal-only variant: zeros, then `-1 + 2 * total / max_score` on the last step.
pub fn env_step_rewards_raw(trajectory: &Trajectory) -> Result<Vec<f64>, RewardError> {
    if trajectory.is_empty() {
        return Err(RewardError::Empty);
    }
    let mut out = vec![0.0; trajectory.len()];
    let frac = f64::from(trajectory.total_score()) / f64::from(trajectory.max_score);
    *out.last_mut().expect("non-empty") = -1.0 + 2.0 * frac;
    Ok(out)
}

/// Hindsight verdict for every step, written back onto a copy of the trajectory.
pub fn process_rewards(
    task: &Task,
    trajectory: &Trajectory,
    evaluator: &impl HindsightEvaluator,
) -> Result<(Vec<Verdict>, Trajectory), RewardError> {
    if !trajectory.is_finalized() {
        return Err(RewardError::NotFinalized);
    }
    let verdicts = evaluator.evaluate_all(task, trajectory)?;
    let with = trajectory
        .with_verdicts(&verdicts)
        .map_err(|_| RewardError::LengthMismatch {
            got: verdicts.len(),
            len: trajectory.len(),
        })?;
    Ok((verdicts, with))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationInputs {
    /// Completion fraction `total score / max score`.
    pub p_real: f64,
    /// Fraction of steps judged positive.
    pub p_self_eval: f64,
}

impl CalibrationInputs {
    pub fn new(p_real: f64, p_self_eval: f64) -> Self {
        Self {
            p_real: p_real.clamp(0.0, 1.0),
            p_self_eval: p_self_eval.clamp(0.0, 1.0),
        }
    }
}

pub fn calibration_inputs(trajectory: &Trajectory, verdicts: &[Verdict]) -> Result<CalibrationInputs, RewardError> {
    if trajectory.max_score == 0 {
        return Err(RewardError::ZeroMaxScore);
    }
    if trajectory.is_empty() {
        return Err(RewardError::Empty);
    }
    if verdicts.len() != trajectory.len() {
        return Err(RewardError::LengthMismatch {
            got: verdicts.len(),
            len: trajectory.len(),
        });
    }
    let positives = verdicts.iter().filter(|v| v.is_positive()).count();
    Ok(CalibrationInputs::new(
        f64::from(trajectory.total_score()) / f64::from(trajectory.max_score),
        positives as f64 / verdicts.len() as f64,
    ))
}

/// `clip(1.2 - 2|p_real - p_self|, 0, 1) * 2 - 1`: +1 within 0.1, -1 beyond 0.6.
pub fn calibration_reward(inputs: CalibrationInputs) -> f64 {
    let gap = (inputs.p_real - inputs.p_self_eval).abs();
    (1.2 - 2.0 * gap).clamp(0.0, 1.0) * 2.0 - 1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardVector {
    pub r_e: Vec<f64>,
    pub r_e_raw: Vec<u32>,
    /// ±1 verdicts, or zeros in modes that drop process rewards.
    pub r_p: Vec<i8>,
    pub r_c: f64,
    pub combined_action: Vec<f64>,
    pub combined_eval: Vec<f64>,
}

impl RewardVector {
    /// Builds the vector from a trajectory whose steps already carry verdicts.
    pub fn from_judged(trajectory: &Trajectory, mode: RewardMode) -> Result<Self, RewardError> {
        if trajectory.is_empty() {
            return Err(RewardError::Empty);
        }
        let verdicts: Vec<Verdict> = trajectory
            .steps()
            .iter()
            .enumerate()
            .map(|(t, s)| s.verdict.ok_or(RewardError::MissingVerdict(t)))
            .collect::<Result<_, _>>()?;
        let n = trajectory.len();
        let r_e_raw = trajectory.scores();
        let shaped = env_step_rewards(trajectory)?;
        Ok(match mode {
            RewardMode::Mise | RewardMode::Prm => {
                let r_p: Vec<i8> = verdicts.iter().map(|v| v.value()).collect();
                let r_c = if mode == RewardMode::Mise {
                    calibration_reward(calibration_inputs(trajectory, &verdicts)?)
                } else {
                    0.0
                };
                let combined_action = shaped
                    .iter()
                    .zip(&r_p)
                    .map(|(e, p)| (e + f64::from(*p)) / 2.0)
                    .collect();
                RewardVector {
                    r_e: shaped,
                    r_e_raw,
                    r_p,
                    r_c,
                    combined_action,
                    combined_eval: vec![r_c; n],
                }
            }
            RewardMode::PpoOnly => RewardVector {
                combined_action: shaped.clone(),
                r_e: shaped,
                r_e_raw,
                r_p: vec![0; n],
                r_c: 0.0,
                combined_eval: vec![0.0; n],
            },
            RewardMode::Raw => {
                let raw = env_step_rewards_raw(trajectory)?;
                RewardVector {
                    combined_action: raw.clone(),
                    r_e: raw,
                    r_e_raw,
                    r_p: vec![0; n],
                    r_c: 0.0,
                    combined_eval: vec![0.0; n],
                }
            }
        })
    }

    pub fn to_logged(&self) -> LoggedRewards {
        LoggedRewards {
            r_e: self.r_e.clone(),
            r_p: self.r_p.clone(),
            r_c: self.r_c,
        }
    }

    pub fn matches_logged(&self, logged: &LoggedRewards) -> bool {
        // bit-exact comparison
        self.r_e.len() == logged.r_e.len()
            && self.r_e.iter().zip(&logged.r_e).all(|(a, b)| a.to_bits() == b.to_bits())
            && self.r_p == logged.r_p
            && self.r_c.to_bits() == logged.r_c.to_bits()
    }
}

/// Evaluates every step in hindsight, then assembles the reward vector.
pub fn assemble_reward_vector(
    task: &Task,
    trajectory: &Trajectory,
    evaluator: &impl HindsightEvaluator,
    mode: RewardMode,
) -> Result<(RewardVector, Trajectory), RewardError> {
    let (_, judged) = process_rewards(task, trajectory, evaluator)?;
    let rewards = RewardVector::from_judged(&judged, mode)?;
    Ok((rewards, judged))
}
