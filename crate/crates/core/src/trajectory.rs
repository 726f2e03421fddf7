//! Trajectory data model and its JSONL log codec.
//!
//! A trajectory is the ordered list of `(observation, action, score, verdict)`
//! steps an agent produced on one task. Steps carry global indices so that a
//! truncated history is a plain slice view over the same steps.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default episode cap.
pub const DEFAULT_HORIZON_CAP: usize = 20;
/// Longest accepted command string.
pub const MAX_ACTION_LEN: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrajectoryError {
    #[error("invalid action text: {0}")]
    InvalidAction(String),
    #[error("observation text must be non-empty")]
    EmptyObservation,
    #[error("cannot append to a terminated trajectory")]
    Terminated,
    #[error("trajectory is full (horizon cap {0})")]
    Full(usize),
    #[error("step {index}: score {score} recorded on an unparsed command")]
    ScoreWithoutParse { index: usize, score: u32 },
    #[error("total score {total} exceeds max score {max}")]
    ScoreOverflow { total: u32, max: u32 },
    #[error("history window must be at least 1")]
    ZeroWindow,
    #[error("{0}")]
    Invalid(String),
}

/// A short single-line command.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionText(String);

impl ActionText {
    pub fn new(text: impl Into<String>) -> Result<Self, TrajectoryError> {
        let text = text.into();
        if text.is_empty() {
            return Err(TrajectoryError::InvalidAction("empty".into()));
        }
        if text.contains('\n') || text.contains('\r') {
            return Err(TrajectoryError::InvalidAction("contains a newline".into()));
        }
        if text.chars().count() > MAX_ACTION_LEN {
            return Err(TrajectoryError::InvalidAction(format!(
                "longer than {MAX_ACTION_LEN} characters"
            )));
        }
        Ok(Self(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ActionText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub text: String,
    pub step_index: usize,
}

impl Observation {
    pub fn new(text: impl Into<String>, step_index: usize) -> Result<Self, TrajectoryError> {
        let text = text.into();
        if text.is_empty() {
            return Err(TrajectoryError::EmptyObservation);
        }
        Ok(Self { text, step_index })
    }
}

/// Binary hindsight verdict on one action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Negative,
    Positive,
}

impl Verdict {
    pub fn from_sign(positive: bool) -> Self {
        if positive {
            Verdict::Positive
        } else {
            Verdict::Negative
        }
    }

    pub fn from_value(v: i64) -> Option<Self> {
        match v {
            1 => Some(Verdict::Positive),
            -1 => Some(Verdict::Negative),
            _ => None,
        }
    }

    pub fn value(self) -> i8 {
        match self {
            Verdict::Positive => 1,
            Verdict::Negative => -1,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Verdict::Positive
    }

    pub fn negate(self) -> Self {
        match self {
            Verdict::Positive => Verdict::Negative,
            Verdict::Negative => Verdict::Positive,
        }
    }
}

/// One decision: the observation the agent acted on, its command, and the
/// environment's raw score for it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub observation: Observation,
    pub action: ActionText,
    pub env_score: u32,
    pub verdict: Option<Verdict>,
    pub parse_ok: bool,
}

impl Step {
    pub fn new(
        observation: Observation,
        action: ActionText,
        env_score: u32,
        parse_ok: bool,
    ) -> Result<Self, TrajectoryError> {
        if !parse_ok && env_score != 0 {
            return Err(TrajectoryError::ScoreWithoutParse {
                index: observation.step_index,
                score: env_score,
            });
        }
        Ok(Self {
            observation,
            action,
            env_score,
            verdict: None,
            parse_ok,
        })
    }

    pub fn index(&self) -> usize {
        self.observation.step_index
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub task_id: String,
    pub seed: u64,
    steps: Vec<Step>,
    pub max_score: u32,
    terminated: bool,
    pub horizon_cap: usize,
}

impl Trajectory {
    pub fn new(
        task_id: impl Into<String>,
        seed: u64,
        max_score: u32,
        horizon_cap: usize,
    ) -> Result<Self, TrajectoryError> {
        if max_score == 0 {
            return Err(TrajectoryError::Invalid("max_score must be positive".into()));
        }
        if horizon_cap == 0 {
            return Err(TrajectoryError::Invalid("horizon_cap must be positive".into()));
        }
        Ok(Self {
            task_id: task_id.into(),
            seed,
            steps: Vec::new(),
            max_score,
            terminated: false,
            horizon_cap,
        })
    }

    /// Appends a step, assigning it the next global index.
    pub fn append_step(&mut self, mut step: Step) -> Result<(), TrajectoryError> {
        if self.terminated {
            return Err(TrajectoryError::Terminated);
        }
        if self.steps.len() >= self.horizon_cap {
            return Err(TrajectoryError::Full(self.horizon_cap));
        }
        let index = self.steps.len();
        if !step.parse_ok && step.env_score != 0 {
            return Err(TrajectoryError::ScoreWithoutParse {
                index,
                score: step.env_score,
            });
        }
        let total = self.total_score() + step.env_score;
        if total > self.max_score {
            return Err(TrajectoryError::ScoreOverflow {
                total,
                max: self.max_score,
            });
        }
        step.observation.step_index = index;
        self.steps.push(step);
        Ok(())
    }

    /// Marks the episode as ended by the environment.
    pub fn terminate(&mut self) {
        self.terminated = true;
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }

    /// A trajectory is final once the environment ended it or the cap is hit.
    /// Only final trajectories may be evaluated in hindsight.
    pub fn is_finalized(&self) -> bool {
        !self.steps.is_empty() && (self.terminated || self.steps.len() == self.horizon_cap)
    }

    pub fn total_score(&self) -> u32 {
        self.steps.iter().map(|s| s.env_score).sum()
    }

    pub fn scores(&self) -> Vec<u32> {
        self.steps.iter().map(|s| s.env_score).collect()
    }

    /// Returns a copy with the given verdicts written onto the steps.
    pub fn with_verdicts(&self, verdicts: &[Verdict]) -> Result<Self, TrajectoryError> {
        if verdicts.len() != self.steps.len() {
            return Err(TrajectoryError::Invalid(format!(
                "{} verdicts for {} steps",
                verdicts.len(),
                self.steps.len()
            )));
        }
        let mut out = self.clone();
        for (step, v) in out.steps.iter_mut().zip(verdicts) {
            step.verdict = Some(*v);
        }
        Ok(out)
    }

    pub fn verdicts(&self) -> Option<Vec<Verdict>> {
        self.steps.iter().map(|s| s.verdict).collect()
    }

    /// View over the most recent `window` steps.
    pub fn truncate_history(&self, window: usize) -> Result<TrajectoryView<'_>, TrajectoryError> {
        if window == 0 {
            return Err(TrajectoryError::ZeroWindow);
        }
        let start = self.steps.len().saturating_sub(window);
        Ok(TrajectoryView {
            steps: &self.steps[start..],
        })
    }

    /// Checks every structural invariant; used after decoding.
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if self.max_score == 0 {
            return Err(TrajectoryError::Invalid("max_score must be positive".into()));
        }
        if self.steps.is_empty() || self.steps.len() > self.horizon_cap {
            return Err(TrajectoryError::Invalid(format!(
                "length {} outside 1..={}",
                self.steps.len(),
                self.horizon_cap
            )));
        }
        for (i, step) in self.steps.iter().enumerate() {
            if step.observation.step_index != i {
                return Err(TrajectoryError::Invalid(format!(
                    "step {i} carries index {}",
                    step.observation.step_index
                )));
            }
            if !step.parse_ok && step.env_score != 0 {
                return Err(TrajectoryError::ScoreWithoutParse {
                    index: i,
                    score: step.env_score,
                });
            }
        }
        let total = self.total_score();
        if total > self.max_score {
            return Err(TrajectoryError::ScoreOverflow {
                total,
                max: self.max_score,
            });
        }
        Ok(())
    }
}

/// Borrowed window over the tail of a trajectory. Step indices stay global.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryView<'a> {
    steps: &'a [Step],
}

impl<'a> TrajectoryView<'a> {
    pub fn steps(&self) -> &'a [Step] {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn first_index(&self) -> Option<usize> {
        self.steps.first().map(Step::index)
    }

    pub fn last(&self) -> Option<&'a Step> {
        self.steps.last()
    }
}

/// Reward streams as they appear in a log line.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedRewards {
    pub r_e: Vec<f64>,
    pub r_p: Vec<i8>,
    pub r_c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLogRecord {
    pub trajectory: Trajectory,
    pub rewards: Option<LoggedRewards>,
    pub run_label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("empty line")]
    Empty,
    #[error("malformed record: {0}")]
    Syntax(String),
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
}

impl DecodeError {
    fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        DecodeError::Field {
            field: field.into(),
            message: message.into(),
        }
    }
}

// Field order here is the wire order.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRecord {
    task_id: String,
    seed: u64,
    horizon_cap: usize,
    max_score: u32,
    terminated: bool,
    steps: Vec<WireStep>,
    #[serde(default)]
    rewards: Option<WireRewards>,
    run_label: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireStep {
    i: usize,
    obs: String,
    act: String,
    score: u32,
    verdict: Option<i64>,
    parse_ok: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct WireRewards {
    rE: Vec<f64>,
    rP: Vec<i8>,
    rC: f64,
}

/// Encodes a record as one JSONL line (no trailing newline).
pub fn encode_record(record: &TrajectoryLogRecord) -> String {
    let t = &record.trajectory;
    let wire = WireRecord {
        task_id: t.task_id.clone(),
        seed: t.seed,
        horizon_cap: t.horizon_cap,
        max_score: t.max_score,
        terminated: t.terminated,
        steps: t
            .steps
            .iter()
            .map(|s| WireStep {
                i: s.observation.step_index,
                obs: s.observation.text.clone(),
                act: s.action.as_str().to_owned(),
                score: s.env_score,
                verdict: s.verdict.map(|v| i64::from(v.value())),
                parse_ok: s.parse_ok,
            })
            .collect(),
        rewards: record.rewards.as_ref().map(|r| WireRewards {
            rE: r.r_e.clone(),
            rP: r.r_p.clone(),
            rC: r.r_c,
        }),
        run_label: record.run_label.clone(),
    };
    // Serialization of these plain types cannot fail.
    serde_json::to_string(&wire).expect("record serializes")
}

pub fn decode_record(line: &str) -> Result<TrajectoryLogRecord, DecodeError> {
    let line = line.trim_end_matches(['\n', '\r']);
    if line.trim().is_empty() {
        return Err(DecodeError::Empty);
    }
    let wire: WireRecord =
        serde_json::from_str(line).map_err(|e| DecodeError::Syntax(e.to_string()))?;
    if wire.max_score == 0 {
        return Err(DecodeError::field("max_score", "must be positive"));
    }
    if wire.horizon_cap == 0 {
        return Err(DecodeError::field("horizon_cap", "must be positive"));
    }
    let mut steps = Vec::with_capacity(wire.steps.len());
    for (k, ws) in wire.steps.into_iter().enumerate() {
        let path = |f: &str| format!("steps[{k}].{f}");
        if ws.i != k {
            return Err(DecodeError::field(path("i"), format!("expected {k}, found {}", ws.i)));
        }
        let observation =
            Observation::new(ws.obs, ws.i).map_err(|e| DecodeError::field(path("obs"), e.to_string()))?;
        let action =
            ActionText::new(ws.act).map_err(|e| DecodeError::field(path("act"), e.to_string()))?;
        let verdict = match ws.verdict {
            None => None,
            Some(v) => Some(
                Verdict::from_value(v)
                    .ok_or_else(|| DecodeError::field(path("verdict"), "verdict out of {-1,+1}"))?,
            ),
        };
        if !ws.parse_ok && ws.score != 0 {
            return Err(DecodeError::field(
                path("score"),
                "non-zero score on an unparsed command",
            ));
        }
        steps.push(Step {
            observation,
            action,
            env_score: ws.score,
            verdict,
            parse_ok: ws.parse_ok,
        });
    }
    let trajectory = Trajectory {
        task_id: wire.task_id,
        seed: wire.seed,
        steps,
        max_score: wire.max_score,
        terminated: wire.terminated,
        horizon_cap: wire.horizon_cap,
    };
    trajectory
        .validate()
        .map_err(|e| DecodeError::field("steps", e.to_string()))?;
    let rewards = match wire.rewards {
        None => None,
        Some(r) => {
            let n = trajectory.len();
            if r.rE.len() != n {
                return Err(DecodeError::field("rewards.rE", format!("length {} != {n}", r.rE.len())));
            }
            if r.rP.len() != n {
                return Err(DecodeError::field("rewards.rP", format!("length {} != {n}", r.rP.len())));
            }
            if r.rE.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(DecodeError::field("rewards.rE", "value outside [-1, 1]"));
            }
            if r.rP.iter().any(|v| !(-1..=1).contains(v)) {
                return Err(DecodeError::field("rewards.rP", "value outside {-1, 0, +1}"));
            }
            if !(-1.0..=1.0).contains(&r.rC) {
                return Err(DecodeError::field("rewards.rC", "value outside [-1, 1]"));
            }
            Some(LoggedRewards {
                r_e: r.rE,
                r_p: r.rP,
                r_c: r.rC,
            })
        }
    };
    Ok(TrajectoryLogRecord {
        trajectory,
        rewards,
        run_label: wire.run_label,
    })
}
