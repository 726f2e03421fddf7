//! Two-headed linear softmax policy.
//!
//! The action head scores the command vocabulary from indicator features of
//! what the agent currently sees plus its truncated history. The evaluation
//! head scores the two verdicts `[-1, +1]` for one step of a finished
//! trajectory and may read the suffix; the action head never receives suffix
//! features.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{vocabulary, FeedbackKind, Item, Percept, SubgoalVerb, Task};
use crate::evaluator::{oracle_labels, EvalError, EvaluatorKind, EvaluatorTag, HindsightEvaluator};
use crate::trajectory::{Trajectory, TrajectoryView, Verdict};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("non-finite parameter in the {0} head")]
    NonFinite(&'static str),
    #[error("feature vector has length {got}, head expects {want}")]
    FeatureLength { got: usize, want: usize },
    #[error("unsupported parameter file version {0}")]
    Version(u32),
    #[error("malformed parameter file: {0}")]
    Format(String),
}

pub const NUM_ACTIONS: usize = 24;
pub const NUM_VERDICTS: usize = 2;

// Action feature layout.
const F_BIAS: usize = 0;
const F_KITCHEN: usize = 1;
const F_VISIBLE: usize = 2; // 5 items
const F_HELD: usize = 7; // 5 items
const F_RECIPE_KNOWN: usize = 12;
const F_RECIPE_HAS: usize = 13; // 3 ingredients
const F_PROGRESS: usize = 16; // 0..=5 subgoals done
const F_EXIT: usize = 22; // 4 directions
const F_CLOSED: usize = 26; // 4 directions
const F_LAST: usize = 30; // FeedbackKind::COUNT
const F_RECIPE_VISIBLE: usize = 39; // 3 ingredients
const F_WINDOW_UNPARSED: usize = 42;
const F_NEXT: usize = 43; // chop x3, cook x3, eat
const F_NEXT_HELD: usize = 50;
const F_NEXT_VISIBLE: usize = 51;
const F_NEXT_MISSING: usize = 52;
const F_KNIFE_MISSING: usize = 53;
pub const ACTION_FEATURES: usize = 54;

// Evaluation feature layout.
const E_BIAS: usize = 0;
const E_ORACLE: usize = 1;
const E_ACTION: usize = 2; // NUM_ACTIONS one-hot
const E_SCORED: usize = E_ACTION + NUM_ACTIONS;
const E_SUFFIX_SCORED: usize = E_SCORED + 1;
const E_PARSED: usize = E_SCORED + 2;
const E_SUCCESS: usize = E_SCORED + 3;
pub const EVAL_FEATURES: usize = E_SCORED + 4;

/// Logit margin of the evaluation head's pretrained strategic judgement.
pub const PRIOR_MARGIN: f64 = 3.0;

/// Indicator features for the action head.
pub fn action_features(percept: &Percept, last_feedback: FeedbackKind, history: TrajectoryView<'_>) -> Vec<f64> {
    let mut x = vec![0.0; ACTION_FEATURES];
    x[F_BIAS] = 1.0;
    x[F_KITCHEN] = f64::from(u8::from(percept.in_kitchen));
    for (k, item) in Item::ALL.iter().enumerate() {
        x[F_VISIBLE + k] = f64::from(u8::from(percept.visible_items & item.bit() != 0));
        x[F_HELD + k] = f64::from(u8::from(percept.held_items & item.bit() != 0));
    }
    x[F_RECIPE_KNOWN] = f64::from(u8::from(percept.recipe_known));
    for (k, item) in Item::INGREDIENTS.iter().enumerate() {
        let in_recipe = percept.recipe_mask & item.bit() != 0;
        x[F_RECIPE_HAS + k] = f64::from(u8::from(in_recipe));
        x[F_RECIPE_VISIBLE + k] = f64::from(u8::from(in_recipe && percept.visible_items & item.bit() != 0));
    }
    x[F_PROGRESS + percept.subgoals_done.min(5)] = 1.0;
    for d in 0..4 {
        x[F_EXIT + d] = f64::from(u8::from(percept.exits[d]));
        x[F_CLOSED + d] = f64::from(u8::from(percept.closed_doors[d]));
    }
    x[F_LAST + last_feedback.index()] = 1.0;
    if let Some(goal) = percept.next_subgoal {
        let slot = |verb_offset: usize| {
            goal.target
                .and_then(|t| Item::INGREDIENTS.iter().position(|&i| i == t))
                .map(|k| verb_offset + k)
        };
        let index = match goal.verb {
            SubgoalVerb::Chop => slot(0),
            SubgoalVerb::Cook => slot(3),
            SubgoalVerb::Eat => Some(6),
        };
        if let Some(i) = index {
            x[F_NEXT + i] = 1.0;
        }
        if let Some(target) = goal.target {
            let held = percept.held_items & target.bit() != 0;
            let visible = percept.visible_items & target.bit() != 0;
            x[F_NEXT_HELD] = f64::from(u8::from(held));
            x[F_NEXT_VISIBLE] = f64::from(u8::from(visible));
            x[F_NEXT_MISSING] = f64::from(u8::from(!held && !visible));
        }
        let knife = Item::Knife.bit();
        if goal.verb == SubgoalVerb::Chop && percept.held_items & knife == 0 && percept.visible_items & knife == 0 {
            x[F_KNIFE_MISSING] = 1.0;
        }
    }
    if !history.is_empty() {
        let unparsed = history.steps().iter().filter(|s| !s.parse_ok).count();
        x[F_WINDOW_UNPARSED] = unparsed as f64 / history.len() as f64;
    }
    x
}

/// Hindsight features of step `t`; `oracle` is the strategic label of that step.
pub fn eval_features(trajectory: &Trajectory, t: usize, oracle: Verdict) -> Vec<f64> {
    let steps = trajectory.steps();
    let step = &steps[t];
    let mut x = vec![0.0; EVAL_FEATURES];
    x[E_BIAS] = 1.0;
    x[E_ORACLE] = f64::from(oracle.value());
    if let Some(a) = crate::env::vocabulary_index(&step.action) {
        x[E_ACTION + a] = 1.0;
    }
    x[E_SCORED] = f64::from(u8::from(step.env_score > 0));
    x[E_SUFFIX_SCORED] = f64::from(u8::from(steps[t + 1..].iter().any(|s| s.env_score > 0)));
    x[E_PARSED] = f64::from(u8::from(step.parse_ok));
    x[E_SUCCESS] = f64::from(u8::from(trajectory.total_score() == trajectory.max_score));
    x
}

/// Dense row-major `rows x cols` weight matrix; logits are `x^T W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
}

impl Head {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.cols];
        for (f, &xf) in x.iter().enumerate() {
            if xf == 0.0 {
                continue;
            }
            let row = &self.weights[f * self.cols..(f + 1) * self.cols];
            for (zk, w) in z.iter_mut().zip(row) {
                *zk += xf * w;
            }
        }
        z
    }

    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.weights[row * self.cols + col] = v;
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Lowest index among the maxima.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub action_head: Head,
    pub eval_head: Head,
}

/// Frozen copy of the parameters at the start of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSnapshot(Arc<PolicyParams>);

impl ReferenceSnapshot {
    pub fn of(params: &PolicyParams) -> Self {
        Self(Arc::new(params.clone()))
    }

    pub fn params(&self) -> &PolicyParams {
        &self.0
    }
}

impl PolicyParams {
    pub fn zeros() -> Self {
        Self {
            action_head: Head::zeros(ACTION_FEATURES, NUM_ACTIONS),
            eval_head: Head::zeros(EVAL_FEATURES, NUM_VERDICTS),
        }
    }

    /// Zero action head; evaluation head initialised to reproduce the verdict
    /// distribution of `kind` (a strategic judgement with margin
    /// [`PRIOR_MARGIN`], plus the configured bias on its target action).
    pub fn initial(kind: &EvaluatorKind) -> Self {
        let mut p = Self::zeros();
        let plus = 1;
        match kind.tag {
            EvaluatorTag::Flipped => p.eval_head.set(E_ORACLE, plus, -PRIOR_MARGIN),
            EvaluatorTag::Random => {}
            _ => p.eval_head.set(E_ORACLE, plus, PRIOR_MARGIN),
        }
        if let Some(target) = kind.bias_target.as_deref() {
            let rate = kind.bias_positive_rate.clamp(1e-6, 1.0 - 1e-6);
            for (a, text) in vocabulary().iter().enumerate() {
                if crate::evaluator::action_matches(text, target) {
                    // target actions are never useful, so the oracle term contributes -margin
                    p.eval_head.set(E_ACTION + a, plus, PRIOR_MARGIN + (rate / (1.0 - rate)).ln());
                }
            }
        }
        p
    }

    pub fn check_finite(&self) -> Result<(), PolicyError> {
        if !self.action_head.is_finite() {
            return Err(PolicyError::NonFinite("action"));
        }
        if !self.eval_head.is_finite() {
            return Err(PolicyError::NonFinite("evaluation"));
        }
        Ok(())
    }

    /// Softmax over the command vocabulary.
    pub fn action_dist(&self, features: &[f64]) -> Result<Vec<f64>, PolicyError> {
        if features.len() != ACTION_FEATURES {
            return Err(PolicyError::FeatureLength {
                got: features.len(),
                want: ACTION_FEATURES,
            });
        }
        if !self.action_head.is_finite() {
            return Err(PolicyError::NonFinite("action"));
        }
        Ok(self.action_head.probs(features))
    }

    /// Probability that the evaluation head judges the step positive.
    pub fn eval_dist(&self, features: &[f64]) -> Result<f64, PolicyError> {
        if features.len() != EVAL_FEATURES {
            return Err(PolicyError::FeatureLength {
                got: features.len(),
                want: EVAL_FEATURES,
            });
        }
        if !self.eval_head.is_finite() {
            return Err(PolicyError::NonFinite("evaluation"));
        }
        Ok(self.eval_head.probs(features)[1])
    }

    pub fn to_json(&self) -> String {
        let file = ParamsFile {
            version: PARAMS_VERSION,
            action_head: self.action_head.clone(),
            eval_head: self.eval_head.clone(),
        };
        serde_json::to_string(&file).expect("params serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, PolicyError> {
        let file: ParamsFile = serde_json::from_str(s).map_err(|e| PolicyError::Format(e.to_string()))?;
        if file.version != PARAMS_VERSION {
            return Err(PolicyError::Version(file.version));
        }
        for (name, h, rows, cols) in [
            ("action_head", &file.action_head, ACTION_FEATURES, NUM_ACTIONS),
            ("eval_head", &file.eval_head, EVAL_FEATURES, NUM_VERDICTS),
        ] {
            if h.rows != rows || h.cols != cols || h.weights.len() != rows * cols {
                return Err(PolicyError::Format(format!("{name}: expected {rows}x{cols}")));
            }
        }
        Ok(Self {
            action_head: file.action_head,
            eval_head: file.eval_head,
        })
    }
}

const PARAMS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    version: u32,
    action_head: Head,
    eval_head: Head,
}

/// The evaluation head used as a hindsight evaluator with greedy verdicts.
pub struct LearnedEvaluator<'a> {
    pub params: &'a PolicyParams,
}

impl HindsightEvaluator for LearnedEvaluator<'_> {
    fn evaluate(&self, task: &Task, trajectory: &Trajectory, t: usize) -> Result<Verdict, EvalError> {
        Ok(self.evaluate_all(task, trajectory)?[t])
    }

    fn evaluate_all(&self, task: &Task, trajectory: &Trajectory) -> Result<Vec<Verdict>, EvalError> {
        if !trajectory.is_finalized() {
            return Err(EvalError::NotFinalized);
        }
        let labels = oracle_labels(task, trajectory)?;
        labels
            .into_iter()
            .enumerate()
            .map(|(t, l)| {
                let p = self
                    .params
                    .eval_dist(&eval_features(trajectory, t, l))
                    .map_err(|e| EvalError::Config(e.to_string()))?;
                Ok(Verdict::from_sign(p > 0.5))
            })
            .collect()
    }
}
