//! Hindsight evaluators: the strategic oracle and its corruptions.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, Task};
use crate::trajectory::{ActionText, Trajectory, Verdict};

pub const DEFAULT_BIAS_RATE: f64 = 0.81;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("trajectory is not finalized; hindsight evaluation needs the full episode")]
    NotFinalized,
    #[error("step {t} out of range for trajectory of length {len}")]
    StepOutOfRange { t: usize, len: usize },
    #[error("invalid evaluator config: {0}")]
    Config(String),
    #[error("the learned evaluator needs policy parameters")]
    NeedsParams,
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluatorTag {
    Oracle,
    Biased,
    Random,
    Flipped,
    Learned,
}

/// Evaluator configuration, as it appears under `"evaluator"` in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluatorKind {
    pub tag: EvaluatorTag,
    #[serde(default)]
    pub bias_target: Option<String>,
    #[serde(default = "default_bias_rate")]
    pub bias_positive_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_bias_rate() -> f64 {
    DEFAULT_BIAS_RATE
}

impl EvaluatorKind {
    pub fn oracle() -> Self {
        Self::with_tag(EvaluatorTag::Oracle)
    }

    pub fn flipped() -> Self {
        Self::with_tag(EvaluatorTag::Flipped)
    }

    pub fn random(seed: u64) -> Self {
        Self {
            seed,
            ..Self::with_tag(EvaluatorTag::Random)
        }
    }

    pub fn biased(target: &str, rate: f64, seed: u64) -> Self {
        Self {
            tag: EvaluatorTag::Biased,
            bias_target: Some(target.to_owned()),
            bias_positive_rate: rate,
            seed,
        }
    }

    /// Self-evaluation by the policy's own evaluation head. A bias target,
    /// when given, describes the head's initial preference.
    pub fn learned(bias_target: Option<&str>, rate: f64) -> Self {
        Self {
            tag: EvaluatorTag::Learned,
            bias_target: bias_target.map(str::to_owned),
            bias_positive_rate: rate,
            seed: 0,
        }
    }

    fn with_tag(tag: EvaluatorTag) -> Self {
        Self {
            tag,
            bias_target: None,
            bias_positive_rate: DEFAULT_BIAS_RATE,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if !(0.0..=1.0).contains(&self.bias_positive_rate) {
            return Err(EvalError::Config(format!(
                "bias_positive_rate {} outside [0, 1]",
                self.bias_positive_rate
            )));
        }
        if self.tag == EvaluatorTag::Biased && self.bias_target.as_deref().is_none_or(str::is_empty) {
            return Err(EvalError::Config("biased evaluator requires bias_target".into()));
        }
        Ok(())
    }

    pub fn matches_target(&self, action: &ActionText) -> bool {
        self.bias_target
            .as_deref()
            .is_some_and(|target| action_matches(action, target))
    }
}

/// Whole-word prefix match: `"take"` matches `"take knife"` but not `"takeout"`.
pub fn action_matches(action: &ActionText, pattern: &str) -> bool {
    let a = action.as_str();
    a == pattern || a.strip_prefix(pattern).is_some_and(|rest| rest.starts_with(' '))
}

/// Uniform draw in `[0, 1)` addressed by `(seed, task, step)`; independent of
/// evaluation order.
pub fn counter_uniform(seed: u64, task_id: &str, t: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(task_id.as_bytes()));
    rng.set_word_pos(2 * t as u128);
    rng.random::<f64>()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Something that can judge step `t` of a finished trajectory.
pub trait HindsightEvaluator {
    fn evaluate(&self, task: &Task, trajectory: &Trajectory, t: usize) -> Result<Verdict, EvalError>;

    fn evaluate_all(&self, task: &Task, trajectory: &Trajectory) -> Result<Vec<Verdict>, EvalError> {
        (0..trajectory.len())
            .map(|t| self.evaluate(task, trajectory, t))
            .collect()
    }
}

fn check_hindsight(trajectory: &Trajectory, t: usize) -> Result<(), EvalError> {
    if !trajectory.is_finalized() {
        return Err(EvalError::NotFinalized);
    }
    if t >= trajectory.len() {
        return Err(EvalError::StepOutOfRange {
            t,
            len: trajectory.len(),
        });
    }
    Ok(())
}

impl EvaluatorKind {
    fn verdict_with_oracle(&self, task: &Task, trajectory: &Trajectory, t: usize, oracle: Verdict) -> Result<Verdict, EvalError> {
        let action = &trajectory.steps()[t].action;
        Ok(match self.tag {
            EvaluatorTag::Oracle => oracle,
            EvaluatorTag::Flipped => oracle.negate(),
            EvaluatorTag::Random => Verdict::from_sign(counter_uniform(self.seed, &task.id, t) < 0.5),
            EvaluatorTag::Biased => {
                if self.matches_target(action) {
                    Verdict::from_sign(counter_uniform(self.seed, &task.id, t) < self.bias_positive_rate)
                } else {
                    oracle
                }
            }
            EvaluatorTag::Learned => return Err(EvalError::NeedsParams),
        })
    }
}

impl HindsightEvaluator for EvaluatorKind {
    fn evaluate(&self, task: &Task, trajectory: &Trajectory, t: usize) -> Result<Verdict, EvalError> {
        check_hindsight(trajectory, t)?;
        if self.tag == EvaluatorTag::Learned {
            return Err(EvalError::NeedsParams);
        }
        let states = task.replay_states(trajectory)?;
        let oracle = task.label(&states[t], &trajectory.steps()[t].action);
        self.verdict_with_oracle(task, trajectory, t, oracle)
    }

    fn evaluate_all(&self, task: &Task, trajectory: &Trajectory) -> Result<Vec<Verdict>, EvalError> {
        check_hindsight(trajectory, 0)?;
        if self.tag == EvaluatorTag::Learned {
            return Err(EvalError::NeedsParams);
        }
        let labels = oracle_labels(task, trajectory)?;
        labels
            .into_iter()
            .enumerate()
            .map(|(t, l)| self.verdict_with_oracle(task, trajectory, t, l))
            .collect()
    }
}

/// Oracle label of every step, from one replay of the trajectory.
pub fn oracle_labels(task: &Task, trajectory: &Trajectory) -> Result<Vec<Verdict>, EvalError> {
    let states = task.replay_states(trajectory)?;
    Ok(states
        .iter()
        .zip(trajectory.steps())
        .map(|(s, step)| task.label(s, &step.action))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluatorStats {
    pub n_verdicts: usize,
    pub accuracy_vs_oracle: f64,
    pub positive_rate: f64,
}

impl EvaluatorStats {
    /// Tallies `(verdict, oracle label)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Verdict, Verdict)>) -> Option<Self> {
        let (mut n, mut agree, mut pos) = (0usize, 0usize, 0usize);
        for (v, o) in pairs {
            n += 1;
            agree += usize::from(v == o);
            pos += usize::from(v.is_positive());
        }
        (n > 0).then(|| EvaluatorStats {
            n_verdicts: n,
            accuracy_vs_oracle: agree as f64 / n as f64,
            positive_rate: pos as f64 / n as f64,
        })
    }
}

/// Agreement with the oracle and positive rate over a labelled dataset.
pub fn accuracy(
    evaluator: &impl HindsightEvaluator,
    dataset: &[(Arc<Task>, Trajectory)],
) -> Result<EvaluatorStats, EvalError> {
    let mut pairs = Vec::new();
    for (task, traj) in dataset {
        let verdicts = evaluator.evaluate_all(task, traj)?;
        let labels = oracle_labels(task, traj)?;
        pairs.extend(verdicts.into_iter().zip(labels));
    }
    EvaluatorStats::from_pairs(pairs).ok_or_else(|| EvalError::Config("empty dataset".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{vocabulary, Difficulty};
    use crate::trajectory::{Observation, Step};
    use proptest::prelude::*;

    /// Plays `actions` (cycled) until the cap or success.
    fn play(task: &Task, actions: &[usize], cap: usize) -> Trajectory {
        let mut traj = Trajectory::new(task.id.clone(), task.seed, task.spec.max_score, cap).unwrap();
        let (mut s, mut obs) = task.spec.reset();
        for k in 0..cap {
            let a = vocabulary()[actions[k % actions.len()]].clone();
            let (n, fb) = task.spec.step(&s, &a).unwrap();
            let step = Step::new(Observation::new(obs.text.clone(), k).unwrap(), a, fb.score_delta, fb.parse_ok).unwrap();
            traj.append_step(step).unwrap();
            obs = Observation::new(fb.text, k + 1).unwrap();
            s = n;
            if fb.done {
                traj.terminate();
                break;
            }
        }
        traj
    }

    fn dataset(n_tasks: u64, pattern: &[usize]) -> Vec<(Arc<Task>, Trajectory)> {
        (0..n_tasks)
            .map(|seed| {
                let task = Task::generate(seed, Difficulty::Easy);
                let traj = play(&task, pattern, 20);
                (task, traj)
            })
            .collect()
    }

    #[test]
    fn oracle_flags_reopening_an_open_door() {
        // find a task whose only door starts open
        let task = (0..50)
            .map(|s| Task::generate(s, Difficulty::Easy))
            .find(|t| !t.spec.doors[0].closed)
            .unwrap();
        let dir = task.spec.doors[0].direction;
        let open = vocabulary().iter().position(|a| a.as_str() == format!("open {} door", dir.name())).unwrap();
        let traj = play(&task, &[open], 3);
        let v = EvaluatorKind::oracle().evaluate(&task, &traj, 0).unwrap();
        assert_eq!(v, Verdict::Negative);
    }

    #[test]
    fn hindsight_contract_enforced() {
        let task = Task::generate(1, Difficulty::Easy);
        let mut traj = Trajectory::new(task.id.clone(), 1, 3, 20).unwrap();
        let (_, obs) = task.spec.reset();
        traj.append_step(Step::new(obs, vocabulary()[0].clone(), 0, true).unwrap()).unwrap();
        assert_eq!(EvaluatorKind::oracle().evaluate(&task, &traj, 0), Err(EvalError::NotFinalized));
    }

    #[test]
    fn biased_requires_target() {
        let mut k = EvaluatorKind::biased("inventory", 0.81, 1);
        assert!(k.validate().is_ok());
        k.bias_target = None;
        assert!(k.validate().is_err());
    }

    #[test]
    fn target_matching() {
        let a = |s: &str| ActionText::new(s).unwrap();
        assert!(action_matches(&a("inventory"), "inventory"));
        assert!(action_matches(&a("take knife"), "take"));
        assert!(!action_matches(&a("takeout"), "take"));
    }

    #[test]
    fn oracle_and_flipped_accuracy() {
        let data = dataset(20, &[10, 11, 4, 5, 12, 13, 14, 0, 1]);
        let o = accuracy(&EvaluatorKind::oracle(), &data).unwrap();
        let f = accuracy(&EvaluatorKind::flipped(), &data).unwrap();
        assert_eq!(o.accuracy_vs_oracle, 1.0);
        assert_eq!(f.accuracy_vs_oracle, 0.0);
        assert_eq!(o.accuracy_vs_oracle + f.accuracy_vs_oracle, 1.0);
        assert!(accuracy(&EvaluatorKind::oracle(), &[]).is_err());
    }

    #[test]
    fn random_stream_is_reproducible() {
        let data = dataset(1, &[0, 1, 2, 3, 4]);
        let (task, traj) = &data[0];
        let short = play(task, &[0, 1, 2, 3, 4], 5);
        let r = EvaluatorKind::random(99);
        let a = r.evaluate_all(task, &short).unwrap();
        let b = r.evaluate_all(task, &short).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, b);
        // order independence: evaluating step 3 alone agrees with the batch
        assert_eq!(r.evaluate(task, &short, 3).unwrap(), a[3]);
        assert_eq!(r.evaluate_all(task, traj).unwrap()[..5], a[..]);
    }

    #[test]
    fn biased_rate_and_random_accuracy() {
        let inv = crate::env::INVENTORY_ACTION;
        let data = dataset(500, &[inv]);
        let biased = EvaluatorKind::biased("inventory", 0.81, 7);
        let stats = accuracy(&biased, &data).unwrap();
        assert_eq!(stats.n_verdicts, 10_000);
        assert!((stats.positive_rate - 0.81).abs() <= 0.02, "{}", stats.positive_rate);

        let random = accuracy(&EvaluatorKind::random(7), &data).unwrap();
        assert!((random.accuracy_vs_oracle - 0.5).abs() <= 0.02, "{}", random.accuracy_vs_oracle);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn flipped_negates_and_biased_defers(seed in 0u64..500, pattern in prop::collection::vec(0usize..24, 1..8)) {
            let task = Task::generate(seed, Difficulty::Easy);
            let traj = play(&task, &pattern, 20);
            let oracle = EvaluatorKind::oracle().evaluate_all(&task, &traj).unwrap();
            let flipped = EvaluatorKind::flipped().evaluate_all(&task, &traj).unwrap();
            let biased_kind = EvaluatorKind::biased("inventory", 0.81, seed);
            let biased = biased_kind.evaluate_all(&task, &traj).unwrap();
            for t in 0..traj.len() {
                prop_assert_eq!(flipped[t], oracle[t].negate());
                if !biased_kind.matches_target(&traj.steps()[t].action) {
                    prop_assert_eq!(biased[t], oracle[t]);
                }
                prop_assert_eq!(biased_kind.evaluate(&task, &traj, t).unwrap(), biased[t]);
            }
        }
    }
}
