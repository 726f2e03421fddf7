//! Deterministic sparse-reward environments: the cooking-quest text grid and
//! enumerable tiny MDPs.

mod oracle;
mod textgrid;
mod tiny_mdp;

use std::sync::Arc;

use thiserror::Error;

pub use oracle::{walkthrough, StrategicOracle};
pub use textgrid::{
    parse_task_id, task_id, vocabulary, vocabulary_index, Difficulty, Direction, Door, EnvFeedback, EnvState,
    FeedbackKind, Item, ItemPlacement, Percept, Room, StateKey, Subgoal, SubgoalVerb, TaskSpec,
    ADMISSIBLE_DEBUG_MARKER, DISTRACTOR_COMMANDS, INVENTORY_ACTION, UNPARSABLE_MESSAGE,
};
pub use tiny_mdp::{MdpTrajectory, TinyMdpSpec, MAX_ACTIONS, MAX_HORIZON, MAX_STATES, MAX_TRAJECTORIES};

use crate::trajectory::{ActionText, Trajectory, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("episode already finished")]
    EpisodeDone,
    #[error("tiny MDP out of enumeration bounds: {0}")]
    OutOfBounds(String),
    #[error("unknown task id `{0}`")]
    UnknownTask(String),
    #[error("replay diverged at step {step}: {detail}")]
    Replay { step: usize, detail: String },
}

/// A generated task together with its oracle, built once and shared.
#[derive(Debug)]
pub struct Task {
    pub id: String,
    pub seed: u64,
    pub difficulty: Difficulty,
    pub spec: TaskSpec,
    pub oracle: StrategicOracle,
}

/// Tasks are fully determined by their id.
impl PartialEq for Task {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}

impl Task {
    pub fn generate(seed: u64, difficulty: Difficulty) -> Arc<Task> {
        let spec = TaskSpec::generate(seed, difficulty);
        let oracle = StrategicOracle::new(&spec);
        Arc::new(Task {
            id: task_id(difficulty, seed),
            seed,
            difficulty,
            spec,
            oracle,
        })
    }

    pub fn from_id(id: &str) -> Result<Arc<Task>, EnvError> {
        let (difficulty, seed) = parse_task_id(id).ok_or_else(|| EnvError::UnknownTask(id.to_owned()))?;
        Ok(Self::generate(seed, difficulty))
    }

    pub fn label(&self, state: &EnvState, action: &ActionText) -> Verdict {
        self.oracle.label(&self.spec, state, action)
    }

    /// States before each step of `trajectory`, recomputed by replaying its
    /// actions. Fails if the logged scores or parse flags disagree.
    pub fn replay_states(&self, trajectory: &Trajectory) -> Result<Vec<EnvState>, EnvError> {
        let (mut state, obs) = self.spec.reset();
        let mut expected_obs = obs.text;
        let mut out = Vec::with_capacity(trajectory.len());
        for (t, step) in trajectory.steps().iter().enumerate() {
            if step.observation.text != expected_obs {
                return Err(EnvError::Replay {
                    step: t,
                    detail: "observation text differs".into(),
                });
            }
            out.push(state);
            let (next, fb) = self.spec.step(&state, &step.action).map_err(|e| EnvError::Replay {
                step: t,
                detail: e.to_string(),
            })?;
            if fb.score_delta != step.env_score || fb.parse_ok != step.parse_ok {
                return Err(EnvError::Replay {
                    step: t,
                    detail: format!(
                        "logged (score {}, parse_ok {}) but environment gives (score {}, parse_ok {})",
                        step.env_score, step.parse_ok, fb.score_delta, fb.parse_ok
                    ),
                });
            }
            expected_obs = fb.text;
            state = next;
        }
        if state.is_done(&self.spec) != trajectory.terminated() {
            return Err(EnvError::Replay {
                step: trajectory.len(),
                detail: "termination flag differs".into(),
            });
        }
        Ok(out)
    }
}
