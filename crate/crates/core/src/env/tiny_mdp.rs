//! Tiny finite MDPs small enough to enumerate every trajectory.

use serde::{Deserialize, Serialize};

use super::EnvError;

pub const MAX_STATES: usize = 6;
pub const MAX_ACTIONS: usize = 4;
pub const MAX_HORIZON: usize = 4;
pub const MAX_TRAJECTORIES: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyMdpSpec {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub start_state: usize,
    /// `transitions[s][a][s']`
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `scores[s][a][s']`
    pub scores: Vec<Vec<Vec<u32>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MdpTrajectory {
    /// `horizon + 1` visited states, starting with the start state.
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub score: u32,
}

impl TinyMdpSpec {
    /// Deterministic MDP from a successor table `next[s][a]`, zero scores.
    pub fn deterministic(next: &[Vec<usize>], horizon: usize, start_state: usize) -> Self {
        let num_states = next.len();
        let num_actions = next.first().map_or(0, Vec::len);
        let transitions = next
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&n| (0..num_states).map(|k| if k == n { 1.0 } else { 0.0 }).collect())
                    .collect()
            })
            .collect();
        let scores = vec![vec![vec![0; num_states]; num_actions]; num_states];
        Self {
            num_states,
            num_actions,
            horizon,
            start_state,
            transitions,
            scores,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::OutOfBounds(m));
        if self.num_states == 0 || self.num_states > MAX_STATES {
            return bad(format!("num_states {} outside 1..={MAX_STATES}", self.num_states));
        }
        if self.num_actions == 0 || self.num_actions > MAX_ACTIONS {
            return bad(format!("num_actions {} outside 1..={MAX_ACTIONS}", self.num_actions));
        }
        if self.horizon == 0 || self.horizon > MAX_HORIZON {
            return bad(format!("horizon {} outside 1..={MAX_HORIZON}", self.horizon));
        }
        if self.start_state >= self.num_states {
            return bad(format!("start_state {} out of range", self.start_state));
        }
        if self.transitions.len() != self.num_states || self.scores.len() != self.num_states {
            return bad("table row count does not match num_states".into());
        }
        for s in 0..self.num_states {
            if self.transitions[s].len() != self.num_actions || self.scores[s].len() != self.num_actions {
                return bad(format!("state {s}: action count mismatch"));
            }
            for a in 0..self.num_actions {
                let row = &self.transitions[s][a];
                if row.len() != self.num_states || self.scores[s][a].len() != self.num_states {
                    return bad(format!("({s},{a}): successor count mismatch"));
                }
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return bad(format!("({s},{a}): transition row is not a distribution"));
                }
            }
        }
        let paths = self.support_paths();
        if paths > MAX_TRAJECTORIES {
            return bad(format!("{paths} distinct trajectories exceed {MAX_TRAJECTORIES}"));
        }
        Ok(())
    }

    /// Number of action/successor paths with non-zero transition probability.
    fn support_paths(&self) -> usize {
        let mut count = vec![0usize; self.num_states];
        count[self.start_state] = 1;
        for _ in 0..self.horizon {
            let mut next = vec![0usize; self.num_states];
            for (s, &c) in count.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                for a in 0..self.num_actions {
                    for (n, &p) in self.transitions[s][a].iter().enumerate() {
                        if p > 0.0 {
                            next[n] = next[n].saturating_add(c);
                        }
                    }
                }
            }
            count = next;
        }
        count.iter().fold(0usize, |acc, &c| acc.saturating_add(c))
    }

    /// Every positive-probability trajectory under a stationary policy
    /// `policy[s][a]`, with its probability.
    pub fn enumerate_trajectories(&self, policy: &[Vec<f64>]) -> Result<Vec<(MdpTrajectory, f64)>, EnvError> {
        self.validate()?;
        if policy.len() != self.num_states
            || policy.iter().any(|row| {
                row.len() != self.num_actions
                    || row.iter().any(|p| !p.is_finite() || *p < 0.0)
                    || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12
            })
        {
            return Err(EnvError::OutOfBounds("policy is not a distribution table".into()));
        }
        let mut out = Vec::new();
        let mut prefix = MdpTrajectory {
            states: vec![self.start_state],
            actions: Vec::new(),
            score: 0,
        };
        self.extend(policy, &mut prefix, 1.0, &mut out);
        Ok(out)
    }

    fn extend(&self, policy: &[Vec<f64>], prefix: &mut MdpTrajectory, prob: f64, out: &mut Vec<(MdpTrajectory, f64)>) {
        if prefix.actions.len() == self.horizon {
            out.push((prefix.clone(), prob));
            return;
        }
        let s = *prefix.states.last().expect("non-empty");
        for a in 0..self.num_actions {
            let pa = policy[s][a];
            if pa == 0.0 {
                continue;
            }
            for n in 0..self.num_states {
                let pt = self.transitions[s][a][n];
                if pt == 0.0 {
                    continue;
                }
                let gained = self.scores[s][a][n];
                prefix.states.push(n);
                prefix.actions.push(a);
                prefix.score += gained;
                self.extend(policy, prefix, prob * pa * pt, out);
                prefix.score -= gained;
                prefix.actions.pop();
                prefix.states.pop();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn deterministic_policy_single_trajectory() {
        let mdp = TinyMdpSpec::deterministic(&[vec![1, 0], vec![0, 1]], 3, 0);
        let policy = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let trajs = mdp.enumerate_trajectories(&policy).unwrap();
        assert_eq!(trajs.len(), 1);
        assert_eq!(trajs[0].1, 1.0);
        assert_eq!(trajs[0].0.states, vec![0, 1, 1, 1]);
    }

    #[test]
    fn uniform_two_actions_two_steps() {
        let mdp = TinyMdpSpec::deterministic(&[vec![0, 1], vec![0, 1]], 2, 0);
        let policy = vec![vec![0.5, 0.5]; 2];
        let trajs = mdp.enumerate_trajectories(&policy).unwrap();
        assert_eq!(trajs.len(), 4);
        assert!(trajs.iter().all(|(t, p)| *p == 0.25 && t.actions.len() == 2));
    }

    #[test]
    fn out_of_bounds_rejected() {
        let mdp = TinyMdpSpec::deterministic(&vec![vec![0; 5]; 2], 2, 0);
        assert!(matches!(mdp.validate(), Err(EnvError::OutOfBounds(_))));
        let long = TinyMdpSpec::deterministic(&[vec![0, 0]], 5, 0);
        assert!(long.validate().is_err());
        // 4 actions x 2 successors over 3 steps = 512 paths
        let mut wide = TinyMdpSpec::deterministic(&[vec![0; 4], vec![0; 4]], 3, 0);
        for row in wide.transitions.iter_mut().flatten() {
            *row = vec![0.5, 0.5];
        }
        assert!(wide.validate().is_err());
    }

    fn random_instance() -> impl Strategy<Value = (TinyMdpSpec, Vec<Vec<f64>>)> {
        (1usize..=3, 1usize..=3, 1usize..=3).prop_flat_map(|(ns, na, h)| {
            let cell = prop::collection::vec(0.05f64..1.0, ns);
            let table = prop::collection::vec(prop::collection::vec(cell, na), ns);
            let pol = prop::collection::vec(prop::collection::vec(0.05f64..1.0, na), ns);
            (Just((ns, na, h)), table, pol)
        })
        .prop_filter_map("too many trajectories", |((ns, na, h), table, pol)| {
            let transitions: Vec<Vec<Vec<f64>>> = table
                .into_iter()
                .map(|row| row.into_iter().map(normalize).collect())
                .collect();
            let mdp = TinyMdpSpec {
                num_states: ns,
                num_actions: na,
                horizon: h,
                start_state: 0,
                transitions,
                scores: vec![vec![vec![1; ns]; na]; ns],
            };
            let policy = pol.into_iter().map(normalize).collect();
            mdp.validate().ok().map(|_| (mdp, policy))
        })
    }

    fn normalize(v: Vec<f64>) -> Vec<f64> {
        let z: f64 = v.iter().sum();
        let mut out: Vec<f64> = v.iter().map(|x| x / z).collect();
        // absorb rounding into the last entry so rows sum to one
        let rest: f64 = out[..out.len() - 1].iter().sum();
        *out.last_mut().unwrap() = 1.0 - rest;
        out
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one((mdp, policy) in random_instance()) {
            let trajs = mdp.enumerate_trajectories(&policy).unwrap();
            let total: f64 = trajs.iter().map(|(_, p)| p).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(trajs.iter().all(|(t, _)| t.actions.len() == mdp.horizon && t.score as usize == mdp.horizon));
        }
    }
}
