//! Ground-truth usefulness of an action: does it shorten the remaining
//! shortest path to full score?

use std::collections::{HashMap, VecDeque};

use super::textgrid::{vocabulary, EnvState, StateKey, TaskSpec};
use crate::trajectory::{ActionText, Verdict};

/// Distance-to-goal table over every state reachable from the task's start.
#[derive(Debug, Clone)]
pub struct StrategicOracle {
    distance: HashMap<StateKey, usize>,
}

impl StrategicOracle {
    pub fn new(spec: &TaskSpec) -> Self {
        let (start, _) = spec.reset();
        Self {
            distance: distances_from(spec, start),
        }
    }

    /// Fewest steps from `state` to full score, `None` if the goal is unreachable.
    pub fn distance(&self, state: &EnvState) -> Option<usize> {
        self.distance.get(&state.key()).copied()
    }

    pub fn reachable_states(&self) -> usize {
        self.distance.len()
    }

    /// +1 iff taking `action` in `state` strictly reduces the distance to goal.
    pub fn label(&self, spec: &TaskSpec, state: &EnvState, action: &ActionText) -> Verdict {
        if state.is_done(spec) {
            return Verdict::Negative;
        }
        let Ok((next, _)) = spec.step(state, action) else {
            return Verdict::Negative;
        };
        let here = self.distance_or_search(spec, state);
        let there = self.distance_or_search(spec, &next);
        match (here, there) {
            (Some(h), Some(t)) => Verdict::from_sign(t < h),
            (None, Some(_)) => Verdict::Positive,
            _ => Verdict::Negative,
        }
    }

    fn distance_or_search(&self, spec: &TaskSpec, state: &EnvState) -> Option<usize> {
        match self.distance.get(&state.key()) {
            Some(&d) => Some(d),
            None => distances_from(spec, *state).get(&state.key()).copied(),
        }
    }

    /// Every reachable state paired with its distance; for exhaustive checks.
    pub fn states(spec: &TaskSpec) -> Vec<(EnvState, Option<usize>)> {
        let oracle = Self::new(spec);
        explore(spec, spec.reset().0)
            .0
            .into_iter()
            .map(|s| {
                let d = oracle.distance(&s);
                (s, d)
            })
            .collect()
    }
}

fn explore(spec: &TaskSpec, start: EnvState) -> (Vec<EnvState>, Vec<Vec<usize>>) {
    let mut index: HashMap<StateKey, usize> = HashMap::new();
    let mut states = vec![start];
    let mut edges: Vec<Vec<usize>> = vec![Vec::new()];
    index.insert(start.key(), 0);
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        let s = states[i];
        if s.is_done(spec) {
            continue;
        }
        for a in vocabulary() {
            let (mut n, _) = spec.step(&s, a).expect("not done");
            n.steps_taken = 0;
            let j = *index.entry(n.key()).or_insert_with(|| {
                states.push(n);
                edges.push(Vec::new());
                queue.push_back(states.len() - 1);
                states.len() - 1
            });
            edges[i].push(j);
        }
    }
    (states, edges)
}

fn distances_from(spec: &TaskSpec, mut start: EnvState) -> HashMap<StateKey, usize> {
    start.steps_taken = 0;
    let (states, edges) = explore(spec, start);
    let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); states.len()];
    for (i, out) in edges.iter().enumerate() {
        for &j in out {
            reverse[j].push(i);
        }
    }
    let mut dist: Vec<Option<usize>> = vec![None; states.len()];
    let mut queue = VecDeque::new();
    for (i, s) in states.iter().enumerate() {
        if s.is_done(spec) {
            dist[i] = Some(0);
            queue.push_back(i);
        }
    }
    while let Some(j) = queue.pop_front() {
        let d = dist[j].expect("queued states have a distance");
        for &i in &reverse[j] {
            if dist[i].is_none() {
                dist[i] = Some(d + 1);
                queue.push_back(i);
            }
        }
    }
    states
        .iter()
        .zip(dist)
        .filter_map(|(s, d)| d.map(|d| (s.key(), d)))
        .collect()
}

/// Shortest action sequence from the start state to full score.
pub fn walkthrough(spec: &TaskSpec) -> Vec<ActionText> {
    let oracle = StrategicOracle::new(spec);
    let (mut state, _) = spec.reset();
    let mut plan = Vec::new();
    while !state.is_done(spec) {
        let d = oracle.distance(&state).expect("generated tasks are solvable");
        let (action, next) = vocabulary()
            .iter()
            .find_map(|a| {
                let (n, _) = spec.step(&state, a).ok()?;
                (oracle.distance(&n) == Some(d - 1)).then(|| (a.clone(), n))
            })
            .expect("some action makes progress");
        plan.push(action);
        state = next;
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::textgrid::{Difficulty, Direction, Door, Item, ItemPlacement, Room, Subgoal, SubgoalVerb};
    use crate::trajectory::DEFAULT_HORIZON_CAP;

    fn act(s: &str) -> ActionText {
        ActionText::new(s).unwrap()
    }

    fn spec_knife_in_pantry() -> TaskSpec {
        TaskSpec {
            rooms: vec![
                Room { name: "kitchen".into(), pos: (0, 0) },
                Room { name: "pantry".into(), pos: (1, 0) },
            ],
            doors: vec![Door { from: 0, to: 1, direction: Direction::East, closed: false }],
            items: vec![
                ItemPlacement { item: Item::Cookbook, room: 0 },
                ItemPlacement { item: Item::Knife, room: 1 },
                ItemPlacement { item: Item::Potato, room: 1 },
                ItemPlacement { item: Item::Tomato, room: 0 },
            ],
            subgoal_chain: vec![
                Subgoal { verb: SubgoalVerb::Chop, target: Some(Item::Potato) },
                Subgoal { verb: SubgoalVerb::Cook, target: Some(Item::Potato) },
                Subgoal { verb: SubgoalVerb::Eat, target: None },
            ],
            distractors: vec![],
            max_score: 3,
        }
    }

    #[test]
    fn take_needed_knife_is_useful() {
        let spec = spec_knife_in_pantry();
        let oracle = StrategicOracle::new(&spec);
        let (s0, _) = spec.reset();
        let (s1, _) = spec.step(&s0, &act("go east")).unwrap();
        assert_eq!(oracle.label(&spec, &s1, &act("take knife")), Verdict::Positive);
        assert_eq!(oracle.label(&spec, &s0, &act("go east")), Verdict::Positive);
    }

    #[test]
    fn opening_an_open_door_is_not_useful() {
        let spec = spec_knife_in_pantry();
        let oracle = StrategicOracle::new(&spec);
        let (s0, _) = spec.reset();
        assert_eq!(oracle.label(&spec, &s0, &act("open east door")), Verdict::Negative);
    }

    #[test]
    fn inventory_and_look_never_useful() {
        for seed in 0..10 {
            let spec = TaskSpec::generate(seed, Difficulty::Easy);
            let oracle = StrategicOracle::new(&spec);
            for (s, _) in StrategicOracle::states(&spec) {
                if s.is_done(&spec) {
                    continue;
                }
                assert_eq!(oracle.label(&spec, &s, &act("inventory")), Verdict::Negative);
                assert_eq!(oracle.label(&spec, &s, &act("look")), Verdict::Negative);
            }
        }
    }

    #[test]
    fn distractor_ingredient_not_useful() {
        let spec = spec_knife_in_pantry();
        let oracle = StrategicOracle::new(&spec);
        let (s0, _) = spec.reset();
        assert_eq!(oracle.label(&spec, &s0, &act("take tomato")), Verdict::Negative);
        assert_eq!(oracle.label(&spec, &s0, &act("examine cookbook")), Verdict::Positive);
    }

    #[test]
    fn walkthrough_reaches_max_score_within_cap() {
        for difficulty in [Difficulty::Easy, Difficulty::Medium] {
            for seed in 0..40 {
                let spec = TaskSpec::generate(seed, difficulty);
                let plan = walkthrough(&spec);
                assert!(plan.len() <= DEFAULT_HORIZON_CAP);
                let (mut s, _) = spec.reset();
                let mut score = 0;
                for a in &plan {
                    let (n, fb) = spec.step(&s, a).unwrap();
                    score += fb.score_delta;
                    s = n;
                }
                assert_eq!(score, spec.max_score);
            }
        }
    }

    /// Following only +1 actions from any reachable state reaches the goal
    /// within the cap.
    #[test]
    fn positive_labels_lead_to_goal_from_every_state() {
        for seed in 0..15 {
            let spec = TaskSpec::generate(seed, Difficulty::Easy);
            let oracle = StrategicOracle::new(&spec);
            for (start, d) in StrategicOracle::states(&spec) {
                assert!(d.is_some(), "dead end in easy task {seed}");
                let mut s = start;
                let mut steps = 0;
                while !s.is_done(&spec) {
                    let a = vocabulary()
                        .iter()
                        .find(|a| oracle.label(&spec, &s, a) == Verdict::Positive)
                        .expect("a useful action exists");
                    s = spec.step(&s, a).unwrap().0;
                    steps += 1;
                    assert!(steps <= DEFAULT_HORIZON_CAP);
                }
            }
        }
    }
}
