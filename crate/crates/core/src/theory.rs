//! Exact-enumeration checks of the proxy-policy identities.
//!
//! For a fixed prefix (the start state of a tiny MDP) the first action `a` is
//! drawn from a reference policy and the remainder of the episode (the
//! suffix) follows the MDP under the reference continuation. A ±1 process
//! reward over `(a, suffix)` pairs defines the Gibbs proxy
//!
//! ```text
//! pi_P(a | suffix) = pi_ref(a) * exp(r(a, suffix) / beta) / Z(suffix)
//! ```
//!
//! and the joint `pi_P(a, suffix) = pi_P(a | suffix) * pi_P(suffix)` with
//! `pi_P(suffix)` proportional to `p_ref(suffix) * Z(suffix)`.
//!
//! All logarithms are natural.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, MdpTrajectory, TinyMdpSpec};

/// Slack allowed below zero for quantities that are non-negative in exact arithmetic.
pub const NONNEG_FLOOR: f64 = -1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoryError {
    #[error("beta must be positive, got {0}")]
    NonPositiveBeta(f64),
    #[error("distribution does not sum to one (sum {0})")]
    Unnormalized(f64),
    #[error("policy puts zero mass on action {0}, which the proxy supports")]
    ZeroSupport(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("need at least 10 probes, got {0}")]
    TooFewProbes(usize),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Remainder of an episode after the first action.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Suffix {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

impl Suffix {
    fn of(t: &MdpTrajectory) -> Self {
        Suffix {
            states: t.states[1..].to_vec(),
            actions: t.actions[1..].to_vec(),
        }
    }
}

/// A prefix of a tiny MDP with its enumerated suffix law.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyInstance {
    pub suffixes: Vec<Suffix>,
    /// `suffix_given_action[a][s]`: probability of suffix `s` after first action `a`.
    pub suffix_given_action: Vec<Vec<f64>>,
}

impl ProxyInstance {
    /// Enumerates suffixes from the MDP start state, continuing with `continuation[s][a]`.
    pub fn from_mdp(mdp: &TinyMdpSpec, continuation: &[Vec<f64>]) -> Result<Self, TheoryError> {
        let num_actions = mdp.num_actions;
        let mut per_action: Vec<BTreeMap<Suffix, f64>> = vec![BTreeMap::new(); num_actions];
        for first in 0..num_actions {
            let trajs = enumerate_with_first(mdp, continuation, first)?;
            for (t, p) in trajs {
                *per_action[first].entry(Suffix::of(&t)).or_insert(0.0) += p;
            }
        }
        let mut all: Vec<Suffix> = per_action.iter().flat_map(|m| m.keys().cloned()).collect();
        all.sort();
        all.dedup();
        let suffix_given_action = per_action
            .iter()
            .map(|m| all.iter().map(|s| m.get(s).copied().unwrap_or(0.0)).collect())
            .collect();
        Ok(ProxyInstance {
            suffixes: all,
            suffix_given_action,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.suffix_given_action.len()
    }

    pub fn num_suffixes(&self) -> usize {
        self.suffixes.len()
    }
}

/// Trajectories whose first action is `first`, continuing with `continuation`,
/// with probabilities conditional on that first action.
fn enumerate_with_first(
    mdp: &TinyMdpSpec,
    continuation: &[Vec<f64>],
    first: usize,
) -> Result<Vec<(MdpTrajectory, f64)>, TheoryError> {
    mdp.validate()?;
    if first >= mdp.num_actions || continuation.len() != mdp.num_states {
        return Err(TheoryError::Shape("continuation table does not match the MDP".into()));
    }
    fn walk(
        mdp: &TinyMdpSpec,
        continuation: &[Vec<f64>],
        first: usize,
        path: &mut MdpTrajectory,
        prob: f64,
        out: &mut Vec<(MdpTrajectory, f64)>,
    ) {
        if path.actions.len() == mdp.horizon {
            out.push((path.clone(), prob));
            return;
        }
        let s = *path.states.last().expect("non-empty");
        for a in 0..mdp.num_actions {
            let pa = if path.actions.is_empty() {
                if a == first { 1.0 } else { 0.0 }
            } else {
                continuation[s][a]
            };
            if pa == 0.0 {
                continue;
            }
            for n in 0..mdp.num_states {
                let pt = mdp.transitions[s][a][n];
                if pt == 0.0 {
                    continue;
                }
                path.states.push(n);
                path.actions.push(a);
                walk(mdp, continuation, first, path, prob * pa * pt, out);
                path.actions.pop();
                path.states.pop();
            }
        }
    }
    let mut out = Vec::new();
    let mut path = MdpTrajectory {
        states: vec![mdp.start_state],
        actions: Vec::new(),
        score: 0,
    };
    walk(mdp, continuation, first, &mut path, 1.0, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyPolicy {
    pub beta: f64,
    pub reference: Vec<f64>,
    /// `reward[a][s]`
    pub reward: Vec<Vec<f64>>,
    /// `conditional[s][a] = pi_P(a | prefix, s)`
    pub conditional: Vec<Vec<f64>>,
    /// `Z(prefix, s)` per suffix.
    pub partition: Vec<f64>,
    pub suffix_marginal: Vec<f64>,
    pub action_marginal: Vec<f64>,
    /// `joint[a][s]`
    pub joint: Vec<Vec<f64>>,
}

fn check_distribution(p: &[f64]) -> Result<(), TheoryError> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) || (sum - 1.0).abs() > 1e-12 {
        return Err(TheoryError::Unnormalized(sum));
    }
    Ok(())
}

/// Tabulates the Gibbs proxy policy and its marginals.
pub fn build_proxy_policy(
    instance: &ProxyInstance,
    reward: &[Vec<f64>],
    reference: &[f64],
    beta: f64,
) -> Result<ProxyPolicy, TheoryError> {
    if !(beta > 0.0) {
        return Err(TheoryError::NonPositiveBeta(beta));
    }
    let na = instance.num_actions();
    let ns = instance.num_suffixes();
    if reference.len() != na || reward.len() != na || reward.iter().any(|r| r.len() != ns) {
        return Err(TheoryError::Shape(format!("expected {na} actions x {ns} suffixes")));
    }
    check_distribution(reference)?;

    let mut conditional = vec![vec![0.0; na]; ns];
    let mut partition = vec![0.0; ns];
    for s in 0..ns {
        let weights: Vec<f64> = (0..na).map(|a| reference[a] * (reward[a][s] / beta).exp()).collect();
        let z: f64 = weights.iter().sum();
        partition[s] = z;
        for a in 0..na {
            conditional[s][a] = weights[a] / z;
        }
    }
    let p_ref: Vec<f64> = (0..ns)
        .map(|s| (0..na).map(|a| reference[a] * instance.suffix_given_action[a][s]).sum())
        .collect();
    let unnorm: Vec<f64> = (0..ns).map(|s| p_ref[s] * partition[s]).collect();
    let total: f64 = unnorm.iter().sum();
    let suffix_marginal: Vec<f64> = unnorm.iter().map(|u| u / total).collect();
    let joint: Vec<Vec<f64>> = (0..na)
        .map(|a| (0..ns).map(|s| conditional[s][a] * suffix_marginal[s]).collect())
        .collect();
    let action_marginal = joint.iter().map(|row| row.iter().sum()).collect();
    Ok(ProxyPolicy {
        beta,
        reference: reference.to_vec(),
        reward: reward.to_vec(),
        conditional,
        partition,
        suffix_marginal,
        action_marginal,
        joint,
    })
}

/// `I(a; s)` of a joint table `joint[a][s]`, in nats.
pub fn mutual_information(joint: &[Vec<f64>]) -> Result<f64, TheoryError> {
    let flat: Vec<f64> = joint.iter().flatten().copied().collect();
    check_distribution(&flat)?;
    let ns = joint.first().map_or(0, Vec::len);
    if joint.iter().any(|r| r.len() != ns) {
        return Err(TheoryError::Shape("ragged joint table".into()));
    }
    let pa: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let ps: Vec<f64> = (0..ns).map(|s| joint.iter().map(|r| r[s]).sum()).collect();
    let mut mi = 0.0;
    for (a, row) in joint.iter().enumerate() {
        for (s, &p) in row.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (pa[a] * ps[s])).ln();
            }
        }
    }
    Ok(mi)
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// `KL(p || q)`; `q` must cover the support of `p`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, TheoryError> {
    if p.len() != q.len() {
        return Err(TheoryError::Shape("KL arguments differ in length".into()));
    }
    let mut kl = 0.0;
    for (k, (&pk, &qk)) in p.iter().zip(q).enumerate() {
        if pk > 0.0 {
            if qk <= 0.0 {
                return Err(TheoryError::ZeroSupport(k));
            }
            kl += pk * (pk / qk).ln();
        }
    }
    Ok(kl)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub lhs_kl: f64,
    pub mi_term: f64,
    pub marginal_kl: f64,
    pub residual: f64,
}

/// Splits `E_{a,s ~ pi_P}[ln pi_P(a|s) / pi(a)]` into mutual information plus
/// the marginal KL, each computed on its own.
pub fn kl_decomposition(proxy: &ProxyPolicy, policy: &[f64]) -> Result<DecompositionReport, TheoryError> {
    let na = proxy.reference.len();
    if policy.len() != na {
        return Err(TheoryError::Shape(format!("policy has {} actions, proxy {na}", policy.len())));
    }
    for a in 0..na {
        if proxy.action_marginal[a] > 0.0 && policy[a] <= 0.0 {
            return Err(TheoryError::ZeroSupport(a));
        }
    }
    let mut lhs = 0.0;
    for (a, row) in proxy.joint.iter().enumerate() {
        for (s, &p) in row.iter().enumerate() {
            if p > 0.0 {
                lhs += p * (proxy.conditional[s][a] / policy[a]).ln();
            }
        }
    }
    let mi = mutual_information(&renormalized(&proxy.joint))?;
    let marginal_kl = kl_divergence(&proxy.action_marginal, policy)?;
    Ok(DecompositionReport {
        lhs_kl: lhs,
        mi_term: mi,
        marginal_kl,
        residual: lhs - mi - marginal_kl,
    })
}

/// Removes last-ulp drift so the normalization check in `mutual_information` holds.
fn renormalized(joint: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let total: f64 = joint.iter().flatten().sum();
    joint.iter().map(|r| r.iter().map(|x| x / total).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub probe_policies: Vec<Vec<f64>>,
    pub gap_values: Vec<f64>,
    pub gap_spread: f64,
}

/// Suffix law used for the expectations over trajectories: the proxy's own
/// suffix marginal, which does not depend on the probe policy.
fn equivalence_gap(proxy: &ProxyPolicy, policy: &[f64]) -> Result<f64, TheoryError> {
    let na = proxy.reference.len();
    let mut kl_to_proxy = 0.0;
    let mut expected_reward = 0.0;
    for (s, &q) in proxy.suffix_marginal.iter().enumerate() {
        kl_to_proxy += q * kl_divergence(policy, &proxy.conditional[s])?;
        expected_reward += q * (0..na).map(|a| policy[a] * proxy.reward[a][s]).sum::<f64>();
    }
    let regularized = kl_divergence(policy, &proxy.reference)? - expected_reward / proxy.beta;
    Ok(kl_to_proxy - regularized)
}

/// `E_s[ln Z(s)]` under the proxy suffix marginal; the value every probe gap should equal.
pub fn expected_log_partition(proxy: &ProxyPolicy) -> f64 {
    proxy
        .suffix_marginal
        .iter()
        .zip(&proxy.partition)
        .map(|(q, z)| q * z.ln())
        .sum()
}

/// Dirichlet(1, ..., 1) sample.
pub fn dirichlet_uniform(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.iter().map(|x| x / total).collect()
}

/// Gap between `KL(pi || pi_P)` and the KL-regularized reward objective over
/// random interior probe policies. A spread near zero means both problems
/// share their optimizers.
pub fn kl_equivalence_gap(
    proxy: &ProxyPolicy,
    probes: usize,
    rng: &mut impl Rng,
) -> Result<EquivalenceReport, TheoryError> {
    if probes < 10 {
        return Err(TheoryError::TooFewProbes(probes));
    }
    let na = proxy.reference.len();
    let probe_policies: Vec<Vec<f64>> = (0..probes).map(|_| dirichlet_uniform(rng, na)).collect();
    let gap_values = probe_policies
        .iter()
        .map(|p| equivalence_gap(proxy, p))
        .collect::<Result<Vec<_>, _>>()?;
    let max = gap_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = gap_values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(EquivalenceReport {
        probe_policies,
        gap_values,
        gap_spread: max - min,
    })
}

/// A randomized enumerable instance with its reward table, reference
/// policy, temperature, and one probe policy for the decomposition.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub mdp: TinyMdpSpec,
    pub instance: ProxyInstance,
    pub reward: Vec<Vec<f64>>,
    pub reference: Vec<f64>,
    pub beta: f64,
    pub policy: Vec<f64>,
}

pub const MAX_SUFFIXES: usize = 6;

/// Draws an instance with at most 4 actions and 6 suffixes, ±1 rewards.
pub fn random_instance(rng: &mut impl Rng) -> RandomInstance {
    loop {
        let na = rng.random_range(2..=4usize);
        let ns = rng.random_range(2..=3usize);
        let horizon = rng.random_range(1..=2usize);
        let mut transitions = vec![vec![vec![0.0; ns]; na]; ns];
        for row in transitions.iter_mut().flatten() {
            // sparse successor support keeps the suffix count small
            let k = rng.random_range(0..ns);
            if rng.random_bool(0.5) {
                row[k] = 1.0;
            } else {
                let j = (k + 1) % ns;
                let p = rng.random_range(0.1..0.9);
                row[k] = p;
                row[j] = 1.0 - p;
            }
        }
        let mdp = TinyMdpSpec {
            num_states: ns,
            num_actions: na,
            horizon,
            start_state: 0,
            transitions,
            scores: vec![vec![vec![0; ns]; na]; ns],
        };
        let continuation: Vec<Vec<f64>> = (0..ns).map(|_| dirichlet_uniform(rng, na)).collect();
        let Ok(instance) = ProxyInstance::from_mdp(&mdp, &continuation) else {
            continue;
        };
        if instance.num_suffixes() > MAX_SUFFIXES {
            continue;
        }
        let reward = (0..na)
            .map(|_| {
                (0..instance.num_suffixes())
                    .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                    .collect()
            })
            .collect();
        let reference = dirichlet_uniform(rng, na);
        let beta = rng.random_range(0.1..2.0);
        let policy = dirichlet_uniform(rng, na);
        return RandomInstance {
            mdp,
            instance,
            reward,
            reference,
            beta,
            policy,
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub instances: usize,
    pub max_residual: f64,
    pub max_gap_spread: f64,
    pub pass: bool,
}

pub const PROBES_PER_INSTANCE: usize = 10;

/// Runs the decomposition and the equivalence check on `trials` random
/// instances. Instance `k` draws from its own stream, so the report does not
/// depend on scheduling.
pub fn verify_theory(trials: usize, tolerance: f64, seed: u64) -> Result<TheoryReport, TheoryError> {
    if trials == 0 {
        return Err(TheoryError::Shape("trials must be at least 1".into()));
    }
    let results: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let ri = random_instance(&mut rng);
            let proxy = build_proxy_policy(&ri.instance, &ri.reward, &ri.reference, ri.beta)?;
            let dec = kl_decomposition(&proxy, &ri.policy)?;
            let eq = kl_equivalence_gap(&proxy, PROBES_PER_INSTANCE, &mut rng)?;
            Ok((dec.residual.abs(), eq.gap_spread))
        })
        .collect::<Result<_, TheoryError>>()?;
    let max_residual = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let max_gap_spread = results.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(TheoryReport {
        instances: trials,
        max_residual,
        max_gap_spread,
        pass: max_residual < tolerance && max_gap_spread < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_action_instance() -> ProxyInstance {
        // start state 0, both actions lead to state 0 or 1 with equal odds
        let mut mdp = TinyMdpSpec::deterministic(&[vec![0, 1], vec![0, 1]], 1, 0);
        mdp.transitions[0][0] = vec![0.5, 0.5];
        mdp.transitions[0][1] = vec![0.5, 0.5];
        ProxyInstance::from_mdp(&mdp, &[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap()
    }

    #[test]
    fn suffix_enumeration() {
        let inst = two_action_instance();
        assert_eq!(inst.num_suffixes(), 2);
        for row in &inst.suffix_given_action {
            assert_eq!(row, &vec![0.5, 0.5]);
        }
    }

    #[test]
    fn constant_reward_gives_reference() {
        let inst = two_action_instance();
        let reward = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let proxy = build_proxy_policy(&inst, &reward, &[0.3, 0.7], 0.5).unwrap();
        for row in &proxy.conditional {
            assert!((row[0] - 0.3).abs() < 1e-15 && (row[1] - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn analytic_two_thirds() {
        let inst = two_action_instance();
        let beta = 0.7;
        let reward = vec![vec![beta * 2f64.ln(), 0.0], vec![0.0, 0.0]];
        let proxy = build_proxy_policy(&inst, &reward, &[0.5, 0.5], beta).unwrap();
        assert!((proxy.conditional[0][0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((proxy.conditional[0][1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn non_positive_beta_rejected() {
        let inst = two_action_instance();
        let reward = vec![vec![1.0, -1.0], vec![-1.0, 1.0]];
        assert_eq!(
            build_proxy_policy(&inst, &reward, &[0.5, 0.5], 0.0).unwrap_err(),
            TheoryError::NonPositiveBeta(0.0)
        );
    }

    #[test]
    fn independence_kills_mutual_information() {
        let inst = two_action_instance();
        // reward depends on the action only
        let reward = vec![vec![1.0, 1.0], vec![-1.0, -1.0]];
        let proxy = build_proxy_policy(&inst, &reward, &[0.5, 0.5], 1.0).unwrap();
        let d = kl_decomposition(&proxy, &[0.4, 0.6]).unwrap();
        assert!(d.mi_term.abs() < 1e-15);
        assert!((d.lhs_kl - d.marginal_kl).abs() < 1e-12);
    }

    #[test]
    fn matching_marginal_kills_marginal_kl() {
        let inst = two_action_instance();
        let reward = vec![vec![1.0, -1.0], vec![-1.0, 1.0]];
        let proxy = build_proxy_policy(&inst, &reward, &[0.5, 0.5], 1.0).unwrap();
        let d = kl_decomposition(&proxy, &proxy.action_marginal.clone()).unwrap();
        assert!(d.marginal_kl.abs() < 1e-15);
        assert!((d.lhs_kl - d.mi_term).abs() < 1e-12);
        assert!(d.mi_term > 0.0);
    }

    #[test]
    fn zero_support_policy_rejected() {
        let inst = two_action_instance();
        let reward = vec![vec![1.0, -1.0], vec![-1.0, 1.0]];
        let proxy = build_proxy_policy(&inst, &reward, &[0.5, 0.5], 1.0).unwrap();
        assert_eq!(kl_decomposition(&proxy, &[1.0, 0.0]).unwrap_err(), TheoryError::ZeroSupport(1));
    }

    #[test]
    fn mutual_information_examples() {
        assert!(mutual_information(&[vec![0.25, 0.25], vec![0.25, 0.25]]).unwrap().abs() < 1e-15);
        let diag = mutual_information(&[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        assert!((diag - 2f64.ln()).abs() < 1e-15);
        assert!(mutual_information(&[vec![0.5, 0.4]]).is_err());
    }

    #[test]
    fn zero_reward_unit_beta_has_zero_gap() {
        let inst = two_action_instance();
        let reward = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let proxy = build_proxy_policy(&inst, &reward, &[0.2, 0.8], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eq = kl_equivalence_gap(&proxy, 10, &mut rng).unwrap();
        assert!(eq.gap_values.iter().all(|g| g.abs() < 1e-15));
        assert!(kl_equivalence_gap(&proxy, 9, &mut rng).is_err());
    }

    #[test]
    fn gap_equals_expected_log_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let ri = random_instance(&mut rng);
            let proxy = build_proxy_policy(&ri.instance, &ri.reward, &ri.reference, ri.beta).unwrap();
            let eq = kl_equivalence_gap(&proxy, 10, &mut rng).unwrap();
            let target = expected_log_partition(&proxy);
            assert!(eq.gap_values.iter().all(|g| (g - target).abs() < 1e-9));
        }
    }

    /// When the suffix law follows the probe policy's own first action, the
    /// gap moves with the probe: the constant needs a probe-independent
    /// suffix measure.
    #[test]
    fn action_dependent_suffix_law_breaks_constancy() {
        let mdp = TinyMdpSpec::deterministic(&[vec![0, 1], vec![0, 1]], 1, 0);
        let inst = ProxyInstance::from_mdp(&mdp, &[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let reward = vec![vec![1.0, -1.0], vec![1.0, 1.0]];
        let proxy = build_proxy_policy(&inst, &reward, &[0.5, 0.5], 0.5).unwrap();
        let gap_under_own_law = |pi: &[f64]| {
            let mut kl = 0.0;
            let mut er = 0.0;
            for a in 0..2 {
                for s in 0..2 {
                    let w = pi[a] * inst.suffix_given_action[a][s];
                    kl += w * (pi[a] / proxy.conditional[s][a]).ln();
                    er += w * reward[a][s];
                }
            }
            kl - (kl_divergence(pi, &proxy.reference).unwrap() - er / proxy.beta)
        };
        let g1 = gap_under_own_law(&[0.2, 0.8]);
        let g2 = gap_under_own_law(&[0.7, 0.3]);
        assert!((g1 - g2).abs() > 1e-3);
    }

    #[test]
    fn verify_theory_passes_and_is_reproducible() {
        let a = verify_theory(100, 1e-9, 5).unwrap();
        assert!(a.pass, "{a:?}");
        assert_eq!(a.instances, 100);
        let b = verify_theory(1, 1e-9, 5).unwrap();
        assert_eq!(b, verify_theory(1, 1e-9, 5).unwrap());
        assert!(!verify_theory(100, 0.0, 5).unwrap().pass);
    }

    proptest! {
        #[test]
        fn decomposition_holds(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ri = random_instance(&mut rng);
            prop_assert!(ri.instance.num_actions() <= 4 && ri.instance.num_suffixes() <= MAX_SUFFIXES);
            let proxy = build_proxy_policy(&ri.instance, &ri.reward, &ri.reference, ri.beta).unwrap();
            for row in &proxy.conditional {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            let d = kl_decomposition(&proxy, &ri.policy).unwrap();
            prop_assert!(d.residual.abs() < 1e-9);
            prop_assert!(d.mi_term >= NONNEG_FLOOR && d.marginal_kl >= NONNEG_FLOOR);
            let ha = entropy(&proxy.action_marginal);
            let hs = entropy(&proxy.suffix_marginal);
            prop_assert!(d.mi_term <= ha.min(hs) + 1e-12);
        }

        #[test]
        fn gibbs_scale_invariance(seed in any::<u64>(), c in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ri = random_instance(&mut rng);
            let a = build_proxy_policy(&ri.instance, &ri.reward, &ri.reference, ri.beta).unwrap();
            let scaled: Vec<Vec<f64>> = ri.reward.iter().map(|r| r.iter().map(|x| x * c).collect()).collect();
            let b = build_proxy_policy(&ri.instance, &scaled, &ri.reference, ri.beta * c).unwrap();
            for (ra, rb) in a.conditional.iter().zip(&b.conditional) {
                for (x, y) in ra.iter().zip(rb) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}
