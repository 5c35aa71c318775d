//! Finite-horizon tabular MDPs.
//!
//! All tables are stored flattened in row-major order:
//!
//! * `rewards[s * A + a]`
//! * `transitions[(s * A + a) * S + s_next]`
//!
//! Values are indexed by stage: `values[0]` is `V_1` and `values[H]` is the
//! terminal `V_{H+1} = 0`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::seed::rng_from_seed;
use crate::{Error, Result};

/// Tolerance used when validating probability vectors on construction.
pub const PROB_TOL: f64 = 1e-9;

/// Checks that `p` is a distribution within [`PROB_TOL`] and rescales it so
/// that it sums to one as closely as floating point allows.
pub(crate) fn validate_and_normalize(p: &mut [f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::invalid(format!("{what}: empty distribution")));
    }
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::invalid(format!("{what}: entry {x} is not a probability")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::invalid(format!("{what}: sums to {total}, expected 1")));
    }
    p.iter_mut().for_each(|x| *x /= total);
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    rewards: Vec<f64>,
    transitions: Vec<f64>,
    initial_dist: Vec<f64>,
    horizon: usize,
}

/// On-disk form of [`TabularMdp`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpDocument {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    rewards: Vec<f64>,
    transitions: Vec<f64>,
    initial_dist: Vec<f64>,
}

impl TryFrom<MdpDocument> for TabularMdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        TabularMdp::new(
            doc.num_states,
            doc.num_actions,
            doc.rewards,
            doc.transitions,
            doc.initial_dist,
            doc.horizon,
        )
    }
}

impl From<TabularMdp> for MdpDocument {
    fn from(m: TabularMdp) -> Self {
        MdpDocument {
            num_states: m.num_states,
            num_actions: m.num_actions,
            horizon: m.horizon,
            rewards: m.rewards,
            transitions: m.transitions,
            initial_dist: m.initial_dist,
        }
    }
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        rewards: Vec<f64>,
        mut transitions: Vec<f64>,
        mut initial_dist: Vec<f64>,
        horizon: usize,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || horizon == 0 {
            return Err(Error::invalid(
                "num_states, num_actions and horizon must be positive",
            ));
        }
        let sa = num_states * num_actions;
        if rewards.len() != sa {
            return Err(Error::invalid(format!(
                "rewards has {} entries, expected {sa}",
                rewards.len()
            )));
        }
        if transitions.len() != sa * num_states {
            return Err(Error::invalid(format!(
                "transitions has {} entries, expected {}",
                transitions.len(),
                sa * num_states
            )));
        }
        if initial_dist.len() != num_states {
            return Err(Error::invalid(format!(
                "initial_dist has {} entries, expected {num_states}",
                initial_dist.len()
            )));
        }
        if let Some(r) = rewards.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::invalid(format!("reward {r} outside [0, 1]")));
        }
        for (row, chunk) in transitions.chunks_mut(num_states).enumerate() {
            let (s, a) = (row / num_actions, row % num_actions);
            validate_and_normalize(chunk, &format!("transitions[{s}][{a}]"))?;
        }
        validate_and_normalize(&mut initial_dist, "initial_dist")?;
        Ok(TabularMdp {
            num_states,
            num_actions,
            rewards,
            transitions,
            initial_dist,
            horizon,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.num_actions + a]
    }

    /// Next-state distribution `T(. | s, a)`.
    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    /// Same model with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("horizon must be positive"));
        }
        Ok(TabularMdp {
            horizon,
            ..self.clone()
        })
    }

    /// `Σ_s β(s) v(s)`.
    pub fn initial_value(&self, v: &ValueFunction) -> f64 {
        self.initial_dist
            .iter()
            .zip(v.values())
            .map(|(p, x)| p * x)
            .sum()
    }
}

/// `π(. | s)` for every state, stored as `probs[s * A + a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryPolicy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl StationaryPolicy {
    pub fn new(num_states: usize, num_actions: usize, mut probs: Vec<f64>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::invalid("policy dimensions must be positive"));
        }
        if probs.len() != num_states * num_actions {
            return Err(Error::invalid(format!(
                "policy has {} entries, expected {}",
                probs.len(),
                num_states * num_actions
            )));
        }
        for (s, row) in probs.chunks_mut(num_actions).enumerate() {
            validate_and_normalize(row, &format!("policy row {s}"))?;
        }
        Ok(StationaryPolicy {
            num_states,
            num_actions,
            probs,
        })
    }

    /// Deterministic policy taking `actions[s]` in state `s`.
    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Result<Self> {
        if let Some(&a) = actions.iter().find(|&&a| a >= num_actions) {
            return Err(Error::invalid(format!(
                "action {a} out of range for {num_actions} actions"
            )));
        }
        let mut probs = vec![0.0; actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * num_actions + a] = 1.0;
        }
        Self::new(actions.len(), num_actions, probs)
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Result<Self> {
        let p = 1.0 / num_actions as f64;
        Self::new(num_states, num_actions, vec![p; num_states * num_actions])
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn action_probs(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    /// The action chosen in `s` if the policy is deterministic there.
    pub fn greedy_action(&self, s: usize) -> Option<usize> {
        let row = self.action_probs(s);
        row.iter().position(|&p| p == 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonstationaryPolicy {
    stages: Vec<StationaryPolicy>,
}

impl NonstationaryPolicy {
    pub fn new(stages: Vec<StationaryPolicy>) -> Result<Self> {
        let first = stages
            .first()
            .ok_or_else(|| Error::invalid("a nonstationary policy needs at least one stage"))?;
        let dims = (first.num_states, first.num_actions);
        if stages.iter().any(|p| (p.num_states, p.num_actions) != dims) {
            return Err(Error::invalid("policy stages have mismatched dimensions"));
        }
        Ok(NonstationaryPolicy { stages })
    }

    /// The same stationary policy repeated `horizon` times.
    pub fn repeated(policy: StationaryPolicy, horizon: usize) -> Result<Self> {
        Self::new(vec![policy; horizon])
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// Stage `h` in `0..H`, i.e. `π_{h+1}`.
    pub fn stage(&self, h: usize) -> &StationaryPolicy {
        &self.stages[h]
    }

    pub fn stages(&self) -> &[StationaryPolicy] {
        &self.stages
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueFunction(Vec<f64>);

impl ValueFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("value {v} is not finite")));
        }
        Ok(ValueFunction(values))
    }

    pub fn zeros(num_states: usize) -> Self {
        ValueFunction(vec![0.0; num_states])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for ValueFunction {
    type Output = f64;

    fn index(&self, s: usize) -> &f64 {
        &self.0[s]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

fn check_policy_dims(mdp: &TabularMdp, pi: &StationaryPolicy) -> Result<()> {
    if pi.num_states != mdp.num_states || pi.num_actions != mdp.num_actions {
        return Err(Error::invalid(format!(
            "policy is {}x{}, MDP is {}x{}",
            pi.num_states, pi.num_actions, mdp.num_states, mdp.num_actions
        )));
    }
    Ok(())
}

/// `(B V)(s)` for a single state; the dimensions are assumed checked.
#[inline]
pub(crate) fn bellman_at(mdp: &TabularMdp, pi: &StationaryPolicy, v: &[f64], s: usize) -> f64 {
    let mut total = 0.0;
    for (a, &p) in pi.action_probs(s).iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let next: f64 = mdp
            .transition_row(s, a)
            .iter()
            .zip(v)
            .map(|(t, x)| t * x)
            .sum();
        total += p * (mdp.reward(s, a) + next);
    }
    total
}

pub(crate) fn bellman_unchecked(mdp: &TabularMdp, pi: &StationaryPolicy, v: &[f64]) -> Vec<f64> {
    (0..mdp.num_states).map(|s| bellman_at(mdp, pi, v, s)).collect()
}

/// `(B^π_M V)(s) = Σ_a π(a|s) [R(s,a) + Σ_s' T(s'|s,a) V(s')]`.
pub fn bellman_operator(
    mdp: &TabularMdp,
    pi: &StationaryPolicy,
    v: &ValueFunction,
) -> Result<ValueFunction> {
    check_policy_dims(mdp, pi)?;
    if v.len() != mdp.num_states {
        return Err(Error::invalid(format!(
            "value function has {} entries, MDP has {} states",
            v.len(),
            mdp.num_states
        )));
    }
    Ok(ValueFunction(bellman_unchecked(mdp, pi, v.values())))
}

/// Backward induction for a fixed policy. Returns `H + 1` value functions,
/// the last one identically zero.
pub fn evaluate_policy(mdp: &TabularMdp, pi: &NonstationaryPolicy) -> Result<Vec<ValueFunction>> {
    if pi.len() != mdp.horizon {
        return Err(Error::invalid(format!(
            "policy has {} stages, horizon is {}",
            pi.len(),
            mdp.horizon
        )));
    }
    for stage in pi.stages() {
        check_policy_dims(mdp, stage)?;
    }
    let mut values = vec![ValueFunction::zeros(mdp.num_states); mdp.horizon + 1];
    for h in (0..mdp.horizon).rev() {
        values[h] = ValueFunction(bellman_unchecked(mdp, pi.stage(h), values[h + 1].values()));
    }
    Ok(values)
}

/// Optimal deterministic policy and `V*_1, ..., V*_{H+1}` by backward
/// induction. Ties go to the lowest action index.
pub fn solve_optimal(mdp: &TabularMdp) -> (NonstationaryPolicy, Vec<ValueFunction>) {
    let (ns, na) = (mdp.num_states, mdp.num_actions);
    let mut values = vec![ValueFunction::zeros(ns); mdp.horizon + 1];
    let mut stages = Vec::with_capacity(mdp.horizon);
    for h in (0..mdp.horizon).rev() {
        let next = values[h + 1].values();
        let mut actions = vec![0; ns];
        let mut v = vec![0.0; ns];
        for s in 0..ns {
            let mut best = f64::NEG_INFINITY;
            for a in 0..na {
                let q = mdp.reward(s, a)
                    + mdp
                        .transition_row(s, a)
                        .iter()
                        .zip(next)
                        .map(|(t, x)| t * x)
                        .sum::<f64>();
                if q > best {
                    best = q;
                    actions[s] = a;
                }
            }
            v[s] = best;
        }
        values[h] = ValueFunction(v);
        stages.push(
            StationaryPolicy::deterministic(na, &actions).expect("greedy actions are in range"),
        );
    }
    stages.reverse();
    let policy = NonstationaryPolicy::new(stages).expect("horizon is positive");
    (policy, values)
}

/// Roll out `pi` in `mdp` for exactly `H` steps.
pub fn sample_trajectory(
    mdp: &TabularMdp,
    pi: &NonstationaryPolicy,
    rng_seed: u64,
) -> Result<Trajectory> {
    if pi.len() != mdp.horizon {
        return Err(Error::invalid(format!(
            "policy has {} stages, horizon is {}",
            pi.len(),
            mdp.horizon
        )));
    }
    for stage in pi.stages() {
        check_policy_dims(mdp, stage)?;
    }
    let mut rng = rng_from_seed(rng_seed);
    let draw = |p: &[f64], rng: &mut _| -> usize {
        WeightedIndex::new(p)
            .expect("validated distribution")
            .sample(rng)
    };
    let mut state = draw(&mdp.initial_dist, &mut rng);
    let mut steps = Vec::with_capacity(mdp.horizon);
    for h in 0..mdp.horizon {
        let action = draw(pi.stage(h).action_probs(state), &mut rng);
        let next_state = draw(mdp.transition_row(state, action), &mut rng);
        steps.push(Step {
            state,
            action,
            reward: mdp.reward(state, action),
            next_state,
        });
        state = next_state;
    }
    Ok(Trajectory { steps })
}


#[cfg(test)]
mod tests {
    use super::testing::random_mdp;
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_state(r: f64, horizon: usize) -> TabularMdp {
        TabularMdp::new(1, 1, vec![r], vec![1.0], vec![1.0], horizon).unwrap()
    }

    /// Enumerate every deterministic nonstationary policy and return the best
    /// initial values, computed with an explicit expectation over paths.
    fn brute_force_best_v1(mdp: &TabularMdp) -> Vec<f64> {
        let (ns, na, h) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
        let total = na.pow((ns * h) as u32);
        let mut best = vec![f64::NEG_INFINITY; ns];
        for code in 0..total {
            // action for (stage, state) = digit (stage * ns + state) of code in base na
            let act = |stage: usize, s: usize| (code / na.pow((stage * ns + s) as u32)) % na;
            for s0 in 0..ns {
                // forward distribution propagation
                let mut dist = vec![0.0; ns];
                dist[s0] = 1.0;
                let mut ret = 0.0;
                for stage in 0..h {
                    let mut next = vec![0.0; ns];
                    for s in 0..ns {
                        if dist[s] == 0.0 {
                            continue;
                        }
                        let a = act(stage, s);
                        ret += dist[s] * mdp.reward(s, a);
                        for (sn, t) in mdp.transition_row(s, a).iter().enumerate() {
                            next[sn] += dist[s] * t;
                        }
                    }
                    dist = next;
                }
                best[s0] = best[s0].max(ret);
            }
        }
        best
    }

    #[test]
    fn bellman_single_state() {
        let m = single_state(0.5, 1);
        let pi = StationaryPolicy::uniform(1, 1).unwrap();
        let out = bellman_operator(&m, &pi, &ValueFunction::zeros(1)).unwrap();
        assert_eq!(out.values(), &[0.5]);
        let v = ValueFunction::new(vec![1.0]).unwrap();
        let out = bellman_operator(&m, &pi, &v).unwrap();
        assert_eq!(out.values(), &[1.5]);
        assert_eq!(v.values(), &[1.0]);
    }

    #[test]
    fn bellman_two_state_hand_sum() {
        // R = [[0, 1], [1, 0]], uniform transitions, π = (a1 in s0, a0 in s1), V = (1, 3)
        let m = TabularMdp::new(
            2,
            2,
            vec![0.0, 1.0, 1.0, 0.0],
            vec![0.5; 8],
            vec![0.5, 0.5],
            1,
        )
        .unwrap();
        let pi = StationaryPolicy::deterministic(2, &[1, 0]).unwrap();
        let v = ValueFunction::new(vec![1.0, 3.0]).unwrap();
        let out = bellman_operator(&m, &pi, &v).unwrap();
        // Scalar oracle: Σ_a π(a|s) [R(s,a) + Σ_s' 0.5 V(s')]
        let mut expected = [0.0; 2];
        let r = [[0.0, 1.0], [1.0, 0.0]];
        let p = [[0.0, 1.0], [1.0, 0.0]];
        let vv = [1.0, 3.0];
        for s in 0..2 {
            for a in 0..2 {
                let mut cont = 0.0;
                for sn in 0..2 {
                    cont += 0.5 * vv[sn];
                }
                expected[s] += p[s][a] * (r[s][a] + cont);
            }
        }
        assert_eq!(expected, [3.0, 3.0]);
        assert_eq!(out.values(), &expected);
    }

    #[test]
    fn bellman_dimension_mismatch() {
        let m = single_state(0.5, 1);
        let pi = StationaryPolicy::uniform(2, 1).unwrap();
        assert!(matches!(
            bellman_operator(&m, &pi, &ValueFunction::zeros(1)),
            Err(Error::InvalidArgument(_))
        ));
        let pi = StationaryPolicy::uniform(1, 1).unwrap();
        assert!(bellman_operator(&m, &pi, &ValueFunction::zeros(3)).is_err());
    }

    #[test]
    fn construction_rejects_bad_tables() {
        assert!(TabularMdp::new(1, 1, vec![1.5], vec![1.0], vec![1.0], 1).is_err());
        assert!(TabularMdp::new(1, 1, vec![0.5], vec![0.9], vec![1.0], 1).is_err());
        assert!(TabularMdp::new(2, 1, vec![0.5, 0.5], vec![1.0, 0.0, -0.1, 1.1], vec![1.0, 0.0], 1).is_err());
        assert!(TabularMdp::new(1, 1, vec![0.5], vec![1.0], vec![1.0], 0).is_err());
        // within tolerance: accepted and renormalized
        let m = TabularMdp::new(2, 1, vec![0.0, 0.0], vec![0.5 + 4e-10, 0.5, 1.0, 0.0], vec![1.0, 0.0], 1)
            .unwrap();
        let sum: f64 = m.transition_row(0, 0).iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_rewards_give_zero_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_mdp(3, 2, 4, &mut rng);
        let zero = TabularMdp::new(3, 2, vec![0.0; 6], m.transitions().to_vec(), m.initial_dist().to_vec(), 4).unwrap();
        let pi = NonstationaryPolicy::repeated(StationaryPolicy::uniform(3, 2).unwrap(), 4).unwrap();
        let vals = evaluate_policy(&zero, &pi).unwrap();
        assert_eq!(vals.len(), 5);
        assert!(vals.iter().all(|v| v.values().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn horizon_one_is_expected_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_mdp(3, 2, 1, &mut rng);
        let pi = StationaryPolicy::new(3, 2, vec![0.3, 0.7, 1.0, 0.0, 0.5, 0.5]).unwrap();
        let vals = evaluate_policy(&m, &NonstationaryPolicy::repeated(pi.clone(), 1).unwrap()).unwrap();
        for s in 0..3 {
            let expected: f64 = (0..2).map(|a| pi.action_probs(s)[a] * m.reward(s, a)).sum();
            assert_eq!(vals[0][s], expected);
        }
    }

    #[test]
    fn evaluate_rejects_wrong_length() {
        let m = single_state(0.2, 3);
        let pi = NonstationaryPolicy::repeated(StationaryPolicy::uniform(1, 1).unwrap(), 2).unwrap();
        assert!(evaluate_policy(&m, &pi).is_err());
    }

    #[test]
    fn evaluate_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_mdp(3, 2, 3, &mut rng);
        let stages = (0..3)
            .map(|_| {
                let p: Vec<f64> = (0..3)
                    .flat_map(|_| {
                        let x: f64 = rng.random();
                        [x, 1.0 - x]
                    })
                    .collect();
                StationaryPolicy::new(3, 2, p).unwrap()
            })
            .collect();
        let pi = NonstationaryPolicy::new(stages).unwrap();
        let exact = m.initial_value(&evaluate_policy(&m, &pi).unwrap()[0]);

        // Monte-Carlo oracle with its own sampler.
        let n = 1_000_000;
        let mut mc = ChaCha8Rng::seed_from_u64(99);
        let pick = |p: &[f64], u: f64| {
            let mut acc = 0.0;
            for (i, x) in p.iter().enumerate() {
                acc += x;
                if u < acc {
                    return i;
                }
            }
            p.len() - 1
        };
        let mut total = 0.0;
        for _ in 0..n {
            let mut s = pick(m.initial_dist(), mc.random());
            for h in 0..3 {
                let a = pick(pi.stage(h).action_probs(s), mc.random());
                total += m.reward(s, a);
                s = pick(m.transition_row(s, a), mc.random());
            }
        }
        let estimate = total / n as f64;
        assert!((estimate - exact).abs() < 3e-3, "{estimate} vs {exact}");
    }

    #[test]
    fn optimal_horizon_one() {
        let m = TabularMdp::new(
            2,
            3,
            vec![0.2, 0.9, 0.9, 0.4, 0.1, 0.3],
            vec![0.5; 12],
            vec![0.5, 0.5],
            1,
        )
        .unwrap();
        let (pi, v) = solve_optimal(&m);
        assert_eq!(pi.stage(0).greedy_action(0), Some(1));
        assert_eq!(pi.stage(0).greedy_action(1), Some(0));
        assert_eq!(v[0].values(), &[0.9, 0.4]);
    }

    #[test]
    fn optimal_equal_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = random_mdp(3, 2, 5, &mut rng);
        let m = TabularMdp::new(3, 2, vec![0.25; 6], base.transitions().to_vec(), base.initial_dist().to_vec(), 5).unwrap();
        let (pi, v) = solve_optimal(&m);
        for h in 0..5 {
            for s in 0..3 {
                assert!((v[h][s] - 0.25 * (5 - h) as f64).abs() < 1e-12);
                assert_eq!(pi.stage(h).greedy_action(s), Some(0));
            }
        }
    }

    #[test]
    fn optimal_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = random_mdp(3, 2, 3, &mut rng);
            let (pi, v) = solve_optimal(&m);
            let oracle = brute_force_best_v1(&m);
            let evaluated = evaluate_policy(&m, &pi).unwrap();
            for s in 0..3 {
                assert!((v[0][s] - oracle[s]).abs() <= 1e-12);
                assert!((evaluated[0][s] - v[0][s]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn trajectory_is_seed_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = random_mdp(4, 2, 6, &mut rng);
        let pi = NonstationaryPolicy::repeated(StationaryPolicy::uniform(4, 2).unwrap(), 6).unwrap();
        let a = sample_trajectory(&m, &pi, 11).unwrap();
        let b = sample_trajectory(&m, &pi, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.steps.len(), 6);
        for step in &a.steps {
            assert_eq!(step.reward, m.reward(step.state, step.action));
        }
        for w in a.steps.windows(2) {
            assert_eq!(w[0].next_state, w[1].state);
        }
    }

    #[test]
    fn deterministic_trajectory_ignores_seed() {
        // two-state swap, start in state 0
        let m = TabularMdp::new(2, 1, vec![0.1, 0.7], vec![0.0, 1.0, 1.0, 0.0], vec![1.0, 0.0], 4).unwrap();
        let pi = NonstationaryPolicy::repeated(StationaryPolicy::uniform(2, 1).unwrap(), 4).unwrap();
        let a = sample_trajectory(&m, &pi, 1).unwrap();
        for seed in 2..20 {
            assert_eq!(sample_trajectory(&m, &pi, seed).unwrap(), a);
        }
    }

    #[test]
    fn trajectory_frequencies_match_transitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_mdp(3, 2, 1, &mut rng);
        let pi = NonstationaryPolicy::repeated(StationaryPolicy::uniform(3, 2).unwrap(), 1).unwrap();
        let mut counts = vec![0.0; 3 * 2 * 3];
        let mut visits = vec![0.0; 3 * 2];
        for seed in 0..100_000u64 {
            let t = sample_trajectory(&m, &pi, seed).unwrap();
            let st = t.steps[0];
            counts[(st.state * 2 + st.action) * 3 + st.next_state] += 1.0;
            visits[st.state * 2 + st.action] += 1.0;
        }
        for sa in 0..6 {
            let tv: f64 = (0..3)
                .map(|sn| (counts[sa * 3 + sn] / visits[sa] - m.transitions()[sa * 3 + sn]).abs())
                .sum::<f64>()
                / 2.0;
            assert!(tv < 1e-2, "total variation {tv} at {sa}");
        }
    }

    #[test]
    fn serde_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_mdp(3, 2, 3, &mut rng);
        let text = serde_json::to_string(&m).unwrap();
        let back: TabularMdp = serde_json::from_str(&text).unwrap();
        assert_eq!(m, back);
        let bad = text.replace("\"horizon\":3", "\"horizon\":0");
        assert!(serde_json::from_str::<TabularMdp>(&bad).is_err());
    }

    proptest! {
        #[test]
        fn bellman_residual_and_bounds(seed in any::<u64>(), ns in 1usize..5, na in 1usize..4, h in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_mdp(ns, na, h, &mut rng);
            let pi = NonstationaryPolicy::repeated(StationaryPolicy::uniform(ns, na).unwrap(), h).unwrap();
            let vals = evaluate_policy(&m, &pi).unwrap();
            for stage in 0..h {
                let b = bellman_operator(&m, pi.stage(stage), &vals[stage + 1]).unwrap();
                for s in 0..ns {
                    prop_assert!((vals[stage][s] - b[s]).abs() <= 1e-10);
                }
            }
            let (_, vstar) = solve_optimal(&m);
            for stage in 0..=h {
                for s in 0..ns {
                    prop_assert!(vstar[stage][s] >= 0.0);
                    prop_assert!(vstar[stage][s] <= (h - stage) as f64);
                    prop_assert!(vstar[stage][s] >= vals[stage][s] - 1e-12);
                }
            }
        }

        #[test]
        fn bellman_is_monotone(seed in any::<u64>(), bumps in proptest::collection::vec(0.0f64..2.0, 4)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_mdp(4, 3, 1, &mut rng);
            let pi = StationaryPolicy::uniform(4, 3).unwrap();
            let v: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 3.0).collect();
            let w: Vec<f64> = v.iter().zip(&bumps).map(|(x, b)| x + b).collect();
            let bv = bellman_operator(&m, &pi, &ValueFunction::new(v).unwrap()).unwrap();
            let bw = bellman_operator(&m, &pi, &ValueFunction::new(w).unwrap()).unwrap();
            for s in 0..4 {
                prop_assert!(bv[s] <= bw[s]);
            }
        }

        #[test]
        fn small_instances_are_optimal(seed in any::<u64>(), ns in 1usize..4, na in 1usize..3, h in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_mdp(ns, na, h, &mut rng);
            let (_, v) = solve_optimal(&m);
            let oracle = brute_force_best_v1(&m);
            for s in 0..ns {
                prop_assert!((v[0][s] - oracle[s]).abs() <= 1e-12);
            }
        }
    }
}
