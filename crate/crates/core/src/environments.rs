//! Benchmark environments.
//!
//! # Multi-resolution product
//!
//! `N` component MDPs share one action set. Component `n` (1-based) has
//! rewards in `[0, 1/n]`. Every action is applied to all components at once
//! and the joint reward is the sum of the component rewards, divided by the
//! harmonic sum `Σ 1/n` when normalizing so that it stays in `[0, 1]`.
//!
//! Joint states are encoded row-major with component 1 varying fastest:
//!
//! ```text
//! index = s_1 + |S_1| · (s_2 + |S_2| · (s_3 + ...))
//! ```
//!
//! The joint initial distribution is uniform.
//!
//! # Chain
//!
//! Deterministic chain with action 0 moving left and action 1 moving right.
//! A right move that ends in the rightmost state pays 1, staying put on the
//! leftmost state with "left" pays [`CHAIN_LEFT_REWARD`], everything else
//! pays 0. Episodes start in state 0.

use std::path::PathBuf;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::io::read_json;
use crate::mdp::TabularMdp;
use crate::seed::{stream_rng, Stream};
use crate::{Error, Result};

pub const CHAIN_LEFT_REWARD: f64 = 0.05;
pub const DEFAULT_MAX_STATES: usize = 64;

fn default_true() -> bool {
    true
}

fn default_max_states() -> usize {
    DEFAULT_MAX_STATES
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiResolutionSpec {
    pub n_components: usize,
    pub component_sizes: Vec<usize>,
    pub num_actions: usize,
    pub horizon: usize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default = "default_max_states")]
    pub max_states: usize,
}

impl MultiResolutionSpec {
    pub fn new(component_sizes: Vec<usize>, num_actions: usize, horizon: usize, seed: u64) -> Self {
        MultiResolutionSpec {
            n_components: component_sizes.len(),
            component_sizes,
            num_actions,
            horizon,
            seed,
            normalize: true,
            max_states: DEFAULT_MAX_STATES,
        }
    }

    fn validate(&self) -> Result<usize> {
        if self.n_components == 0 || self.component_sizes.len() != self.n_components {
            return Err(Error::invalid(format!(
                "expected {} component sizes, got {}",
                self.n_components,
                self.component_sizes.len()
            )));
        }
        if self.component_sizes.contains(&0) || self.num_actions == 0 || self.horizon == 0 {
            return Err(Error::invalid(
                "component sizes, action count and horizon must be positive",
            ));
        }
        let joint = self
            .component_sizes
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .filter(|&n| n <= self.max_states)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "joint state space {:?} exceeds the cap of {} states",
                    self.component_sizes, self.max_states
                ))
            })?;
        Ok(joint)
    }
}

/// One factor of the product.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// `rewards[s * A + a]`, within `[0, scale]`.
    pub rewards: Vec<f64>,
    /// `transitions[(s * A + a) * S + s']`.
    pub transitions: Vec<f64>,
    /// `1/n` for the `n`-th component.
    pub scale: f64,
}

impl ComponentMdp {
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.num_actions + a]
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[(s * self.num_actions + a) * self.num_states + next]
    }

    /// Spread of the component's reward table, a rough measure of how much
    /// this component can matter to the joint return.
    pub fn reward_range(&self) -> f64 {
        let max = self.rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.rewards.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiResolutionEnv {
    spec: MultiResolutionSpec,
    components: Vec<ComponentMdp>,
    num_states: usize,
}

impl MultiResolutionEnv {
    pub fn generate(spec: &MultiResolutionSpec) -> Result<Self> {
        let num_states = spec.validate()?;
        let na = spec.num_actions;
        let components = spec
            .component_sizes
            .iter()
            .enumerate()
            .map(|(idx, &ns)| {
                let mut rng = stream_rng(spec.seed, Stream::Environment, &[idx as u64]);
                let scale = 1.0 / (idx + 1) as f64;
                let mut transitions = Vec::with_capacity(ns * na * ns);
                for _ in 0..ns * na {
                    let row: Vec<f64> = (0..ns).map(|_| Exp1.sample(&mut rng)).collect();
                    let total: f64 = row.iter().sum();
                    transitions.extend(row.into_iter().map(|x: f64| x / total));
                }
                let rewards = (0..ns * na).map(|_| rng.random::<f64>() * scale).collect();
                ComponentMdp {
                    num_states: ns,
                    num_actions: na,
                    rewards,
                    transitions,
                    scale,
                }
            })
            .collect();
        Ok(MultiResolutionEnv {
            spec: spec.clone(),
            components,
            num_states,
        })
    }

    pub fn components(&self) -> &[ComponentMdp] {
        &self.components
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    /// Joint index to per-component states.
    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        self.components
            .iter()
            .map(|c| {
                let s = index % c.num_states;
                index /= c.num_states;
                s
            })
            .collect()
    }

    pub fn encode(&self, states: &[usize]) -> usize {
        states
            .iter()
            .zip(&self.components)
            .rev()
            .fold(0, |acc, (&s, c)| acc * c.num_states + s)
    }

    /// `Σ_n 1/n`.
    pub fn harmonic_sum(&self) -> f64 {
        self.components.iter().map(|c| c.scale).sum()
    }

    /// Sum of component rewards, before normalization.
    pub fn raw_reward(&self, joint: usize, a: usize) -> f64 {
        self.decode(joint)
            .iter()
            .zip(&self.components)
            .map(|(&s, c)| c.reward(s, a))
            .sum()
    }

    pub fn joint_transition(&self, joint: usize, a: usize, next: usize) -> f64 {
        self.decode(joint)
            .iter()
            .zip(self.decode(next))
            .zip(&self.components)
            .map(|((&s, sn), c)| c.transition(s, a, sn))
            .product()
    }

    /// The joint tabular model. Fails when `normalize` is off and a summed
    /// reward leaves `[0, 1]`.
    pub fn to_mdp(&self) -> Result<TabularMdp> {
        let (ns, na) = (self.num_states, self.spec.num_actions);
        let harmonic = self.harmonic_sum();
        let mut rewards = Vec::with_capacity(ns * na);
        let mut transitions = Vec::with_capacity(ns * na * ns);
        for s in 0..ns {
            for a in 0..na {
                let raw = self.raw_reward(s, a);
                // the quotient can land one ulp above 1
                rewards.push(if self.spec.normalize { (raw / harmonic).min(1.0) } else { raw });
                for next in 0..ns {
                    transitions.push(self.joint_transition(s, a, next));
                }
            }
        }
        TabularMdp::new(
            ns,
            na,
            rewards,
            transitions,
            vec![1.0 / ns as f64; ns],
            self.spec.horizon,
        )
    }
}

pub fn build_multi_resolution(spec: &MultiResolutionSpec) -> Result<TabularMdp> {
    MultiResolutionEnv::generate(spec)?.to_mdp()
}

pub fn build_chain(num_states: usize, horizon: usize) -> Result<TabularMdp> {
    if num_states < 2 {
        return Err(Error::invalid("a chain needs at least two states"));
    }
    let n = num_states;
    let mut rewards = vec![0.0; n * 2];
    let mut transitions = vec![0.0; n * 2 * n];
    for s in 0..n {
        let left = s.saturating_sub(1);
        let right = (s + 1).min(n - 1);
        transitions[(s * 2) * n + left] = 1.0;
        transitions[(s * 2 + 1) * n + right] = 1.0;
        if right == n - 1 {
            rewards[s * 2 + 1] = 1.0;
        }
    }
    rewards[0] = CHAIN_LEFT_REWARD;
    let mut init = vec![0.0; n];
    init[0] = 1.0;
    TabularMdp::new(n, 2, rewards, transitions, init, horizon)
}

/// Where an experiment's true environment comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Chain { num_states: usize, horizon: usize },
    MultiResolution(MultiResolutionSpec),
    File { path: PathBuf },
}

impl EnvSpec {
    pub fn build(&self) -> Result<TabularMdp> {
        match self {
            EnvSpec::Chain {
                num_states,
                horizon,
            } => build_chain(*num_states, *horizon),
            EnvSpec::MultiResolution(spec) => build_multi_resolution(spec),
            EnvSpec::File { path } => read_json(path),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{evaluate_policy, solve_optimal, NonstationaryPolicy, StationaryPolicy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_component_is_identity_embedding() {
        let spec = MultiResolutionSpec::new(vec![3], 2, 4, 9);
        let env = MultiResolutionEnv::generate(&spec).unwrap();
        let m = env.to_mdp().unwrap();
        let c = &env.components()[0];
        assert_eq!(env.harmonic_sum(), 1.0);
        assert_eq!(m.rewards(), &c.rewards[..]);
        assert_eq!(m.transitions(), &c.transitions[..]);
    }

    #[test]
    fn transitions_factorize() {
        let spec = MultiResolutionSpec::new(vec![2, 3, 2], 3, 3, 1);
        let env = MultiResolutionEnv::generate(&spec).unwrap();
        let m = env.to_mdp().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let s = rng.random_range(0..12);
            let a = rng.random_range(0..3);
            let sn = rng.random_range(0..12);
            let (xs, ys) = (env.decode(s), env.decode(sn));
            let expected: f64 = (0..3).map(|n| env.components()[n].transition(xs[n], a, ys[n])).product();
            assert!((m.transition_row(s, a)[sn] - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn rewards_decompose() {
        let spec = MultiResolutionSpec::new(vec![2, 2, 2], 2, 3, 5);
        let env = MultiResolutionEnv::generate(&spec).unwrap();
        let m = env.to_mdp().unwrap();
        let h = 1.0 + 0.5 + 1.0 / 3.0;
        let mut max_raw: f64 = 0.0;
        for s in 0..8 {
            let parts = env.decode(s);
            for a in 0..2 {
                let raw: f64 = (0..3).map(|n| env.components()[n].reward(parts[n], a)).sum();
                assert!((env.raw_reward(s, a) - raw).abs() <= 1e-12);
                assert!((m.reward(s, a) - raw / h).abs() <= 1e-12);
                assert!(m.reward(s, a) <= 1.0);
                max_raw = max_raw.max(raw);
            }
        }
        assert!(max_raw <= h);
        for (n, c) in env.components().iter().enumerate() {
            assert!(c.rewards.iter().all(|&r| (0.0..=1.0 / (n + 1) as f64).contains(&r)));
        }
    }

    #[test]
    fn encoding_puts_first_component_fastest() {
        let spec = MultiResolutionSpec::new(vec![2, 3], 1, 1, 0);
        let env = MultiResolutionEnv::generate(&spec).unwrap();
        assert_eq!(env.decode(1), vec![1, 0]);
        assert_eq!(env.decode(2), vec![0, 1]);
        for i in 0..6 {
            assert_eq!(env.encode(&env.decode(i)), i);
        }
    }

    #[test]
    fn unnormalized_rewards_can_overflow() {
        let mut spec = MultiResolutionSpec::new(vec![2, 2, 2], 2, 3, 5);
        spec.normalize = false;
        let env = MultiResolutionEnv::generate(&spec).unwrap();
        let max_raw = (0..8)
            .flat_map(|s| (0..2).map(move |a| (s, a)))
            .map(|(s, a)| env.raw_reward(s, a))
            .fold(0.0, f64::max);
        assert!(max_raw <= 1.0 + 0.5 + 1.0 / 3.0);
        if max_raw > 1.0 {
            assert!(env.to_mdp().is_err());
        }
    }

    #[test]
    fn cap_and_validation() {
        assert!(build_multi_resolution(&MultiResolutionSpec::new(vec![8, 9], 2, 3, 0)).is_err());
        let mut spec = MultiResolutionSpec::new(vec![8, 9], 2, 3, 0);
        spec.max_states = 72;
        assert!(build_multi_resolution(&spec).is_ok());
        let mut bad = MultiResolutionSpec::new(vec![2, 2], 2, 3, 0);
        bad.n_components = 3;
        assert!(build_multi_resolution(&bad).is_err());
        assert!(build_multi_resolution(&MultiResolutionSpec::new(vec![2, 0], 2, 3, 0)).is_err());
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let spec = MultiResolutionSpec::new(vec![2, 2, 2], 2, 4, 77);
        let a = build_multi_resolution(&spec).unwrap();
        let b = build_multi_resolution(&spec).unwrap();
        assert_eq!(a, b);
        let c = build_multi_resolution(&MultiResolutionSpec { seed: 78, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn chain_layout() {
        let m = build_chain(5, 4).unwrap();
        for s in 0..5 {
            for a in 0..2 {
                let row = m.transition_row(s, a);
                assert_eq!(row.iter().filter(|&&p| p == 1.0).count(), 1);
                assert_eq!(row.iter().filter(|&&p| p == 0.0).count(), 4);
            }
        }
        assert_eq!(m.reward(4, 1), 1.0);
        assert_eq!(m.reward(0, 0), CHAIN_LEFT_REWARD);
        assert!(build_chain(1, 3).is_err());
    }

    #[test]
    fn two_state_chain_always_right() {
        let h = 6;
        let m = build_chain(2, h).unwrap();
        let right = StationaryPolicy::deterministic(2, &[1, 1]).unwrap();
        let v = evaluate_policy(&m, &NonstationaryPolicy::repeated(right, h).unwrap()).unwrap();
        assert_eq!(m.initial_value(&v[0]), h as f64);
        let (_, vstar) = solve_optimal(&m);
        assert_eq!(m.initial_value(&vstar[0]), h as f64);
    }

    #[test]
    fn chain_optimum_matches_enumeration() {
        let m = build_chain(3, 3).unwrap();
        let (_, vstar) = solve_optimal(&m);
        let mut best: f64 = 0.0;
        for code in 0..512usize {
            let stages = (0..3)
                .map(|h| {
                    let acts: Vec<usize> = (0..3).map(|s| (code >> (h * 3 + s)) & 1).collect();
                    StationaryPolicy::deterministic(2, &acts).unwrap()
                })
                .collect();
            let v = evaluate_policy(&m, &NonstationaryPolicy::new(stages).unwrap()).unwrap();
            best = best.max(m.initial_value(&v[0]));
        }
        assert!((m.initial_value(&vstar[0]) - best).abs() <= 1e-12);
        // right, right (pays), right (pays)
        assert_eq!(best, 2.0);
    }

    #[test]
    fn env_spec_parses() {
        let spec: EnvSpec = serde_json::from_str(r#"{"kind":"chain","num_states":3,"horizon":4}"#).unwrap();
        assert_eq!(spec.build().unwrap(), build_chain(3, 4).unwrap());
        let spec: EnvSpec = serde_json::from_str(
            r#"{"kind":"multi_resolution","n_components":2,"component_sizes":[2,2],"num_actions":2,"horizon":3,"seed":4}"#,
        )
        .unwrap();
        assert_eq!(spec.build().unwrap().num_states(), 4);
    }
}
