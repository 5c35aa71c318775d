//! Conjugate posterior over the unknown reward and transition tables.
//!
//! Each `(s, a)` has an independent Dirichlet over successor states and an
//! independent categorical-Dirichlet over a finite grid of reward levels.
//! Rewards are deterministic, so the first observation of `(s, a)` pins its
//! reward and every later sample returns that value exactly.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::mdp::{TabularMdp, Trajectory};
use crate::seed::{derive, rng_from_seed, Stream};
use crate::{Error, Result};

pub const DEFAULT_REWARD_SUPPORT: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// The parts of the MDP that are known a priori.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnownStructure {
    pub initial_dist: Vec<f64>,
    pub horizon: usize,
}

impl KnownStructure {
    pub fn of(mdp: &TabularMdp) -> Self {
        KnownStructure {
            initial_dist: mdp.initial_dist().to_vec(),
            horizon: mdp.horizon(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BeliefDocument", into = "BeliefDocument")]
pub struct DirichletBelief {
    num_states: usize,
    num_actions: usize,
    transition_counts: Vec<f64>,
    reward_support: Vec<f64>,
    reward_counts: Vec<f64>,
    observed_reward: Vec<Option<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BeliefDocument {
    num_states: usize,
    num_actions: usize,
    transition_counts: Vec<f64>,
    reward_support: Vec<f64>,
    reward_counts: Vec<f64>,
    observed_reward: Vec<Option<f64>>,
}

impl TryFrom<BeliefDocument> for DirichletBelief {
    type Error = Error;

    fn try_from(d: BeliefDocument) -> Result<Self> {
        DirichletBelief::new(
            d.num_states,
            d.num_actions,
            d.transition_counts,
            d.reward_support,
            d.reward_counts,
            d.observed_reward,
        )
    }
}

impl From<DirichletBelief> for BeliefDocument {
    fn from(b: DirichletBelief) -> Self {
        BeliefDocument {
            num_states: b.num_states,
            num_actions: b.num_actions,
            transition_counts: b.transition_counts,
            reward_support: b.reward_support,
            reward_counts: b.reward_counts,
            observed_reward: b.observed_reward,
        }
    }
}

fn valid_count(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

impl DirichletBelief {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition_counts: Vec<f64>,
        reward_support: Vec<f64>,
        reward_counts: Vec<f64>,
        observed_reward: Vec<Option<f64>>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::invalid("belief dimensions must be positive"));
        }
        let sa = num_states * num_actions;
        let levels = reward_support.len();
        if levels == 0 {
            return Err(Error::invalid("reward support is empty"));
        }
        if reward_support.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::invalid("reward support must lie in [0, 1]"));
        }
        if transition_counts.len() != sa * num_states
            || reward_counts.len() != sa * levels
            || observed_reward.len() != sa
        {
            return Err(Error::invalid("belief tables have inconsistent sizes"));
        }
        if !transition_counts.iter().all(|&c| valid_count(c))
            || !reward_counts.iter().all(|&c| valid_count(c))
        {
            return Err(Error::invalid("pseudo-counts must be finite and nonnegative"));
        }
        if transition_counts
            .chunks(num_states)
            .any(|row| row.iter().sum::<f64>() <= 0.0)
        {
            return Err(Error::invalid("every transition pseudo-count vector needs a positive sum"));
        }
        if reward_counts
            .chunks(levels)
            .zip(&observed_reward)
            .any(|(row, obs)| obs.is_none() && row.iter().sum::<f64>() <= 0.0)
        {
            return Err(Error::invalid("every unobserved reward needs a positive pseudo-count sum"));
        }
        if observed_reward.iter().flatten().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::invalid("observed rewards must lie in [0, 1]"));
        }
        Ok(DirichletBelief {
            num_states,
            num_actions,
            transition_counts,
            reward_support,
            reward_counts,
            observed_reward,
        })
    }

    /// Symmetric prior: `transition_pseudo_count` per successor and one
    /// pseudo-count per reward level.
    pub fn uniform_prior(
        num_states: usize,
        num_actions: usize,
        transition_pseudo_count: f64,
        reward_support: Vec<f64>,
    ) -> Result<Self> {
        if !(transition_pseudo_count > 0.0) {
            return Err(Error::invalid("transition pseudo-count must be positive"));
        }
        let sa = num_states * num_actions;
        let levels = reward_support.len();
        Self::new(
            num_states,
            num_actions,
            vec![transition_pseudo_count; sa * num_states],
            reward_support,
            vec![1.0; sa * levels],
            vec![None; sa],
        )
    }

    /// Dirichlet(1) transitions and the default five-level reward grid.
    pub fn default_prior(num_states: usize, num_actions: usize) -> Result<Self> {
        Self::uniform_prior(num_states, num_actions, 1.0, DEFAULT_REWARD_SUPPORT.to_vec())
    }

    /// A belief that puts (almost) all of its mass on `mdp`: every reward is
    /// marked observed and each transition row gets `concentration` times the
    /// true probabilities as pseudo-counts.
    pub fn concentrated_at(mdp: &TabularMdp, concentration: f64) -> Result<Self> {
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        let support = DEFAULT_REWARD_SUPPORT.to_vec();
        let levels = support.len();
        Self::new(
            ns,
            na,
            mdp.transitions().iter().map(|p| p * concentration).collect(),
            support,
            vec![1.0; ns * na * levels],
            mdp.rewards().iter().map(|&r| Some(r)).collect(),
        )
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn transition_counts(&self) -> &[f64] {
        &self.transition_counts
    }

    pub fn transition_counts_at(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transition_counts[start..start + self.num_states]
    }

    pub fn reward_support(&self) -> &[f64] {
        &self.reward_support
    }

    pub fn reward_counts_at(&self, s: usize, a: usize) -> &[f64] {
        let levels = self.reward_support.len();
        let start = (s * self.num_actions + a) * levels;
        &self.reward_counts[start..start + levels]
    }

    pub fn observed_reward(&self, s: usize, a: usize) -> Option<f64> {
        self.observed_reward[s * self.num_actions + a]
    }

    /// Posterior-predictive next-state distribution (the Dirichlet mean).
    pub fn predictive_transition(&self, s: usize, a: usize) -> Vec<f64> {
        let row = self.transition_counts_at(s, a);
        let total: f64 = row.iter().sum();
        row.iter().map(|c| c / total).collect()
    }

    /// Incorporate one trajectory.
    pub fn update(&self, tau: &Trajectory) -> Result<Self> {
        let mut next = self.clone();
        for step in &tau.steps {
            if step.state >= self.num_states
                || step.next_state >= self.num_states
                || step.action >= self.num_actions
            {
                return Err(Error::invalid(format!(
                    "transition ({}, {}, {}) outside a {}x{} belief",
                    step.state, step.action, step.next_state, self.num_states, self.num_actions
                )));
            }
            if !(0.0..=1.0).contains(&step.reward) {
                return Err(Error::invalid(format!("reward {} outside [0, 1]", step.reward)));
            }
            let sa = step.state * self.num_actions + step.action;
            next.transition_counts[sa * self.num_states + step.next_state] += 1.0;
            match next.observed_reward[sa] {
                None => next.observed_reward[sa] = Some(step.reward),
                Some(r) if r == step.reward => {}
                Some(r) => {
                    return Err(Error::invalid(format!(
                        "reward at ({}, {}) was {r}, now observed {}",
                        step.state, step.action, step.reward
                    )))
                }
            }
        }
        Ok(next)
    }

    /// Incorporate a whole history, in order.
    pub fn update_all<'a>(&self, history: impl IntoIterator<Item = &'a Trajectory>) -> Result<Self> {
        history
            .into_iter()
            .try_fold(self.clone(), |b, tau| b.update(tau))
    }

    fn check_known(&self, known: &KnownStructure) -> Result<()> {
        if known.initial_dist.len() != self.num_states {
            return Err(Error::invalid(format!(
                "initial distribution has {} entries, belief has {} states",
                known.initial_dist.len(),
                self.num_states
            )));
        }
        Ok(())
    }

    fn draw_mdp(&self, known: &KnownStructure, rng: &mut impl Rng) -> Result<TabularMdp> {
        let (ns, na) = (self.num_states, self.num_actions);
        let mut transitions = Vec::with_capacity(ns * na * ns);
        for row in self.transition_counts.chunks(ns) {
            transitions.extend(sample_dirichlet(row, rng));
        }
        let levels = self.reward_support.len();
        let rewards = self
            .reward_counts
            .chunks(levels)
            .zip(&self.observed_reward)
            .map(|(counts, obs)| match obs {
                Some(r) => *r,
                None => {
                    let p = sample_dirichlet(counts, rng);
                    let level = WeightedIndex::new(&p).expect("dirichlet draw").sample(rng);
                    self.reward_support[level]
                }
            })
            .collect();
        TabularMdp::new(
            ns,
            na,
            rewards,
            transitions,
            known.initial_dist.clone(),
            known.horizon,
        )
    }

    /// One posterior draw of the full model.
    pub fn sample_mdp(&self, known: &KnownStructure, rng_seed: u64) -> Result<TabularMdp> {
        self.check_known(known)?;
        self.draw_mdp(known, &mut rng_from_seed(rng_seed))
    }

    /// `m` i.i.d. posterior draws. Atom `i` uses the belief-sampling substream
    /// `i` of `rng_seed`, so atom `i` is the same regardless of `m`.
    pub fn sample_support(
        &self,
        known: &KnownStructure,
        m: usize,
        rng_seed: u64,
    ) -> Result<Vec<TabularMdp>> {
        if m == 0 {
            return Err(Error::invalid("need at least one posterior sample"));
        }
        self.check_known(known)?;
        (0..m as u64)
            .map(|i| self.sample_mdp(known, derive(rng_seed, Stream::BeliefSampling, &[i])))
            .collect()
    }
}

/// Normalized independent Gamma draws; zero pseudo-counts get zero mass.
fn sample_dirichlet(alpha: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    let draws: Vec<f64> = alpha
        .iter()
        .map(|&a| {
            if a > 0.0 {
                Gamma::new(a, 1.0).expect("positive shape").sample(rng)
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.into_iter().map(|x| x / total).collect()
    } else {
        // every Gamma draw underflowed (tiny shapes); fall back to the mean
        let total: f64 = alpha.iter().sum();
        alpha.iter().map(|a| a / total).collect()
    }
}

/// Append-only record of past trajectories.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    trajectories: Vec<Trajectory>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tau: Trajectory) {
        self.trajectories.push(tau);
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}
