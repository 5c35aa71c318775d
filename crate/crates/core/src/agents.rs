//! Posterior sampling (PSRL) and value-equivalent sampling (VSRL) agents.
//!
//! Every episode is a pure function of `(belief, config, seed)`. Inside a
//! VSRL episode the seed is split into named substreams:
//!
//! | consumer              | substream                          |
//! |-----------------------|------------------------------------|
//! | codebook atoms        | `BeliefSampling`, path `[]`        |
//! | policy class          | `ClassSampling`, path `[0]`        |
//! | value class           | `ClassSampling`, path `[1]`        |
//! | source / output draws | `ChannelSampling`, path `[]`       |
//!
//! The exact posterior is replaced by the uniform empirical distribution over
//! `m` fresh posterior draws, which also serve as the channel's output
//! alphabet.

use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{DirichletBelief, KnownStructure};
use crate::distortion::{
    default_policy_class, default_value_class, distortion_matrix, DEFAULT_POLICY_CLASS_SIZE,
    DEFAULT_VALUE_CLASS_SIZE,
};
use crate::mdp::{evaluate_policy, sample_trajectory, solve_optimal, NonstationaryPolicy, TabularMdp};
use crate::rate_distortion::{
    solve_at_threshold, DistortionMatrix, RateDistortionSolution, SourceDistribution,
};
use crate::seed::{derive, rng_from_seed, Stream};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Psrl,
    Vsrl,
}

impl AgentKind {
    pub fn label(self) -> &'static str {
        match self {
            AgentKind::Psrl => "psrl",
            AgentKind::Vsrl => "vsrl",
        }
    }
}

/// The distortion budget `D`, either absolute or as a fraction of the
/// largest pairwise distortion in the episode's codebook.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionThreshold {
    Absolute(f64),
    RelativeToMax(f64),
}

impl DistortionThreshold {
    pub fn resolve(self, dmat: &DistortionMatrix) -> f64 {
        match self {
            DistortionThreshold::Absolute(d) => d,
            DistortionThreshold::RelativeToMax(f) => f * dmat.max_entry(),
        }
    }

    fn value(self) -> f64 {
        match self {
            DistortionThreshold::Absolute(x) | DistortionThreshold::RelativeToMax(x) => x,
        }
    }
}

impl Default for DistortionThreshold {
    fn default() -> Self {
        DistortionThreshold::Absolute(0.0)
    }
}

fn default_samples() -> usize {
    8
}
fn default_policy_size() -> usize {
    DEFAULT_POLICY_CLASS_SIZE
}
fn default_value_size() -> usize {
    DEFAULT_VALUE_CLASS_SIZE
}
fn default_tol() -> f64 {
    1e-10
}
fn default_max_iters() -> usize {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub kind: AgentKind,
    #[serde(default)]
    pub distortion_threshold: DistortionThreshold,
    #[serde(default = "default_samples")]
    pub num_posterior_samples: usize,
    #[serde(default = "default_policy_size")]
    pub policy_class_size: usize,
    #[serde(default = "default_value_size")]
    pub value_class_size: usize,
    #[serde(default = "default_tol")]
    pub ba_tol: f64,
    #[serde(default = "default_max_iters")]
    pub ba_max_iters: usize,
    #[serde(default)]
    pub seed: u64,
}

impl AgentConfig {
    pub fn psrl(seed: u64) -> Self {
        AgentConfig {
            kind: AgentKind::Psrl,
            distortion_threshold: DistortionThreshold::default(),
            num_posterior_samples: default_samples(),
            policy_class_size: default_policy_size(),
            value_class_size: default_value_size(),
            ba_tol: default_tol(),
            ba_max_iters: default_max_iters(),
            seed,
        }
    }

    pub fn vsrl(threshold: DistortionThreshold, num_posterior_samples: usize, seed: u64) -> Self {
        AgentConfig {
            kind: AgentKind::Vsrl,
            distortion_threshold: threshold,
            num_posterior_samples,
            ..Self::psrl(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == AgentKind::Psrl {
            return Ok(());
        }
        let d = self.distortion_threshold.value();
        if !d.is_finite() || d < 0.0 {
            return Err(Error::invalid(format!("distortion threshold {d} must be nonnegative")));
        }
        if self.num_posterior_samples < 2 {
            return Err(Error::invalid("VSRL needs at least two posterior samples"));
        }
        if self.policy_class_size == 0 || self.value_class_size == 0 {
            return Err(Error::invalid("policy and value class sizes must be positive"));
        }
        if !(self.ba_tol > 0.0) || self.ba_max_iters == 0 {
            return Err(Error::invalid("solver tolerance and iteration cap must be positive"));
        }
        Ok(())
    }
}

/// The episode's posterior draws and their pairwise distortions.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub atoms: Vec<TabularMdp>,
    pub distortion: DistortionMatrix,
}

impl Codebook {
    /// True when no two atoms are at distortion zero from each other.
    pub fn pairwise_distinct(&self) -> bool {
        let n = self.atoms.len();
        (0..n).all(|i| (0..n).all(|j| i == j || self.distortion.get(i, j) > 0.0))
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeDecision {
    pub policy: NonstationaryPolicy,
    /// `M_k`, the model that was planned in.
    pub planned_mdp: TabularMdp,
    /// `M*`, the posterior draw fed to the channel.
    pub source_sample: TabularMdp,
    pub source_index: Option<usize>,
    pub planned_index: Option<usize>,
    pub threshold: f64,
    pub rate_nats: f64,
    pub expected_distortion: f64,
    pub realized_distortion: f64,
    pub ba_iterations: usize,
    pub solution: Option<RateDistortionSolution>,
    pub codebook: Option<Codebook>,
}

/// Sample one model from the posterior and act optimally for it.
pub fn psrl_episode(
    belief: &DirichletBelief,
    known: &KnownStructure,
    rng_seed: u64,
) -> Result<EpisodeDecision> {
    let sample = belief.sample_mdp(known, derive(rng_seed, Stream::BeliefSampling, &[]))?;
    let (policy, _) = solve_optimal(&sample);
    Ok(EpisodeDecision {
        policy,
        planned_mdp: sample.clone(),
        source_sample: sample,
        source_index: None,
        planned_index: None,
        threshold: 0.0,
        rate_nats: 0.0,
        expected_distortion: 0.0,
        realized_distortion: 0.0,
        ba_iterations: 0,
        solution: None,
        codebook: None,
    })
}

/// Steps 1 and 2 of a VSRL episode: draw the atoms and their distortions.
pub fn vsrl_codebook(
    belief: &DirichletBelief,
    known: &KnownStructure,
    config: &AgentConfig,
    rng_seed: u64,
) -> Result<Codebook> {
    config.validate()?;
    let atoms = belief.sample_support(
        known,
        config.num_posterior_samples,
        derive(rng_seed, Stream::BeliefSampling, &[]),
    )?;
    let (ns, na) = (belief.num_states(), belief.num_actions());
    let pc = default_policy_class(
        ns,
        na,
        config.policy_class_size,
        derive(rng_seed, Stream::ClassSampling, &[0]),
    )?;
    let vc = default_value_class(
        ns,
        known.horizon,
        config.value_class_size,
        derive(rng_seed, Stream::ClassSampling, &[1]),
    )?;
    let distortion = distortion_matrix(&atoms, &pc, &vc)?;
    Ok(Codebook { atoms, distortion })
}

/// Steps 3 to 6 of a VSRL episode on a given codebook: solve for the channel
/// at the configured threshold, draw the source atom, push it through the
/// channel and plan in the output.
pub fn vsrl_decide(
    codebook: Codebook,
    config: &AgentConfig,
    rng_seed: u64,
) -> Result<EpisodeDecision> {
    let m = codebook.atoms.len();
    let threshold = config.distortion_threshold.resolve(&codebook.distortion);
    let source = SourceDistribution::uniform(m)?;
    let solution = solve_at_threshold(
        &source,
        &codebook.distortion,
        threshold,
        config.ba_tol,
        config.ba_max_iters,
    )?;
    let mut rng = rng_from_seed(derive(rng_seed, Stream::ChannelSampling, &[]));
    let source_index = rng.random_range(0..m);
    let planned_index = WeightedIndex::new(solution.channel.row(source_index))
        .expect("channel rows are distributions")
        .sample(&mut rng);
    let planned_mdp = codebook.atoms[planned_index].clone();
    let (policy, _) = solve_optimal(&planned_mdp);
    Ok(EpisodeDecision {
        policy,
        planned_mdp,
        source_sample: codebook.atoms[source_index].clone(),
        source_index: Some(source_index),
        planned_index: Some(planned_index),
        threshold,
        rate_nats: solution.rate_nats,
        expected_distortion: solution.expected_distortion,
        realized_distortion: codebook.distortion.get(source_index, planned_index),
        ba_iterations: solution.iterations,
        solution: Some(solution),
        codebook: Some(codebook),
    })
}

pub fn vsrl_episode(
    belief: &DirichletBelief,
    known: &KnownStructure,
    config: &AgentConfig,
    rng_seed: u64,
) -> Result<EpisodeDecision> {
    if config.kind != AgentKind::Vsrl {
        return Err(Error::invalid("vsrl_episode needs a VSRL config"));
    }
    let codebook = vsrl_codebook(belief, known, config, rng_seed)?;
    vsrl_decide(codebook, config, rng_seed)
}

pub fn decide(
    belief: &DirichletBelief,
    known: &KnownStructure,
    config: &AgentConfig,
    rng_seed: u64,
) -> Result<EpisodeDecision> {
    match config.kind {
        AgentKind::Psrl => psrl_episode(belief, known, rng_seed),
        AgentKind::Vsrl => vsrl_episode(belief, known, config, rng_seed),
    }
}

/// Per-episode record. `ret` is the exact `β`-weighted value of the executed
/// policy on the true environment and `regret` is `V*` minus that.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub repetition: usize,
    pub episode: usize,
    pub ret: f64,
    pub regret: f64,
    pub cum_regret: f64,
    pub rate_nats: f64,
    pub expected_distortion: f64,
    pub realized_distortion: f64,
    pub ba_iterations: usize,
    pub wallclock_ms: f64,
}

/// [`run_agent_with`] from the default Dirichlet prior, repetition 0.
pub fn run_agent(env: &TabularMdp, config: &AgentConfig, episodes: usize) -> Result<Vec<EpisodeLog>> {
    let prior = DirichletBelief::default_prior(env.num_states(), env.num_actions())?;
    run_agent_with(env, config, &prior, episodes, 0, |_, _| {})
}

/// Run `episodes` episodes against the true `env`, calling `observe` with
/// the 1-based episode number and the decision before it is executed.
///
/// Episode `k` of repetition `r` decides with seed
/// `derive(config.seed, Episode, [r, k])` and rolls out with
/// `derive(config.seed, Trajectory, [r, k])`.
pub fn run_agent_with(
    env: &TabularMdp,
    config: &AgentConfig,
    prior: &DirichletBelief,
    episodes: usize,
    repetition: usize,
    mut observe: impl FnMut(usize, &EpisodeDecision),
) -> Result<Vec<EpisodeLog>> {
    if episodes == 0 {
        return Err(Error::invalid("need at least one episode"));
    }
    if prior.num_states() != env.num_states() || prior.num_actions() != env.num_actions() {
        return Err(Error::invalid("prior and environment dimensions differ"));
    }
    config.validate()?;
    let known = KnownStructure::of(env);
    let (_, optimal) = solve_optimal(env);
    let best = env.initial_value(&optimal[0]);

    let mut belief = prior.clone();
    let mut logs = Vec::with_capacity(episodes);
    let mut cum_regret = 0.0;
    for k in 1..=episodes {
        let started = Instant::now();
        let path = [repetition as u64, k as u64];
        let decision = decide(&belief, &known, config, derive(config.seed, Stream::Episode, &path))?;
        observe(k, &decision);
        let values = evaluate_policy(env, &decision.policy)?;
        let ret = env.initial_value(&values[0]);
        let regret = best - ret;
        cum_regret += regret;
        let tau = sample_trajectory(
            env,
            &decision.policy,
            derive(config.seed, Stream::Trajectory, &path),
        )?;
        belief = belief.update(&tau)?;
        logs.push(EpisodeLog {
            repetition,
            episode: k,
            ret,
            regret,
            cum_regret,
            rate_nats: decision.rate_nats,
            expected_distortion: decision.expected_distortion,
            realized_distortion: decision.realized_distortion,
            ba_iterations: decision.ba_iterations,
            wallclock_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::build_chain;
    use crate::mdp::testing::random_mdp;
    use crate::rate_distortion::mutual_information;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain_setup(n: usize, h: usize) -> (TabularMdp, DirichletBelief, KnownStructure) {
        let env = build_chain(n, h).unwrap();
        let belief = DirichletBelief::default_prior(n, 2).unwrap();
        let known = KnownStructure::of(&env);
        (env, belief, known)
    }

    #[test]
    fn config_validation() {
        assert!(AgentConfig::psrl(0).validate().is_ok());
        assert!(AgentConfig::vsrl(DistortionThreshold::Absolute(-1.0), 4, 0).validate().is_err());
        assert!(AgentConfig::vsrl(DistortionThreshold::Absolute(0.1), 1, 0).validate().is_err());
        assert!(AgentConfig::vsrl(DistortionThreshold::RelativeToMax(0.5), 2, 0).validate().is_ok());
        let parsed: AgentConfig =
            serde_json::from_str(r#"{"kind":"vsrl","distortion_threshold":{"relative_to_max":0.25}}"#).unwrap();
        assert_eq!(parsed.distortion_threshold, DistortionThreshold::RelativeToMax(0.25));
        assert_eq!(parsed.num_posterior_samples, 8);
    }

    #[test]
    fn point_mass_psrl_recovers_optimal_policy() {
        let env = build_chain(4, 5).unwrap();
        let belief = DirichletBelief::concentrated_at(&env, 1e12).unwrap();
        let known = KnownStructure::of(&env);
        let (best, _) = solve_optimal(&env);
        for seed in 0..10 {
            let d = psrl_episode(&belief, &known, seed).unwrap();
            assert_eq!(d.policy, best);
            assert_eq!(d.planned_mdp, d.source_sample);
            assert_eq!(d.rate_nats, 0.0);
        }
    }

    #[test]
    fn episodes_are_pure() {
        let (_, belief, known) = chain_setup(3, 4);
        let a = psrl_episode(&belief, &known, 9).unwrap();
        let b = psrl_episode(&belief, &known, 9).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.planned_mdp, b.planned_mdp);
        let cfg = AgentConfig::vsrl(DistortionThreshold::RelativeToMax(0.3), 4, 0);
        let x = vsrl_episode(&belief, &known, &cfg, 9).unwrap();
        let y = vsrl_episode(&belief, &known, &cfg, 9).unwrap();
        assert_eq!(x.planned_mdp, y.planned_mdp);
        assert_eq!(x.source_index, y.source_index);
        assert_eq!(x.rate_nats.to_bits(), y.rate_nats.to_bits());
        assert_eq!(x.solution, y.solution);
    }

    #[test]
    fn psrl_sampling_frequencies_match_posterior() {
        // A belief whose draws are one of two models, each with probability 1/2:
        // transitions are pinned and state 0's reward has two equally weighted levels.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = random_mdp(2, 1, 2, &mut rng);
        let counts: Vec<f64> = base.transitions().iter().map(|p| p * 1e15).collect();
        let belief = DirichletBelief::new(
            2,
            1,
            counts,
            vec![0.0, 1.0],
            vec![1.0, 1.0, 1.0, 1.0],
            vec![None, Some(0.5)],
        )
        .unwrap();
        let known = KnownStructure::of(&base);
        let n = 10_000;
        let high = (0..n)
            .filter(|&seed| psrl_episode(&belief, &known, seed).unwrap().planned_mdp.reward(0, 0) == 1.0)
            .count();
        assert!((high as f64 / n as f64 - 0.5).abs() < 2e-2);
    }

    #[test]
    fn vsrl_at_zero_reproduces_the_source() {
        let (_, belief, known) = chain_setup(2, 3);
        let cfg = AgentConfig::vsrl(DistortionThreshold::Absolute(0.0), 6, 0);
        for seed in 0..20 {
            let d = vsrl_episode(&belief, &known, &cfg, seed).unwrap();
            assert!(d.codebook.as_ref().unwrap().pairwise_distinct());
            assert_eq!(d.source_index, d.planned_index);
            assert_eq!(d.planned_mdp, d.source_sample);
            assert_eq!(d.realized_distortion, 0.0);
            assert!((d.rate_nats - 6f64.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn vsrl_at_max_distortion_is_rate_zero() {
        let (_, belief, known) = chain_setup(3, 3);
        let cfg = AgentConfig::vsrl(DistortionThreshold::RelativeToMax(1.0), 5, 0);
        let d = vsrl_episode(&belief, &known, &cfg, 4).unwrap();
        assert_eq!(d.rate_nats, 0.0);
        let ch = &d.solution.as_ref().unwrap().channel;
        for i in 1..5 {
            assert_eq!(ch.row(i), ch.row(0));
        }
    }

    #[test]
    fn recorded_rate_matches_recomputation() {
        let (_, belief, known) = chain_setup(2, 3);
        let cfg = AgentConfig::vsrl(DistortionThreshold::RelativeToMax(0.4), 4, 0);
        for seed in 0..5 {
            let d = vsrl_episode(&belief, &known, &cfg, seed).unwrap();
            let sol = d.solution.as_ref().unwrap();
            let mi = mutual_information(&SourceDistribution::uniform(4).unwrap(), &sol.channel).unwrap();
            assert!((d.rate_nats - mi).abs() <= 1e-12);
            assert!(d.rate_nats <= 4f64.ln() + 1e-9);
            assert!(d.expected_distortion <= d.threshold + 1e-6 * d.threshold.max(1.0));
        }
    }

    #[test]
    fn vsrl_rejects_psrl_config() {
        let (_, belief, known) = chain_setup(2, 3);
        assert!(vsrl_episode(&belief, &known, &AgentConfig::psrl(0), 0).is_err());
    }

    #[test]
    fn point_mass_prior_has_zero_regret() {
        let env = build_chain(3, 4).unwrap();
        let prior = DirichletBelief::concentrated_at(&env, 1e12).unwrap();
        for cfg in [
            AgentConfig::psrl(3),
            AgentConfig::vsrl(DistortionThreshold::Absolute(0.0), 3, 3),
        ] {
            let logs = run_agent_with(&env, &cfg, &prior, 10, 0, |_, _| {}).unwrap();
            assert!(logs.iter().all(|l| l.regret.abs() <= 1e-10));
        }
    }

    #[test]
    fn regret_accounting() {
        let env = build_chain(3, 4).unwrap();
        let logs = run_agent(&env, &AgentConfig::vsrl(DistortionThreshold::RelativeToMax(0.2), 4, 8), 30).unwrap();
        let mut sum = 0.0;
        for (k, l) in logs.iter().enumerate() {
            assert_eq!(l.episode, k + 1);
            assert!(l.regret >= -1e-10);
            sum += l.regret;
            assert!((l.cum_regret - sum).abs() <= 1e-9);
        }
    }

    #[test]
    fn psrl_learns_the_chain() {
        let env = build_chain(3, 4).unwrap();
        let prior = DirichletBelief::default_prior(3, 2).unwrap();
        let (mut early, mut late) = (0.0, 0.0);
        for rep in 0..10 {
            let logs = run_agent_with(&env, &AgentConfig::psrl(2024), &prior, 500, rep, |_, _| {}).unwrap();
            early += logs[..100].iter().map(|l| l.regret).sum::<f64>();
            late += logs[400..].iter().map(|l| l.regret).sum::<f64>();
        }
        assert!(late < early, "late {late} vs early {early}");
    }
}
