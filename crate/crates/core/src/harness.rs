//! Experiment runner: configs in, CSV logs and summaries out.
//!
//! A config is a JSON document:
//!
//! ```json
//! {
//!   "env": {"kind": "chain", "num_states": 3, "horizon": 4},
//!   "agent": {"kind": "vsrl", "distortion_threshold": {"relative_to_max": 0.25},
//!             "num_posterior_samples": 8},
//!   "episodes": 200,
//!   "repetitions": 10,
//!   "output_dir": "out",
//!   "seed": 1
//! }
//! ```
//!
//! `env.kind` is one of `chain`, `multi_resolution` (fields of
//! [`MultiResolutionSpec`](crate::environments::MultiResolutionSpec)) or
//! `file` (`{"kind": "file", "path": "env.json"}`). The root `seed`
//! overrides `agent.seed`.
//!
//! Repetitions run on a rayon pool; rows are written in (repetition,
//! episode) order so the files are reproducible apart from `wallclock_ms`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{run_agent_with, AgentConfig, AgentKind, EpisodeLog};
use crate::belief::DirichletBelief;
use crate::environments::EnvSpec;
use crate::io::read_json;
use crate::mdp::TabularMdp;
use crate::{Error, Result};

pub const CSV_COLUMNS: [&str; 10] = [
    "repetition",
    "episode",
    "return",
    "regret",
    "cum_regret",
    "rate_nats",
    "expected_distortion",
    "realized_distortion",
    "ba_iterations",
    "wallclock_ms",
];

pub const SUMMARY_COLUMNS: [&str; 6] = [
    "agent",
    "repetitions",
    "episodes",
    "mean_cum_regret",
    "std_cum_regret",
    "mean_rate_nats",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub agent: AgentConfig,
    pub episodes: usize,
    pub repetitions: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let config: ExperimentConfig = read_json(path)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be at least 1".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        self.agent
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    fn agent_with_root_seed(&self, kind: AgentKind) -> AgentConfig {
        AgentConfig {
            kind,
            seed: self.seed,
            ..self.agent.clone()
        }
    }
}

/// All repetitions of one agent, in repetition order.
#[derive(Clone, Debug)]
pub struct AgentRuns {
    pub label: String,
    pub runs: Vec<Vec<EpisodeLog>>,
}

impl AgentRuns {
    /// Final cumulative regret of each repetition.
    pub fn final_cum_regrets(&self) -> Vec<f64> {
        self.runs
            .iter()
            .map(|r| r.last().map_or(0.0, |l| l.cum_regret))
            .collect()
    }

    pub fn mean_rate(&self) -> f64 {
        let (sum, n) = self
            .runs
            .iter()
            .flatten()
            .fold((0.0, 0usize), |(s, n), l| (s + l.rate_nats, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

pub fn run_repetitions(
    env: &TabularMdp,
    agent: &AgentConfig,
    episodes: usize,
    repetitions: usize,
) -> Result<AgentRuns> {
    let prior = DirichletBelief::default_prior(env.num_states(), env.num_actions())?;
    let runs = (0..repetitions)
        .into_par_iter()
        .map(|rep| run_agent_with(env, agent, &prior, episodes, rep, |_, _| {}))
        .collect::<Result<Vec<_>>>()?;
    Ok(AgentRuns {
        label: agent.kind.label().to_string(),
        runs,
    })
}

fn push_row(out: &mut String, prefix: Option<&str>, l: &EpisodeLog) {
    if let Some(p) = prefix {
        out.push_str(p);
        out.push(',');
    }
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{:.3}",
        l.repetition,
        l.episode,
        l.ret,
        l.regret,
        l.cum_regret,
        l.rate_nats,
        l.expected_distortion,
        l.realized_distortion,
        l.ba_iterations,
        l.wallclock_ms
    )
    .expect("writing to a String");
}

/// Episode rows for one or more agents. With `with_agent_column`, every row
/// starts with the agent label and the header gains an `agent` column.
pub fn render_csv(groups: &[AgentRuns], with_agent_column: bool) -> String {
    let mut out = String::new();
    if with_agent_column {
        out.push_str("agent,");
    }
    out.push_str(&CSV_COLUMNS.join(","));
    out.push('\n');
    for g in groups {
        let prefix = with_agent_column.then_some(g.label.as_str());
        for l in g.runs.iter().flatten() {
            push_row(&mut out, prefix, l);
        }
    }
    out
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn render_summary(groups: &[AgentRuns]) -> String {
    let mut out = SUMMARY_COLUMNS.join(",");
    out.push('\n');
    for g in groups {
        let (mean, std) = mean_std(&g.final_cum_regrets());
        let episodes = g.runs.first().map_or(0, Vec::len);
        writeln!(
            out,
            "{},{},{},{},{},{}",
            g.label,
            g.runs.len(),
            episodes,
            mean,
            std,
            g.mean_rate()
        )
        .expect("writing to a String");
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn prepare_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Runs the configured agent and writes `<kind>.csv` plus
/// `<kind>.summary.csv` into `output_dir`. Returns the CSV path.
pub fn run_experiment(config: &ExperimentConfig) -> Result<PathBuf> {
    config.validate()?;
    prepare_output_dir(&config.output_dir)?;
    let env = config.env.build()?;
    let agent = config.agent_with_root_seed(config.agent.kind);
    let runs = run_repetitions(&env, &agent, config.episodes, config.repetitions)?;
    let groups = [runs];
    let label = agent.kind.label();
    let csv = config.output_dir.join(format!("{label}.csv"));
    write_file(&csv, &render_csv(&groups, false))?;
    write_file(
        &config.output_dir.join(format!("{label}.summary.csv")),
        &render_summary(&groups),
    )?;
    Ok(csv)
}

/// Runs PSRL and the configured VSRL agent on the same environment and root
/// seed and writes `compare.csv` (with a leading `agent` column) plus
/// `compare.summary.csv`. Returns the CSV path.
pub fn run_compare(config: &ExperimentConfig) -> Result<PathBuf> {
    config.validate()?;
    if config.agent.kind != AgentKind::Vsrl {
        return Err(Error::Config("compare needs a VSRL agent config".into()));
    }
    prepare_output_dir(&config.output_dir)?;
    let env = config.env.build()?;
    let groups = [AgentKind::Psrl, AgentKind::Vsrl]
        .into_iter()
        .map(|kind| {
            run_repetitions(
                &env,
                &config.agent_with_root_seed(kind),
                config.episodes,
                config.repetitions,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let csv = config.output_dir.join("compare.csv");
    write_file(&csv, &render_csv(&groups, true))?;
    write_file(
        &config.output_dir.join("compare.summary.csv"),
        &render_summary(&groups),
    )?;
    Ok(csv)
}

/// Drops the `wallclock_ms` column (always last) from a rendered CSV.
pub fn strip_wallclock(csv: &str) -> String {
    csv.lines()
        .map(|line| line.rsplit_once(',').map_or(line, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}
