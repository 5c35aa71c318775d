//! `vsrl` command line.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use vsrl_core::environments::{build_chain, build_multi_resolution, MultiResolutionSpec, DEFAULT_MAX_STATES};
use vsrl_core::harness::{run_compare, run_experiment, ExperimentConfig};
use vsrl_core::io::{read_json, write_json};
use vsrl_core::rate_distortion::{min_achievable_distortion, rd_curve, DistortionMatrix, SourceDistribution};

#[derive(Debug, Parser)]
#[command(name = "vsrl", version, about = "Posterior sampling and value-equivalent sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one agent as described by a config file.
    Run(ExperimentArgs),
    /// Run PSRL and the configured VSRL agent side by side.
    Compare(ExperimentArgs),
    /// Trace the rate-distortion curve of a source and distortion matrix.
    RdCurve(RdCurveArgs),
    /// Write an environment file.
    GenEnv {
        #[command(subcommand)]
        kind: GenEnv,
    },
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output_dir.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RdCurveArgs {
    /// JSON document `{"probs": [...]}`.
    #[arg(long)]
    source: PathBuf,
    /// JSON document `{"rows": m, "cols": n, "data": [...]}`.
    #[arg(long)]
    dmat: PathBuf,
    /// Comma-separated ascending thresholds.
    #[arg(long, value_delimiter = ',', conflicts_with = "points")]
    grid: Option<Vec<f64>>,
    /// Evenly spaced thresholds from the smallest achievable distortion to the
    /// largest matrix entry.
    #[arg(long, default_value_t = 16)]
    points: usize,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long, default_value_t = 20_000)]
    max_iters: usize,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum GenEnv {
    /// Deterministic left/right chain.
    Chain {
        #[arg(long)]
        states: usize,
        #[arg(long)]
        horizon: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Product of component MDPs with rewards scaled by 1/n.
    MultiResolution {
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_normalize: bool,
        #[arg(long, default_value_t = DEFAULT_MAX_STATES)]
        max_states: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(dir) = &args.output_dir {
        config.output_dir = dir.clone();
    }
    Ok(config)
}

fn rd_curve_csv(args: &RdCurveArgs) -> Result<String> {
    let source: SourceDistribution = read_json(&args.source)?;
    let dmat: DistortionMatrix = read_json(&args.dmat)?;
    let grid = match &args.grid {
        Some(g) => g.clone(),
        None => {
            if args.points < 2 {
                bail!("--points must be at least 2");
            }
            let (low, top) = (min_achievable_distortion(&source, &dmat)?, dmat.max_entry());
            (0..args.points)
                .map(|k| low + (top - low) * k as f64 / (args.points - 1) as f64)
                .collect()
        }
    };
    let curve = rd_curve(&source, &dmat, &grid, args.tol, args.max_iters)?;
    let mut out = String::from("D,rate_nats,expected_distortion,beta,iterations,converged\n");
    for (d, sol) in grid.iter().zip(&curve) {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            d, sol.rate_nats, sol.expected_distortion, sol.lagrange_beta, sol.iterations, sol.converged
        )?;
    }
    Ok(out)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let path = run_experiment(&load_config(&args)?)?;
            println!("{}", path.display());
        }
        Command::Compare(args) => {
            let path = run_compare(&load_config(&args)?)?;
            println!("{}", path.display());
        }
        Command::RdCurve(args) => {
            let csv = rd_curve_csv(&args)?;
            match &args.out {
                Some(path) => fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{csv}"),
            }
        }
        Command::GenEnv { kind } => {
            let (mdp, out) = match kind {
                GenEnv::Chain { states, horizon, out } => (build_chain(states, horizon)?, out),
                GenEnv::MultiResolution {
                    sizes,
                    actions,
                    horizon,
                    seed,
                    no_normalize,
                    max_states,
                    out,
                } => {
                    let spec = MultiResolutionSpec {
                        normalize: !no_normalize,
                        max_states,
                        ..MultiResolutionSpec::new(sizes, actions, horizon, seed)
                    };
                    (build_multi_resolution(&spec)?, out)
                }
            };
            write_json(&out, &mdp)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return err.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    }
}
