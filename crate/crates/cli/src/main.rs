//! Command-line front end for opacity-maximizing policy synthesis.
//!
//! Exit codes: 0 success, 1 usage or input error (including failed
//! verification checks), 2 infeasible return constraint.

mod config;
mod enumerate;
mod run;
mod verify_cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, GradientModeArg};

#[derive(Parser)]
#[command(
    name = "opacity",
    version,
    about = "Synthesize policies that hide a secret from a partially observing adversary"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (default: config's out_dir, else the current one).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the gradient mode from the config.
    #[arg(long, value_enum)]
    mode: Option<GradientModeArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write iterates.csv, summary.json, policy.json.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Record wall-clock timings in iterates.csv (makes the file
        /// non-reproducible across runs; timings always go to summary.json).
        #[arg(long)]
        timing_in_csv: bool,
    },
    /// Run oracle and finite-difference suites against the model.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Derivative order to check (1 = gradients, 2 = plus Hessians).
        #[arg(long, default_value_t = 2)]
        order: usize,
    },
    /// Exact per-sequence probabilities, posteriors and entropy table.
    Enumerate {
        #[command(flatten)]
        common: CommonArgs,
        /// Read the policy from a policy.json file (default: uniform).
        #[arg(long)]
        policy: Option<PathBuf>,
    },
}

fn load_config(common: &CommonArgs) -> anyhow::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(mode) = common.mode {
        config.optimizer.mode = mode;
    }
    if let Some(out) = &common.out {
        config.out_dir = Some(out.clone());
    }
    if let Some(threads) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .ok();
    }
    Ok(config)
}

fn read_policy_file(path: &PathBuf) -> anyhow::Result<opacity_core::mdp::SoftmaxPolicy> {
    #[derive(serde::Deserialize)]
    struct PolicyFile {
        theta: Vec<Vec<f64>>,
    }
    let text = std::fs::read_to_string(path)?;
    let file: PolicyFile = serde_json::from_str(&text)?;
    let rows = file.theta.len();
    let cols = file.theta.first().map(|r| r.len()).unwrap_or(0);
    let flat: Vec<f64> = file.theta.into_iter().flatten().collect();
    let theta = ndarray::Array2::from_shape_vec((rows, cols), flat)
        .map_err(|e| anyhow::anyhow!("malformed theta: {e}"))?;
    Ok(opacity_core::mdp::SoftmaxPolicy::new(theta))
}

fn dispatch() -> anyhow::Result<i32> {
    let cli = Cli::try_parse().map_err(|e| {
        // clap's default usage-error code is 2, which this tool reserves for
        // infeasibility; print and fold into the input-error code.
        e.print().ok();
        anyhow::anyhow!("usage error")
    })?;
    match cli.command {
        Command::Run {
            common,
            timing_in_csv,
        } => {
            let config = load_config(&common)?;
            let out_dir = config
                .out_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("."));
            run::cmd_run(&config, &out_dir, timing_in_csv)
        }
        Command::Verify { common, order } => {
            let config = load_config(&common)?;
            let seed = config.seed;
            verify_cmd::cmd_verify(&config, order, seed)
        }
        Command::Enumerate { common, policy } => {
            let config = load_config(&common)?;
            let policy = match &policy {
                Some(path) => Some(read_policy_file(path)?),
                None => None,
            };
            let out = config.out_dir.clone().map(|d| d.join("enumerate.csv"));
            enumerate::cmd_enumerate(&config, policy.as_ref(), out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            if err.to_string() != "usage error" {
                eprintln!("error: {err:#}");
            }
            ExitCode::from(1)
        }
    }
}
