//! `opacity run`: execute an experiment and write iterates.csv, summary.json
//! and policy.json (plus sweep.csv for baseline sweeps).

use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;

use opacity_core::evaluation::{
    guess_error, tau_sweep, BaselineConfig, GuessErrorMode,
};
use opacity_core::mdp::finite_horizon_value;
use opacity_core::opacity::{exact_conditional_entropy, sampled_entropy_and_gradient};
use opacity_core::optimizer::{run as run_optimizer, IterateLog, OpacityProblem};
use opacity_core::verify::derive_seed;
use opacity_core::Error;

use crate::config::{build_problem, ExperimentConfig, ProblemKind};

#[derive(Serialize)]
struct Summary {
    schema_version: u32,
    kind: String,
    seed: u64,
    iterations: usize,
    /// Entropy estimate logged at the last iteration.
    final_entropy_estimate: f64,
    /// Exact entropy of the final policy, when enumeration is feasible.
    final_entropy_exact: Option<f64>,
    /// Value estimate logged at the last iteration.
    final_value_estimate: f64,
    final_value_exact: f64,
    lambda: f64,
    guess_error: f64,
    guess_error_mode: String,
    infeasible: bool,
    value_upper_bound: f64,
    wall_time_seconds: f64,
}

#[derive(Serialize)]
struct PolicyFile<'a> {
    schema_version: u32,
    states: &'a [String],
    actions: &'a [String],
    theta: Vec<Vec<f64>>,
}

fn kind_name(kind: ProblemKind) -> &'static str {
    match kind {
        ProblemKind::LastState => "last-state",
        ProblemKind::InitialState => "initial-state",
        ProblemKind::Language => "language",
        ProblemKind::BaselineSweep => "baseline-sweep",
    }
}

fn write_policy(path: &Path, problem: &OpacityProblem, log: &IterateLog) -> anyhow::Result<()> {
    let theta = log
        .final_policy
        .theta()
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect();
    let file = PolicyFile {
        schema_version: crate::config::SCHEMA_VERSION,
        states: problem.mdp.state_names(),
        actions: problem.mdp.action_names(),
        theta,
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn cmd_run(
    config: &ExperimentConfig,
    out_dir: &Path,
    timing_in_csv: bool,
) -> anyhow::Result<i32> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    if config.kind == ProblemKind::BaselineSweep {
        return cmd_baseline_sweep(config, out_dir);
    }
    let problem = build_problem(config)?;
    let pd = config.primal_dual();
    let started = Instant::now();
    let log = run_optimizer(&problem, &pd)?;
    let wall = started.elapsed().as_secs_f64();

    let mut csv = Vec::new();
    log.write_csv(&mut csv, timing_in_csv)?;
    std::fs::write(out_dir.join("iterates.csv"), csv)?;
    write_policy(&out_dir.join("policy.json"), &problem, &log)?;

    // Exact re-evaluation of the final policy where enumeration permits.
    let final_entropy_exact = match exact_conditional_entropy(
        &problem.mdp,
        &log.final_policy,
        &problem.obs,
        &problem.classifier,
        problem.horizon,
    ) {
        Ok(report) => Some(report.entropy_bits),
        Err(Error::EnumerationCapExceeded { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let final_value_exact =
        finite_horizon_value(&problem.mdp, &log.final_policy, problem.horizon);
    let (guess, guess_mode) = match guess_error(
        &problem.mdp,
        &log.final_policy,
        &problem.obs,
        &problem.classifier,
        problem.horizon,
        GuessErrorMode::Exact,
    ) {
        Ok(report) => (report.p_e, "exact".to_string()),
        Err(Error::EnumerationCapExceeded { .. }) => {
            let mode = GuessErrorMode::Sampled {
                m: 10_000,
                seed: derive_seed(config.seed, u64::MAX),
            };
            let report = guess_error(
                &problem.mdp,
                &log.final_policy,
                &problem.obs,
                &problem.classifier,
                problem.horizon,
                mode,
            )?;
            (report.p_e, "sampled".to_string())
        }
        Err(e) => return Err(e.into()),
    };

    let last = log.records.last().expect("at least one iteration");
    let summary = Summary {
        schema_version: crate::config::SCHEMA_VERSION,
        kind: kind_name(config.kind).to_string(),
        seed: config.seed,
        iterations: log.records.len(),
        final_entropy_estimate: last.entropy,
        final_entropy_exact,
        final_value_estimate: last.value,
        final_value_exact,
        lambda: last.lambda,
        guess_error: guess,
        guess_error_mode: guess_mode,
        infeasible: log.infeasible,
        value_upper_bound: log.value_upper_bound,
        wall_time_seconds: wall,
    };
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;

    if log.infeasible {
        eprintln!(
            "constraint likely infeasible: zeta = {}, best achievable value = {}",
            pd.zeta, log.value_upper_bound
        );
        return Ok(2);
    }
    println!(
        "done: entropy {} (exact {:?}), value {}, lambda {}",
        last.entropy, summary.final_entropy_exact, last.value, last.lambda
    );
    Ok(0)
}

fn cmd_baseline_sweep(config: &ExperimentConfig, out_dir: &Path) -> anyhow::Result<i32> {
    // The sweep scores the entropy-regularized baseline against the same
    // secret the main method would optimize. For labeled models the secret is
    // the automaton state on the product.
    let mut language_config = config.clone();
    let model = crate::config::load_model(&config.model)?;
    if model.dfa.is_some() {
        language_config.kind = ProblemKind::Language;
    } else {
        language_config.kind = ProblemKind::LastState;
    }
    let problem = build_problem(&language_config)?;
    let section = config.baseline.clone().unwrap_or_default();
    let baseline = BaselineConfig {
        steps: section.steps,
        learning_rate: section.learning_rate,
        sample_size: section.sample_size,
        horizon: config.horizon,
        seed: config.seed,
    };
    let points = tau_sweep(
        &problem.mdp,
        &problem.obs,
        &problem.classifier,
        &section.taus,
        &baseline,
    )?;
    let mut csv = String::from("tau,guess_error\n");
    for p in &points {
        csv.push_str(&format!("{},{}\n", p.tau, p.p_e));
    }
    std::fs::write(out_dir.join("sweep.csv"), csv)?;
    println!(
        "swept {} weights; best baseline guess error {}",
        points.len(),
        points.iter().map(|p| p.p_e).fold(0.0, f64::max)
    );
    Ok(0)
}

/// Sampled entropy of an arbitrary policy on a problem, for reporting on
/// instances too large to enumerate.
#[allow(dead_code)]
pub fn sampled_entropy(
    problem: &OpacityProblem,
    policy: &opacity_core::mdp::SoftmaxPolicy,
    m: usize,
    seed: u64,
) -> anyhow::Result<f64> {
    Ok(sampled_entropy_and_gradient(
        &problem.mdp,
        policy,
        &problem.obs,
        &problem.classifier,
        problem.horizon,
        m,
        seed,
    )?
    .entropy_bits)
}
