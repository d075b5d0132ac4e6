//! `opacity enumerate`: exact per-sequence table of probabilities,
//! posteriors and entropy contributions.

use std::io::Write;
use std::path::Path;

use opacity_core::mdp::SoftmaxPolicy;
use opacity_core::opacity::{exact_with_diagnostics, ExactConfig};

use crate::config::{build_problem, ExperimentConfig};

/// Write the enumeration table as CSV. The final row totals the sequence
/// probabilities, the per-label marginals and the entropy.
pub fn cmd_enumerate(
    config: &ExperimentConfig,
    policy: Option<&SoftmaxPolicy>,
    out: Option<&Path>,
) -> anyhow::Result<i32> {
    let problem = build_problem(config)?;
    let uniform = SoftmaxPolicy::uniform(problem.mdp.n_states(), problem.mdp.n_actions());
    let policy = policy.unwrap_or(&uniform);
    let report = exact_with_diagnostics(
        &problem.mdp,
        policy,
        &problem.obs,
        &problem.classifier,
        problem.horizon,
        ExactConfig::default(),
    )?;
    let labels = problem.classifier.label_names(&problem.mdp);
    let obs_names = problem.obs.observation_names();

    let mut buf = Vec::new();
    write!(buf, "sequence,prob")?;
    for label in &labels {
        write!(buf, ",post_{label}")?;
    }
    writeln!(buf, ",contribution_bits")?;
    let diags = report.diagnostics.unwrap();
    let mut marginals = vec![0.0; labels.len()];
    let mut total_p = 0.0;
    for diag in &diags {
        let seq: Vec<&str> = diag
            .sequence
            .iter()
            .map(|&o| obs_names[o].as_str())
            .collect();
        write!(buf, "{},{}", seq.join(";"), diag.prob)?;
        for (z, post) in diag.posterior.iter().enumerate() {
            write!(buf, ",{post}")?;
            marginals[z] += diag.prob * post;
        }
        writeln!(buf, ",{}", diag.contribution_bits)?;
        total_p += diag.prob;
    }
    write!(buf, "TOTAL,{total_p}")?;
    for m in &marginals {
        write!(buf, ",{m}")?;
    }
    writeln!(buf, ",{}", report.entropy_bits)?;

    match out {
        Some(path) => std::fs::write(path, buf)?,
        None => std::io::stdout().write_all(&buf)?,
    }
    Ok(0)
}
