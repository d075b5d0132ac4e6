//! `opacity verify`: run the oracle and finite-difference suites against a
//! model and report worst relative errors.

use opacity_core::verify::run_verification;

use crate::config::{build_problem, ExperimentConfig};

pub fn cmd_verify(config: &ExperimentConfig, order: usize, seed: u64) -> anyhow::Result<i32> {
    let problem = build_problem(config)?;
    let report = run_verification(
        &problem.mdp,
        &problem.obs,
        &problem.classifier,
        problem.horizon,
        order,
        seed,
    )?;
    let mut all_ok = true;
    for check in &report.checks {
        let status = if check.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status}  {:<55} worst {:>12.3e}  tol {:>8.0e}",
            check.name, check.worst_error, check.tolerance
        );
        all_ok &= check.passed();
    }
    Ok(if all_ok { 0 } else { 1 })
}
