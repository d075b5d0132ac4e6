//! Adversary-side metrics and the entropy-regularized baseline.
//!
//! `guess_error` scores a policy by the probability that a maximum a
//! posteriori observer misidentifies the secret. The baseline maximizes
//! return plus a discounted policy-entropy bonus; it ignores the observation
//! function entirely, which is exactly the comparison of interest.

use ndarray::Array1;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::mdp::{sample_batch, Mdp, SoftmaxPolicy, TrajectoryBatch};
use crate::obsop::{
    backward_messages, forward_messages, ObservableOperatorSet, ObservationModel,
    MIN_SEQUENCE_PROB,
};
use crate::opacity::{exact_with_diagnostics, ExactConfig, SecretClassifier};
use crate::verify::derive_seed;


/// MAP estimate from a posterior over labels; ties break to the smallest
/// label index so the metric is reproducible.
pub fn map_estimate(posterior: &[f64]) -> usize {
    let mut best = 0;
    let mut best_p = f64::NEG_INFINITY;
    for (z, &p) in posterior.iter().enumerate() {
        if p > best_p {
            best = z;
            best_p = p;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuessErrorMode {
    Exact,
    Sampled { m: usize, seed: u64 },
}

/// Per-sequence contribution in exact mode.
#[derive(Debug, Clone, Serialize)]
pub struct SequenceGuess {
    pub sequence: Vec<usize>,
    pub prob: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GuessErrorReport {
    pub p_e: f64,
    pub mode: GuessErrorMode,
    pub breakdown: Option<Vec<SequenceGuess>>,
}

fn label_joints_for_sequence(
    ops: &ObservableOperatorSet,
    mdp: &Mdp,
    classifier: &SecretClassifier,
    y: &[usize],
) -> Result<(f64, Vec<f64>)> {
    match classifier {
        SecretClassifier::InitialState => {
            let stack = backward_messages(ops, y, 0)?;
            let joints: Vec<f64> = mdp
                .initial_support()
                .iter()
                .map(|&s0| mdp.initial()[s0] * stack.prob_given_initial(s0))
                .collect();
            Ok((joints.iter().sum(), joints))
        }
        _ => {
            let stack = forward_messages(ops, mdp.initial(), y, 0)?;
            let alpha = stack.values.last().unwrap();
            let mut joints = vec![0.0; classifier.n_labels(mdp)];
            for (j, &v) in alpha.iter().enumerate() {
                joints[classifier.classify(j).unwrap()] += v;
            }
            Ok((alpha.sum(), joints))
        }
    }
}

/// Probability that the observer's MAP guess of the secret is wrong.
pub fn guess_error(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    obs: &ObservationModel,
    classifier: &SecretClassifier,
    horizon: usize,
    mode: GuessErrorMode,
) -> Result<GuessErrorReport> {
    match mode {
        GuessErrorMode::Exact => {
            let report = exact_with_diagnostics(
                mdp,
                policy,
                obs,
                classifier,
                horizon,
                ExactConfig::default(),
            )?;
            let mut p_e = 0.0;
            let mut breakdown = Vec::new();
            for diag in report.diagnostics.unwrap() {
                let best = diag.posterior.iter().copied().fold(0.0, f64::max);
                let err = diag.prob * (1.0 - best);
                p_e += err;
                breakdown.push(SequenceGuess {
                    sequence: diag.sequence,
                    prob: diag.prob,
                    error: 1.0 - best,
                });
            }
            Ok(GuessErrorReport {
                p_e,
                mode,
                breakdown: Some(breakdown),
            })
        }
        GuessErrorMode::Sampled { m, seed } => {
            let ops = ObservableOperatorSet::build(mdp, policy, obs, 0)?;
            let batch = sample_batch(mdp, policy, obs, horizon, m, seed);
            let mut total = 0.0;
            // deduplicate identical sequences
            let mut idx: Vec<usize> = (0..batch.observations.len()).collect();
            idx.sort_by(|&a, &b| batch.observations[a].cmp(&batch.observations[b]));
            let mut i = 0;
            while i < idx.len() {
                let y = &batch.observations[idx[i]];
                let mut j = i + 1;
                while j < idx.len() && batch.observations[idx[j]] == *y {
                    j += 1;
                }
                let count = (j - i) as f64;
                let (p_y, joints) = label_joints_for_sequence(&ops, mdp, classifier, y)?;
                if p_y >= MIN_SEQUENCE_PROB {
                    let best = joints.iter().copied().fold(0.0, f64::max) / p_y;
                    total += count * (1.0 - best);
                }
                i = j;
            }
            Ok(GuessErrorReport {
                p_e: total / m as f64,
                mode,
                breakdown: None,
            })
        }
    }
}

/// Policy entropy at a state, in bits.
pub fn policy_entropy_bits(policy: &SoftmaxPolicy, s: usize) -> f64 {
    let probs = policy.action_distribution(s);
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.log2())
        .sum::<f64>()
}

/// Configuration of the entropy-regularized baseline solver.
#[derive(Debug, Clone)]
pub struct BaselineConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub sample_size: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            steps: 400,
            learning_rate: 0.5,
            sample_size: 500,
            horizon: 5,
            seed: 0,
        }
    }
}

/// Stochastic gradient of `V + tau * H_pi` from one batch, where `H_pi` is
/// the discounted policy entropy accumulated along the trajectory. Combines
/// the score-function term for the entropy-augmented return (centered by the
/// batch mean to cut variance) with the direct derivative of the per-state
/// entropy bonus.
pub fn baseline_gradient(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    tau: f64,
    batch: &TrajectoryBatch,
) -> Array1<f64> {
    let n = policy.n_states();
    let na = policy.n_actions();
    let probs = policy.all_action_probs();
    let entropy: Vec<f64> = (0..n).map(|s| policy_entropy_bits(policy, s)).collect();
    let augmented: Vec<f64> = (0..batch.len())
        .map(|k| {
            let mut total = batch.returns[k];
            let mut disc = 1.0;
            for &s in &batch.states[k] {
                total += disc * tau * entropy[s];
                disc *= mdp.discount();
            }
            total
        })
        .collect();
    let mean = augmented.iter().sum::<f64>() / batch.len() as f64;
    let mut grad = Array1::zeros(n * na);
    for (k, aug_return) in augmented.iter().enumerate() {
        let states = &batch.states[k];
        let actions = &batch.actions[k];
        let advantage = aug_return - mean;
        let mut disc = 1.0;
        for (t, &s) in states.iter().enumerate() {
            let act = actions[t];
            for b in 0..na {
                let indicator = if b == act { 1.0 } else { 0.0 };
                grad[s * na + b] += advantage * (indicator - probs[[s, b]]);
                // d H(pi(.|s)) / d theta_{s,b} = -pi_b (log2 pi_b + H)
                let pb = probs[[s, b]];
                if pb > 0.0 {
                    grad[s * na + b] -= disc * tau * pb * (pb.log2() + entropy[s]);
                }
            }
            disc *= mdp.discount();
        }
    }
    grad / batch.len() as f64
}

/// Gradient-ascent solver for the entropy-regularized objective
/// `V(mu0; theta) + tau * H(theta)`, truncated at the configured horizon.
///
/// The step size is normalized by `1 + tau` (the gradient scales with the
/// regularization weight) and decays like `1/sqrt(k)`.
pub fn entropy_regularized_solve(mdp: &Mdp, tau: f64, config: &BaselineConfig) -> SoftmaxPolicy {
    let blind = ObservationModel::constant(mdp.n_states());
    let mut policy = SoftmaxPolicy::random(
        mdp.n_states(),
        mdp.n_actions(),
        derive_seed(config.seed, 0),
    );
    for k in 1..=config.steps {
        let batch = sample_batch(
            mdp,
            &policy,
            &blind,
            config.horizon,
            config.sample_size,
            derive_seed(config.seed, k as u64),
        );
        let grad = baseline_gradient(mdp, &policy, tau, &batch);
        let rate = config.learning_rate / (1.0 + tau) / (k as f64).sqrt();
        let step = grad
            .into_shape_with_order((mdp.n_states(), mdp.n_actions()))
            .unwrap()
            * rate;
        policy.step(&step);
    }
    policy
}

/// One row of a regularization-weight sweep.
#[derive(Debug, Clone, Serialize)]
pub struct TauSweepPoint {
    pub tau: f64,
    pub p_e: f64,
}

/// Solve the baseline for each regularization weight and score its exact
/// guess error against the given secret.
pub fn tau_sweep(
    mdp: &Mdp,
    obs: &ObservationModel,
    classifier: &SecretClassifier,
    taus: &[f64],
    config: &BaselineConfig,
) -> Result<Vec<TauSweepPoint>> {
    taus.par_iter()
        .map(|&tau| {
            let policy = entropy_regularized_solve(mdp, tau, config);
            let report = guess_error(
                mdp,
                &policy,
                obs,
                classifier,
                config.horizon,
                GuessErrorMode::Exact,
            )?;
            Ok(TauSweepPoint {
                tau,
                p_e: report.p_e,
            })
        })
        .collect()
}

/// Fano-style lower bound on the guess error for secrets with more than two
/// labels: `P_E >= (H - 1) / log2(|Z| - 1)`.
pub fn fano_lower_bound(entropy_bits: f64, n_labels: usize) -> f64 {
    assert!(n_labels > 2);
    (entropy_bits - 1.0) / ((n_labels - 1) as f64).log2()
}
