//! Independent oracles and numerical checks: brute-force joint enumeration
//! over (state path, observation path), central finite differences, and the
//! verification suites behind `opacity verify`.
//!
//! The joint enumeration never touches observable operators or message
//! recursions; it works directly from the induced chain and the emission
//! table, so it can serve as an oracle for them.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::mdp::{induced_chain_from, sample_batch, Mdp, SoftmaxPolicy};
use crate::obsop::{ObservableOperatorSet, ObservationModel, MIN_SEQUENCE_PROB};
use crate::opacity::SecretClassifier;

/// Joint distribution over observation sequences of a fixed horizon, with
/// terminal-state and initial-state marginals, built by exhaustive path
/// enumeration.
pub struct JointTable {
    n_states: usize,
    n_obs: usize,
    horizon: usize,
    /// `P(y)` indexed by the base-`n_obs` code of `y`.
    prob: Vec<f64>,
    /// `P(S_T = j, y)` per code.
    terminal: Vec<Array1<f64>>,
    /// `P(y | S_0 = i)` per code (independent of the initial distribution).
    initial_cond: Vec<Array1<f64>>,
    mu0: Array1<f64>,
}

impl JointTable {
    pub fn build(
        mdp: &Mdp,
        policy: &SoftmaxPolicy,
        obs: &ObservationModel,
        horizon: usize,
    ) -> JointTable {
        let n = mdp.n_states();
        let n_obs = obs.n_observations();
        let n_seq = n_obs.pow(horizon as u32 + 1);
        let mut table = JointTable {
            n_states: n,
            n_obs,
            horizon,
            prob: vec![0.0; n_seq],
            terminal: vec![Array1::zeros(n); n_seq],
            initial_cond: vec![Array1::zeros(n); n_seq],
            mu0: mdp.initial().clone(),
        };
        let chain_from = induced_chain_from(mdp, policy);
        let mut path = vec![0usize; horizon + 1];
        for s0 in 0..n {
            path[0] = s0;
            table.walk_states(&chain_from, obs, &mut path, 1, 1.0, s0);
        }
        table
    }

    fn walk_states(
        &mut self,
        chain_from: &Array2<f64>,
        obs: &ObservationModel,
        path: &mut Vec<usize>,
        depth: usize,
        prob: f64,
        s0: usize,
    ) {
        if prob == 0.0 {
            return;
        }
        if depth > self.horizon {
            self.spread_observations(obs, path, 0, 0, prob, s0);
            return;
        }
        let s = path[depth - 1];
        for s2 in 0..self.n_states {
            let p = chain_from[[s, s2]];
            if p > 0.0 {
                path[depth] = s2;
                self.walk_states(chain_from, obs, path, depth + 1, prob * p, s0);
            }
        }
    }

    fn spread_observations(
        &mut self,
        obs: &ObservationModel,
        path: &[usize],
        t: usize,
        code: usize,
        weight: f64,
        s0: usize,
    ) {
        if weight == 0.0 {
            return;
        }
        if t > self.horizon {
            let mu = self.mu0[s0];
            self.prob[code] += mu * weight;
            self.terminal[code][path[self.horizon]] += mu * weight;
            self.initial_cond[code][s0] += weight;
            return;
        }
        for o in 0..self.n_obs {
            let e = obs.prob(path[t], o);
            if e > 0.0 {
                self.spread_observations(obs, path, t + 1, code * self.n_obs + o, weight * e, s0);
            }
        }
    }

    fn code_of(&self, y: &[usize]) -> usize {
        y.iter().fold(0, |acc, &o| acc * self.n_obs + o)
    }

    fn decode(&self, mut code: usize) -> Vec<usize> {
        let mut y = vec![0usize; self.horizon + 1];
        for t in (0..=self.horizon).rev() {
            y[t] = code % self.n_obs;
            code /= self.n_obs;
        }
        y
    }

    /// All observation sequences with positive probability.
    pub fn sequences(&self) -> Vec<Vec<usize>> {
        (0..self.prob.len())
            .filter(|&c| self.prob[c] > 0.0)
            .map(|c| self.decode(c))
            .collect()
    }

    pub fn prob(&self, y: &[usize]) -> f64 {
        self.prob[self.code_of(y)]
    }

    pub fn terminal_joint(&self, y: &[usize]) -> &Array1<f64> {
        &self.terminal[self.code_of(y)]
    }

    pub fn prob_given_initial(&self, y: &[usize], s0: usize) -> f64 {
        self.initial_cond[self.code_of(y)][s0]
    }

    pub fn terminal_posterior(&self, y: &[usize]) -> Array1<f64> {
        let code = self.code_of(y);
        &self.terminal[code] / self.prob[code]
    }

    fn entropy_from_cells(&self, joints: impl Fn(usize) -> Vec<f64>) -> f64 {
        let mut h = 0.0;
        for code in 0..self.prob.len() {
            let p_y = self.prob[code];
            if p_y < MIN_SEQUENCE_PROB {
                continue;
            }
            for pz in joints(code) {
                if pz >= MIN_SEQUENCE_PROB {
                    h -= pz * (pz / p_y).log2();
                }
            }
        }
        h
    }

    /// Exact conditional entropy of a terminal-state secret, in bits.
    pub fn entropy_terminal(&self, classifier: &SecretClassifier, mdp: &Mdp) -> f64 {
        let n_labels = classifier.n_labels(mdp);
        self.entropy_from_cells(|code| {
            let mut cells = vec![0.0; n_labels];
            for j in 0..self.n_states {
                cells[classifier.classify(j).unwrap()] += self.terminal[code][j];
            }
            cells
        })
    }

    /// Exact conditional entropy of the initial state, in bits.
    pub fn entropy_initial(&self, mdp: &Mdp) -> f64 {
        let support = mdp.initial_support();
        self.entropy_from_cells(|code| {
            support
                .iter()
                .map(|&s0| self.mu0[s0] * self.initial_cond[code][s0])
                .collect()
        })
    }

    fn guess_error_from_cells(&self, joints: impl Fn(usize) -> Vec<f64>) -> f64 {
        let mut pe = 0.0;
        for code in 0..self.prob.len() {
            let p_y = self.prob[code];
            if p_y < MIN_SEQUENCE_PROB {
                continue;
            }
            let best = joints(code).into_iter().fold(0.0, f64::max);
            pe += p_y - best;
        }
        pe
    }

    /// Exact probability of guess error for a terminal-state secret.
    pub fn guess_error_terminal(&self, classifier: &SecretClassifier, mdp: &Mdp) -> f64 {
        let n_labels = classifier.n_labels(mdp);
        self.guess_error_from_cells(|code| {
            let mut cells = vec![0.0; n_labels];
            for j in 0..self.n_states {
                cells[classifier.classify(j).unwrap()] += self.terminal[code][j];
            }
            cells
        })
    }

    /// Exact probability of guess error for the initial-state secret.
    pub fn guess_error_initial(&self, mdp: &Mdp) -> f64 {
        let support = mdp.initial_support();
        self.guess_error_from_cells(|code| {
            support
                .iter()
                .map(|&s0| self.mu0[s0] * self.initial_cond[code][s0])
                .collect()
        })
    }
}

/// Random fully-supported instance: all transition, emission and initial
/// probabilities bounded away from zero.
pub fn random_instance(
    n_states: usize,
    n_actions: usize,
    n_obs: usize,
    seed: u64,
) -> (Mdp, ObservationModel) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw_row = |len: usize| -> Vec<f64> {
        let mut row: Vec<f64> = (0..len).map(|_| rng.gen_range(0.05..1.0)).collect();
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= sum);
        row
    };
    let mut transition = ndarray::Array3::zeros((n_states, n_actions, n_states));
    for s in 0..n_states {
        for a in 0..n_actions {
            for (s2, v) in draw_row(n_states).into_iter().enumerate() {
                transition[[s, a, s2]] = v;
            }
        }
    }
    let initial = Array1::from_vec(draw_row(n_states));
    let mut rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD_EF01);
    let reward = Array2::from_shape_fn((n_states, n_actions), |_| rng2.gen_range(0.0..1.0));
    let mdp = Mdp::new(
        (0..n_states).map(|s| format!("s{s}")).collect(),
        (0..n_actions).map(|a| format!("a{a}")).collect(),
        transition,
        initial,
        reward,
        0.9,
    )
    .unwrap();
    let mut emission = Array2::zeros((n_states, n_obs));
    for s in 0..n_states {
        for (o, v) in draw_row(n_obs).into_iter().enumerate() {
            emission[[s, o]] = v;
        }
    }
    let obs = ObservationModel::new(
        (0..n_obs).map(|o| format!("o{o}")).collect(),
        emission,
    )
    .unwrap();
    (mdp, obs)
}

/// Like [`random_instance`] but with sparse emissions (some zero entries), to
/// exercise zero-probability sequences.
pub fn random_instance_sparse(
    n_states: usize,
    n_actions: usize,
    n_obs: usize,
    seed: u64,
) -> (Mdp, ObservationModel) {
    let (mdp, obs) = random_instance(n_states, n_actions, n_obs, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5555_AAAA);
    let mut emission = obs.emission().clone();
    for s in 0..emission.nrows() {
        for o in 0..emission.ncols() {
            if rng.gen_bool(0.35) {
                emission[[s, o]] = 0.0;
            }
        }
        let sum = emission.row(s).sum();
        if sum == 0.0 {
            let o = rng.gen_range(0..emission.ncols());
            emission[[s, o]] = 1.0;
        } else {
            emission.row_mut(s).mapv_inplace(|v| v / sum);
        }
    }
    let obs = ObservationModel::new(obs.observation_names().to_vec(), emission).unwrap();
    (mdp, obs)
}

/// Central-difference gradient of a scalar function of the policy parameters.
pub fn central_diff_gradient(
    mut f: impl FnMut(&Array2<f64>) -> f64,
    theta: &Array2<f64>,
    h: f64,
) -> Array1<f64> {
    let (n, a) = (theta.nrows(), theta.ncols());
    let mut grad = Array1::zeros(n * a);
    for s in 0..n {
        for b in 0..a {
            let mut plus = theta.clone();
            plus[[s, b]] += h;
            let mut minus = theta.clone();
            minus[[s, b]] -= h;
            grad[s * a + b] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
    }
    grad
}

/// Central-difference Jacobian of a vector function of the policy parameters;
/// column `p` differentiates with respect to parameter `p`.
pub fn central_diff_jacobian(
    mut g: impl FnMut(&Array2<f64>) -> Array1<f64>,
    theta: &Array2<f64>,
    h: f64,
) -> Array2<f64> {
    let (n, a) = (theta.nrows(), theta.ncols());
    let d = n * a;
    let mut jac = Array2::zeros((d, d));
    for s in 0..n {
        for b in 0..a {
            let mut plus = theta.clone();
            plus[[s, b]] += h;
            let mut minus = theta.clone();
            minus[[s, b]] -= h;
            let diff = (g(&plus) - g(&minus)) / (2.0 * h);
            jac.column_mut(s * a + b).assign(&diff);
        }
    }
    jac
}

/// Infinity-norm relative error with a small absolute floor.
pub fn relative_error(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let diff = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    diff / scale.max(1e-9)
}

pub fn relative_error_mat(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    diff / scale.max(1e-9)
}

/// One named numeric check with its worst observed error.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub worst_error: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.worst_error <= self.tolerance
    }
}

/// Result of the verification suites.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed())
    }
}

/// Gradient finite-difference step and Hessian finite-difference step.
const FD_GRAD_H: f64 = 1e-6;
const FD_HESS_H: f64 = 1e-5;

/// Run the oracle and finite-difference suites on one instance.
///
/// Checks operator products against path enumeration, exact entropies and
/// guess errors against the joint table, gradients against central finite
/// differences, and (at `order >= 2`) Hessians against finite differences of
/// gradients plus symmetry.
pub fn run_verification(
    mdp: &Mdp,
    obs: &ObservationModel,
    classifier: &SecretClassifier,
    horizon: usize,
    order: usize,
    seed: u64,
) -> Result<VerifyReport> {
    // The joint enumeration walks every (state path, observation path) pair.
    let work = (mdp.n_states() as f64).powi(horizon as i32 + 1)
        * (obs.n_observations() as f64).powi(horizon as i32 + 1);
    const WORK_CAP: f64 = 5e7;
    if work > WORK_CAP {
        return Err(crate::error::Error::EnumerationCapExceeded {
            needed: work,
            cap: WORK_CAP as usize,
        });
    }
    let policy = SoftmaxPolicy::random(mdp.n_states(), mdp.n_actions(), seed);
    let mut checks = Vec::new();

    let table = JointTable::build(mdp, &policy, obs, horizon);
    let ops = ObservableOperatorSet::build(mdp, &policy, obs, order.min(1))?;

    // Operator products against brute-force path enumeration.
    let mut worst = 0.0f64;
    for y in table.sequences() {
        let p = crate::obsop::observation_probability(&ops, mdp.initial(), &y);
        worst = worst.max((p - table.prob(&y)).abs());
        for s0 in 0..mdp.n_states() {
            let c = crate::obsop::probability_given_initial(&ops, &y, s0);
            worst = worst.max((c - table.prob_given_initial(&y, s0)).abs());
        }
        if table.prob(&y) > 1e-12 {
            let post = crate::obsop::terminal_posterior(&ops, mdp.initial(), &y)?;
            let brute = table.terminal_posterior(&y);
            for (a, b) in post.iter().zip(brute.iter()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    checks.push(CheckOutcome {
        name: "operator products vs path enumeration".into(),
        worst_error: worst,
        tolerance: 1e-12,
    });

    // Exact entropy and guess error against the joint table.
    let exact = crate::opacity::exact_conditional_entropy(mdp, &policy, obs, classifier, horizon)?;
    let brute = match classifier {
        SecretClassifier::InitialState => table.entropy_initial(mdp),
        _ => table.entropy_terminal(classifier, mdp),
    };
    checks.push(CheckOutcome {
        name: "exact entropy vs joint enumeration".into(),
        worst_error: (exact.entropy_bits - brute).abs(),
        tolerance: 1e-12,
    });
    let pe = crate::evaluation::guess_error(
        mdp,
        &policy,
        obs,
        classifier,
        horizon,
        crate::evaluation::GuessErrorMode::Exact,
    )?;
    let pe_brute = match classifier {
        SecretClassifier::InitialState => table.guess_error_initial(mdp),
        _ => table.guess_error_terminal(classifier, mdp),
    };
    checks.push(CheckOutcome {
        name: "guess error vs joint enumeration".into(),
        worst_error: (pe.p_e - pe_brute).abs(),
        tolerance: 1e-12,
    });

    // Sequence-probability gradient against finite differences, on a few
    // sampled sequences.
    let batch = sample_batch(mdp, &policy, obs, horizon, 3, seed ^ 0x00C0_FFEE);
    let mut worst = 0.0f64;
    for y in &batch.observations {
        let grad = crate::obsop::forward_messages(&ops, mdp.initial(), y, 1)?.grad_prob_y();
        let fd = central_diff_gradient(
            |theta| {
                let p = SoftmaxPolicy::new(theta.clone());
                let ops = ObservableOperatorSet::build(mdp, &p, obs, 0).unwrap();
                crate::obsop::observation_probability(&ops, mdp.initial(), y)
            },
            policy.theta(),
            FD_GRAD_H,
        );
        worst = worst.max(relative_error(&grad, &fd));
    }
    checks.push(CheckOutcome {
        name: "sequence-probability gradient vs finite differences".into(),
        worst_error: worst,
        tolerance: 1e-5,
    });

    // Entropy gradient against finite differences (requested classifier and
    // the initial-state functional).
    let mut worst = 0.0f64;
    for cls in [classifier.clone(), SecretClassifier::InitialState] {
        let grad = crate::opacity::exact_entropy_gradient(mdp, &policy, obs, &cls, horizon)?
            .gradient
            .unwrap();
        let fd = central_diff_gradient(
            |theta| {
                let p = SoftmaxPolicy::new(theta.clone());
                crate::opacity::exact_conditional_entropy(mdp, &p, obs, &cls, horizon)
                    .unwrap()
                    .entropy_bits
            },
            policy.theta(),
            FD_GRAD_H,
        );
        worst = worst.max(relative_error(&grad, &fd));
    }
    checks.push(CheckOutcome {
        name: "entropy gradient vs finite differences".into(),
        worst_error: worst,
        tolerance: 1e-5,
    });

    if order >= 2 {
        let ops2 = ObservableOperatorSet::build(mdp, &policy, obs, 2)?;
        let y = &batch.observations[0];
        let stack = crate::obsop::forward_messages(&ops2, mdp.initial(), y, 2)?;
        let hess = stack.hessian_prob_y();
        let fd = central_diff_jacobian(
            |theta| {
                let p = SoftmaxPolicy::new(theta.clone());
                let ops = ObservableOperatorSet::build(mdp, &p, obs, 1).unwrap();
                crate::obsop::forward_messages(&ops, mdp.initial(), y, 1)
                    .unwrap()
                    .grad_prob_y()
            },
            policy.theta(),
            FD_HESS_H,
        );
        checks.push(CheckOutcome {
            name: "sequence-probability Hessian vs finite differences".into(),
            worst_error: relative_error_mat(&hess, &fd),
            tolerance: 1e-4,
        });

        let report = crate::opacity::entropy_hessian(mdp, &policy, obs, classifier, horizon)?;
        let hess = report.hessian.unwrap();
        let fd = central_diff_jacobian(
            |theta| {
                let p = SoftmaxPolicy::new(theta.clone());
                crate::opacity::exact_entropy_gradient(mdp, &p, obs, classifier, horizon)
                    .unwrap()
                    .gradient
                    .unwrap()
            },
            policy.theta(),
            FD_HESS_H,
        );
        checks.push(CheckOutcome {
            name: "entropy Hessian vs finite differences".into(),
            worst_error: relative_error_mat(&hess, &fd),
            tolerance: 1e-4,
        });

        let mut asym = 0.0f64;
        for i in 0..hess.nrows() {
            for j in 0..hess.ncols() {
                asym = asym.max((hess[[i, j]] - hess[[j, i]]).abs());
            }
        }
        checks.push(CheckOutcome {
            name: "entropy Hessian symmetry".into(),
            worst_error: asym,
            tolerance: 1e-9,
        });
    }

    Ok(VerifyReport { checks })
}

/// Split-mix style mixing of a master seed with a salt, for deriving
/// independent per-iteration or per-component seeds.
pub fn derive_seed(master: u64, salt: u64) -> u64 {
    let mut z = master ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
