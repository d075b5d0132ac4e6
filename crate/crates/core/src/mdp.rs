//! Finite MDPs, softmax policies, trajectory sampling, exact finite-horizon
//! values and their gradients, and the finite-memory-to-Markov augmentation.
//!
//! Conventions used throughout the crate:
//!
//! * A horizon `T` means trajectories carry states `s_0..s_T` and
//!   observations `o_0..o_T` (both of length `T + 1`).
//! * Returns are `G_T = sum_{t=0..=T} gamma^t R(s_t, a_t)`, so a trajectory
//!   also carries `T + 1` actions.
//! * Policy parameters form a flat vector of dimension `n_states * n_actions`
//!   indexed as `p = s * n_actions + a`.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Tolerance used when validating stochastic vectors.
pub const PROB_TOL: f64 = 1e-12;

/// Default box for softmax parameters.
pub const THETA_MIN: f64 = -700.0;
pub const THETA_MAX: f64 = 700.0;

/// Largest state space `augment_with_memory` will build.
pub const AUGMENT_SIZE_CAP: usize = 100_000;

/// A finite MDP with a common action set across states.
#[derive(Debug, Clone)]
pub struct Mdp {
    state_names: Vec<String>,
    action_names: Vec<String>,
    /// `transition[[s, a, s2]] = P(s2 | s, a)`; every row is stochastic.
    transition: Array3<f64>,
    /// Initial state distribution.
    initial: Array1<f64>,
    /// `reward[[s, a]]`.
    reward: Array2<f64>,
    discount: f64,
}

impl Mdp {
    pub fn new(
        state_names: Vec<String>,
        action_names: Vec<String>,
        transition: Array3<f64>,
        initial: Array1<f64>,
        reward: Array2<f64>,
        discount: f64,
    ) -> Result<Self> {
        let n = state_names.len();
        let a = action_names.len();
        if n == 0 || a == 0 {
            return Err(Error::InvalidModel("empty state or action set".into()));
        }
        if transition.shape() != [n, a, n] {
            return Err(Error::DimensionMismatch(format!(
                "transition tensor has shape {:?}, expected [{n}, {a}, {n}]",
                transition.shape()
            )));
        }
        if initial.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "initial distribution has length {}, expected {n}",
                initial.len()
            )));
        }
        if reward.shape() != [n, a] {
            return Err(Error::DimensionMismatch(format!(
                "reward matrix has shape {:?}, expected [{n}, {a}]",
                reward.shape()
            )));
        }
        if !(0.0..=1.0).contains(&discount) {
            return Err(Error::InvalidModel(format!(
                "discount {discount} outside [0, 1]"
            )));
        }
        for s in 0..n {
            for act in 0..a {
                let row = transition.slice(ndarray::s![s, act, ..]);
                check_distribution(row.iter().copied(), &format!("transition row ({s}, {act})"))?;
            }
        }
        check_distribution(initial.iter().copied(), "initial distribution")?;
        Ok(Self {
            state_names,
            action_names,
            transition,
            initial,
            reward,
            discount,
        })
    }

    pub fn n_states(&self) -> usize {
        self.state_names.len()
    }

    pub fn n_actions(&self) -> usize {
        self.action_names.len()
    }

    /// Flat policy-parameter dimension `n_states * n_actions`.
    pub fn n_params(&self) -> usize {
        self.n_states() * self.n_actions()
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn action_names(&self) -> &[String] {
        &self.action_names
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.state_names.iter().position(|s| s == name)
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.action_names.iter().position(|s| s == name)
    }

    pub fn transition(&self) -> &Array3<f64> {
        &self.transition
    }

    pub fn transition_prob(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.transition[[s, a, s2]]
    }

    pub fn initial(&self) -> &Array1<f64> {
        &self.initial
    }

    pub fn reward(&self) -> &Array2<f64> {
        &self.reward
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// States with positive initial mass.
    pub fn initial_support(&self) -> Vec<usize> {
        self.initial
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(s, _)| s)
            .collect()
    }
}

fn check_distribution(values: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut sum = 0.0;
    for v in values {
        if v < 0.0 {
            return Err(Error::InvalidModel(format!("{what} has negative entry {v}")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidModel(format!(
            "{what} sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// An MDP together with atomic propositions and a state labeling.
#[derive(Debug, Clone)]
pub struct LabeledMdp {
    pub mdp: Mdp,
    pub atomic_props: Vec<String>,
    /// `labels[s]` = sorted set of proposition indices true at state `s`.
    pub labels: Vec<Vec<usize>>,
}

impl LabeledMdp {
    pub fn new(mdp: Mdp, atomic_props: Vec<String>, labels: Vec<Vec<usize>>) -> Result<Self> {
        if labels.len() != mdp.n_states() {
            return Err(Error::InvalidModel(format!(
                "labeling defined for {} states, MDP has {}",
                labels.len(),
                mdp.n_states()
            )));
        }
        let mut labels = labels;
        for set in &mut labels {
            set.sort_unstable();
            set.dedup();
            if set.iter().any(|&p| p >= atomic_props.len()) {
                return Err(Error::InvalidModel(
                    "label references an unknown atomic proposition".into(),
                ));
            }
        }
        Ok(Self {
            mdp,
            atomic_props,
            labels,
        })
    }

    pub fn label(&self, s: usize) -> &[usize] {
        &self.labels[s]
    }
}

/// Softmax policy `pi(a|s) = exp(theta[s,a]) / sum_a' exp(theta[s,a'])` with a
/// box constraint on the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    theta: Array2<f64>,
    bounds: (f64, f64),
}

impl SoftmaxPolicy {
    pub fn new(theta: Array2<f64>) -> Self {
        Self::with_bounds(theta, THETA_MIN, THETA_MAX)
    }

    pub fn with_bounds(theta: Array2<f64>, theta_min: f64, theta_max: f64) -> Self {
        let mut policy = Self {
            theta,
            bounds: (theta_min, theta_max),
        };
        policy.project();
        policy
    }

    /// Uniform policy (all parameters zero).
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self::new(Array2::zeros((n_states, n_actions)))
    }

    /// Standard-normal random initialization, reproducible from `seed`.
    pub fn random(n_states: usize, n_actions: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = Array2::from_shape_fn((n_states, n_actions), |_| standard_normal(&mut rng));
        Self::new(theta)
    }

    pub fn theta(&self) -> &Array2<f64> {
        &self.theta
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    pub fn n_states(&self) -> usize {
        self.theta.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.theta.ncols()
    }

    /// Clamp every parameter into the box.
    pub fn project(&mut self) {
        let (lo, hi) = self.bounds;
        self.theta.mapv_inplace(|v| v.clamp(lo, hi));
    }

    /// In-place ascent step `theta += step`, then projection.
    pub fn step(&mut self, step: &Array2<f64>) {
        self.theta += step;
        self.project();
    }

    /// Action distribution at state `s`, stabilized by max-subtraction.
    pub fn action_distribution(&self, s: usize) -> Array1<f64> {
        let row = self.theta.row(s);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut out: Array1<f64> = row.mapv(|v| (v - max).exp());
        let sum = out.sum();
        out /= sum;
        out
    }

    /// All action distributions as an `n_states x n_actions` matrix.
    pub fn all_action_probs(&self) -> Array2<f64> {
        let mut probs = Array2::zeros(self.theta.raw_dim());
        for s in 0..self.n_states() {
            probs.row_mut(s).assign(&self.action_distribution(s));
        }
        probs
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on two uniform draws; avoids pulling in rand_distr.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// The chain over states induced by a policy, in the column convention
/// `chain[[i, j]] = P(S_{t+1} = i | S_t = j)`; every column sums to one.
pub fn induced_chain(mdp: &Mdp, policy: &SoftmaxPolicy) -> Array2<f64> {
    let n = mdp.n_states();
    let mut chain = Array2::zeros((n, n));
    for j in 0..n {
        let probs = policy.action_distribution(j);
        for a in 0..mdp.n_actions() {
            let pa = probs[a];
            if pa == 0.0 {
                continue;
            }
            for i in 0..n {
                chain[[i, j]] += pa * mdp.transition_prob(j, a, i);
            }
        }
    }
    chain
}

/// Row-stochastic companion of [`induced_chain`]:
/// `chain_from[[i, j]] = P(S_{t+1} = j | S_t = i)`.
pub fn induced_chain_from(mdp: &Mdp, policy: &SoftmaxPolicy) -> Array2<f64> {
    induced_chain(mdp, policy).reversed_axes().as_standard_layout().to_owned()
}

/// Exact finite-horizon value `E[sum_{t=0..=T} gamma^t R(S_t, A_t)]` by
/// backward induction.
pub fn finite_horizon_value(mdp: &Mdp, policy: &SoftmaxPolicy, horizon: usize) -> f64 {
    let n = mdp.n_states();
    let probs = policy.all_action_probs();
    let mut r_pi = Array1::zeros(n);
    for s in 0..n {
        r_pi[s] = probs.row(s).dot(&mdp.reward().row(s));
    }
    let mut value = r_pi.clone();
    for _ in 0..horizon {
        // value <- r_pi + gamma * F_pi * value
        let mut next = r_pi.clone();
        for s in 0..n {
            let mut acc = 0.0;
            for a in 0..mdp.n_actions() {
                let pa = probs[[s, a]];
                if pa == 0.0 {
                    continue;
                }
                for s2 in 0..n {
                    acc += pa * mdp.transition_prob(s, a, s2) * value[s2];
                }
            }
            next[s] += mdp.discount() * acc;
        }
        value = next;
    }
    mdp.initial().dot(&value)
}

/// Best achievable finite-horizon value over all (history-dependent) policies,
/// by backward induction with a max over actions.
pub fn finite_horizon_optimal_value(mdp: &Mdp, horizon: usize) -> f64 {
    let n = mdp.n_states();
    let a = mdp.n_actions();
    let mut value: Array1<f64> = Array1::from_shape_fn(n, |s| {
        (0..a).map(|act| mdp.reward()[[s, act]]).fold(f64::NEG_INFINITY, f64::max)
    });
    for _ in 0..horizon {
        let mut next = Array1::zeros(n);
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            for act in 0..a {
                let mut q = mdp.reward()[[s, act]];
                let mut cont = 0.0;
                for s2 in 0..n {
                    cont += mdp.transition_prob(s, act, s2) * value[s2];
                }
                q += mdp.discount() * cont;
                best = best.max(q);
            }
            next[s] = best;
        }
        value = next;
    }
    mdp.initial().dot(&value)
}

/// Exact gradient of the finite-horizon value with respect to the flat policy
/// parameters, by differentiating the backward induction.
pub fn exact_value_gradient(mdp: &Mdp, policy: &SoftmaxPolicy, horizon: usize) -> Array1<f64> {
    let n = mdp.n_states();
    let a = mdp.n_actions();
    let d = n * a;
    let probs = policy.all_action_probs();
    let gamma = mdp.discount();

    // Backward level T.
    let mut value = Array1::zeros(n);
    for s in 0..n {
        value[s] = probs.row(s).dot(&mdp.reward().row(s));
    }
    let mut grad: Array2<f64> = Array2::zeros((n, d));
    for s in 0..n {
        for b in 0..a {
            grad[[s, s * a + b]] = probs[[s, b]] * (mdp.reward()[[s, b]] - value[s]);
        }
    }

    for _ in 0..horizon {
        let mut value_next = Array1::zeros(n);
        let mut grad_next = Array2::zeros((n, d));
        for s in 0..n {
            // Q values at this level.
            let mut q = Array1::zeros(a);
            for act in 0..a {
                let mut cont = 0.0;
                for s2 in 0..n {
                    cont += mdp.transition_prob(s, act, s2) * value[s2];
                }
                q[act] = mdp.reward()[[s, act]] + gamma * cont;
            }
            let v = probs.row(s).dot(&q);
            value_next[s] = v;
            // Local softmax term on block s.
            for b in 0..a {
                grad_next[[s, s * a + b]] = probs[[s, b]] * (q[b] - v);
            }
            // Continuation term.
            for act in 0..a {
                let pa = probs[[s, act]];
                if pa == 0.0 {
                    continue;
                }
                for s2 in 0..n {
                    let w = gamma * pa * mdp.transition_prob(s, act, s2);
                    if w == 0.0 {
                        continue;
                    }
                    let src = grad.row(s2);
                    let mut dst = grad_next.row_mut(s);
                    dst.scaled_add(w, &src);
                }
            }
        }
        value = value_next;
        grad = grad_next;
    }

    let mut out = Array1::zeros(d);
    for s in 0..n {
        let w = mdp.initial()[s];
        if w > 0.0 {
            out.scaled_add(w, &grad.row(s));
        }
    }
    out
}

/// A batch of sampled trajectories.
///
/// Each trajectory carries `T + 1` states, actions and observations; the
/// discounted return sums rewards over `t = 0..=T`.
#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    pub states: Vec<Vec<usize>>,
    pub actions: Vec<Vec<usize>>,
    pub observations: Vec<Vec<usize>>,
    pub returns: Vec<f64>,
    pub seed: u64,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn mean_return(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len() as f64
    }
}

fn sample_index(rng: &mut ChaCha8Rng, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Sample `m` independent trajectories of horizon `horizon` under the policy.
///
/// Per-trajectory randomness comes from a dedicated ChaCha stream derived from
/// `(seed, trajectory index)`, so batches are bit-identical for a given seed
/// regardless of scheduling. Within a step the draw order is observation,
/// action, successor state.
pub fn sample_batch(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    obs: &crate::obsop::ObservationModel,
    horizon: usize,
    m: usize,
    seed: u64,
) -> TrajectoryBatch {
    let probs = policy.all_action_probs();
    let mut states = Vec::with_capacity(m);
    let mut actions = Vec::with_capacity(m);
    let mut observations = Vec::with_capacity(m);
    let mut returns = Vec::with_capacity(m);
    for k in 0..m {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut s_seq = Vec::with_capacity(horizon + 1);
        let mut a_seq = Vec::with_capacity(horizon + 1);
        let mut o_seq = Vec::with_capacity(horizon + 1);
        let mut ret = 0.0;
        let mut disc = 1.0;
        let mut s = sample_index(&mut rng, mdp.initial().iter().copied());
        for t in 0..=horizon {
            s_seq.push(s);
            o_seq.push(sample_index(&mut rng, obs.emission_row(s).iter().copied()));
            let a = sample_index(&mut rng, probs.row(s).iter().copied());
            a_seq.push(a);
            ret += disc * mdp.reward()[[s, a]];
            disc *= mdp.discount();
            if t < horizon {
                s = sample_index(
                    &mut rng,
                    (0..mdp.n_states()).map(|s2| mdp.transition_prob(s, a, s2)),
                );
            }
        }
        states.push(s_seq);
        actions.push(a_seq);
        observations.push(o_seq);
        returns.push(ret);
    }
    TrajectoryBatch {
        states,
        actions,
        observations,
        returns,
        seed,
    }
}

/// REINFORCE estimate of the value gradient from a batch sampled under the
/// same policy: `(1/M) sum_k G_k sum_t grad log pi(a_t | s_t)`.
pub fn reinforce_value_gradient(batch: &TrajectoryBatch, policy: &SoftmaxPolicy) -> Array1<f64> {
    let n = policy.n_states();
    let a = policy.n_actions();
    let probs = policy.all_action_probs();
    let mut grad = Array1::zeros(n * a);
    for k in 0..batch.len() {
        let g = batch.returns[k];
        if g == 0.0 {
            continue;
        }
        for (t, &s) in batch.states[k].iter().enumerate() {
            let act = batch.actions[k][t];
            for b in 0..a {
                let indicator = if b == act { 1.0 } else { 0.0 };
                grad[s * a + b] += g * (indicator - probs[[s, b]]);
            }
        }
    }
    grad / batch.len() as f64
}

/// Per-component standard errors of the REINFORCE estimator, for tolerance
/// selection in stochastic tests.
pub fn reinforce_gradient_std_err(batch: &TrajectoryBatch, policy: &SoftmaxPolicy) -> Array1<f64> {
    let n = policy.n_states();
    let a = policy.n_actions();
    let d = n * a;
    let probs = policy.all_action_probs();
    let m = batch.len();
    let mut sum = Array1::<f64>::zeros(d);
    let mut sum_sq = Array1::<f64>::zeros(d);
    let mut per_traj = Array1::<f64>::zeros(d);
    for k in 0..m {
        per_traj.fill(0.0);
        let g = batch.returns[k];
        for (t, &s) in batch.states[k].iter().enumerate() {
            let act = batch.actions[k][t];
            for b in 0..a {
                let indicator = if b == act { 1.0 } else { 0.0 };
                per_traj[s * a + b] += g * (indicator - probs[[s, b]]);
            }
        }
        sum += &per_traj;
        sum_sq += &per_traj.mapv(|v| v * v);
    }
    let mf = m as f64;
    let mean = sum / mf;
    let var = sum_sq / mf - mean.mapv(|v| v * v);
    var.mapv(|v| (v.max(0.0) / mf).sqrt())
}

/// Deterministic or stochastic memory update of a finite-state transducer
/// driving a finite-memory policy.
#[derive(Debug, Clone)]
pub enum MemoryUpdate {
    /// `next[m][s]`: the memory consumes each arriving state, including the
    /// initial one, so the memory in force at time 0 is `next[m0][s_0]`.
    State(Vec<Vec<usize>>),
    /// `dist[m][s][a]`: distribution over successor memories given the
    /// departing `(state, action)`; the memory in force at time 0 is `m0`.
    StateAction(Vec<Vec<Vec<Vec<f64>>>>),
}

/// Finite-memory transducer over MDP states (and optionally actions).
#[derive(Debug, Clone)]
pub struct MemoryTransducer {
    pub memory_names: Vec<String>,
    pub initial_memory: usize,
    pub update: MemoryUpdate,
}

impl MemoryTransducer {
    pub fn n_memory(&self) -> usize {
        self.memory_names.len()
    }

    /// A counter that ticks once per consumed state and saturates at
    /// `n - 1`. On an augmentation this exposes elapsed time to the policy.
    pub fn time_counter(n: usize) -> Self {
        let names = (0..n).map(|i| format!("c{i}")).collect();
        // next[m][*] = min(m + 1, n - 1); the state input is ignored.
        MemoryTransducer {
            memory_names: names,
            initial_memory: 0,
            update: MemoryUpdate::State(vec![vec![]; n]),
        }
    }

    fn state_update(&self, m: usize, s: usize) -> usize {
        match &self.update {
            MemoryUpdate::State(next) => {
                if next[m].is_empty() {
                    // time_counter convention: saturating tick.
                    (m + 1).min(self.n_memory() - 1)
                } else {
                    next[m][s]
                }
            }
            MemoryUpdate::StateAction(_) => unreachable!("state_update on state-action transducer"),
        }
    }

    fn validate(&self, mdp: &Mdp) -> Result<()> {
        let nm = self.n_memory();
        if self.initial_memory >= nm {
            return Err(Error::InvalidModel("initial memory out of range".into()));
        }
        match &self.update {
            MemoryUpdate::State(next) => {
                for (m, row) in next.iter().enumerate() {
                    if row.is_empty() {
                        continue; // time_counter convention
                    }
                    if row.len() != mdp.n_states() {
                        return Err(Error::InvalidModel(format!(
                            "memory update row {m} covers {} states, MDP has {}",
                            row.len(),
                            mdp.n_states()
                        )));
                    }
                    if row.iter().any(|&m2| m2 >= nm) {
                        return Err(Error::InvalidModel("memory update out of range".into()));
                    }
                }
            }
            MemoryUpdate::StateAction(dist) => {
                if dist.len() != nm {
                    return Err(Error::InvalidModel("memory update not total".into()));
                }
                for per_m in dist {
                    if per_m.len() != mdp.n_states() {
                        return Err(Error::InvalidModel("memory update not total".into()));
                    }
                    for per_s in per_m {
                        if per_s.len() != mdp.n_actions() {
                            return Err(Error::InvalidModel("memory update not total".into()));
                        }
                        for per_a in per_s {
                            check_distribution(per_a.iter().copied(), "memory update")?;
                            if per_a.len() != nm {
                                return Err(Error::InvalidModel(
                                    "memory update distribution has wrong arity".into(),
                                ));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Result of a memory augmentation, with projections back to the base MDP.
#[derive(Debug, Clone)]
pub struct MemoryAugmentation {
    pub mdp: Mdp,
    /// Base state of augmented state `v`.
    pub base_state: Vec<usize>,
    /// Memory component of augmented state `v`.
    pub memory_state: Vec<usize>,
}

/// Build the augmented MDP over `S x M` on which Markov policies realize
/// finite-memory policies of the base MDP.
///
/// Augmented state `(s, m)` has index `s * |M| + m`. Rewards are copied from
/// the base state-action pair; the discount is unchanged.
pub fn augment_with_memory(mdp: &Mdp, transducer: &MemoryTransducer) -> Result<MemoryAugmentation> {
    transducer.validate(mdp)?;
    let n = mdp.n_states();
    let a = mdp.n_actions();
    let nm = transducer.n_memory();
    let size = n * nm;
    if size > AUGMENT_SIZE_CAP {
        return Err(Error::SizeCapExceeded {
            size,
            cap: AUGMENT_SIZE_CAP,
        });
    }
    let idx = |s: usize, m: usize| s * nm + m;
    let mut names = Vec::with_capacity(size);
    let mut base_state = Vec::with_capacity(size);
    let mut memory_state = Vec::with_capacity(size);
    for s in 0..n {
        for m in 0..nm {
            names.push(format!(
                "{}|{}",
                mdp.state_names()[s],
                transducer.memory_names[m]
            ));
            base_state.push(s);
            memory_state.push(m);
        }
    }

    let mut transition = Array3::zeros((size, a, size));
    let mut reward = Array2::zeros((size, a));
    for s in 0..n {
        for m in 0..nm {
            let v = idx(s, m);
            for act in 0..a {
                reward[[v, act]] = mdp.reward()[[s, act]];
                for s2 in 0..n {
                    let p = mdp.transition_prob(s, act, s2);
                    if p == 0.0 {
                        continue;
                    }
                    match &transducer.update {
                        MemoryUpdate::State(_) => {
                            let m2 = transducer.state_update(m, s2);
                            transition[[v, act, idx(s2, m2)]] += p;
                        }
                        MemoryUpdate::StateAction(dist) => {
                            for (m2, &q) in dist[m][s][act].iter().enumerate() {
                                if q > 0.0 {
                                    transition[[v, act, idx(s2, m2)]] += p * q;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let mut initial = Array1::zeros(size);
    for s in 0..n {
        let p = mdp.initial()[s];
        if p == 0.0 {
            continue;
        }
        let m0 = match &transducer.update {
            // The transducer consumes s_0 before the first action is chosen.
            MemoryUpdate::State(_) => transducer.state_update(transducer.initial_memory, s),
            MemoryUpdate::StateAction(_) => transducer.initial_memory,
        };
        initial[idx(s, m0)] = p;
    }

    let action_names = mdp.action_names().to_vec();
    let mdp = Mdp::new(
        names,
        action_names,
        transition,
        initial,
        reward,
        mdp.discount(),
    )?;
    Ok(MemoryAugmentation {
        mdp,
        base_state,
        memory_state,
    })
}
