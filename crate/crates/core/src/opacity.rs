//! Conditional-entropy functionals of a secret given the observer's
//! observation sequence, exact (full enumeration with prefix sharing) and
//! sampled, together with their gradients and Hessians in the policy
//! parameters.
//!
//! All entropies are in bits. Exact sums use the convention `0 log 0 = 0`;
//! sequences below [`MIN_SEQUENCE_PROB`](crate::obsop::MIN_SEQUENCE_PROB) are
//! excluded.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::mdp::{sample_batch, Mdp, SoftmaxPolicy};
use crate::obsop::{
    backward_messages, ObservableOperatorSet, ObservationModel, MIN_SEQUENCE_PROB,
};

const LN2: f64 = std::f64::consts::LN_2;

/// What the observer is trying to infer.
#[derive(Debug, Clone)]
pub enum SecretClassifier {
    /// Binary secret: whether the state at the horizon lies in the secret set.
    TerminalMembership { secret: Vec<bool> },
    /// k-ary secret: a partition of states, e.g. the automaton component of a
    /// product state.
    TerminalPartition {
        cell_of_state: Vec<usize>,
        labels: Vec<String>,
    },
    /// The secret is the realized initial state; its label set is the support
    /// of the initial distribution.
    InitialState,
}

impl SecretClassifier {
    pub fn membership(secret: Vec<bool>) -> Self {
        SecretClassifier::TerminalMembership { secret }
    }

    pub fn membership_of(mdp: &Mdp, secret_states: &[usize]) -> Self {
        let mut secret = vec![false; mdp.n_states()];
        for &s in secret_states {
            secret[s] = true;
        }
        SecretClassifier::TerminalMembership { secret }
    }

    pub fn n_labels(&self, mdp: &Mdp) -> usize {
        match self {
            SecretClassifier::TerminalMembership { .. } => 2,
            SecretClassifier::TerminalPartition { labels, .. } => labels.len(),
            SecretClassifier::InitialState => mdp.initial_support().len(),
        }
    }

    pub fn label_names(&self, mdp: &Mdp) -> Vec<String> {
        match self {
            SecretClassifier::TerminalMembership { .. } => vec!["0".into(), "1".into()],
            SecretClassifier::TerminalPartition { labels, .. } => labels.clone(),
            SecretClassifier::InitialState => mdp
                .initial_support()
                .iter()
                .map(|&s| mdp.state_names()[s].clone())
                .collect(),
        }
    }

    /// Cell index of a state for terminal kinds.
    pub fn classify(&self, state: usize) -> Option<usize> {
        match self {
            SecretClassifier::TerminalMembership { secret } => {
                Some(if secret[state] { 1 } else { 0 })
            }
            SecretClassifier::TerminalPartition { cell_of_state, .. } => Some(cell_of_state[state]),
            SecretClassifier::InitialState => None,
        }
    }

    fn validate(&self, mdp: &Mdp) -> Result<()> {
        let n = mdp.n_states();
        let ok = match self {
            SecretClassifier::TerminalMembership { secret } => secret.len() == n,
            SecretClassifier::TerminalPartition {
                cell_of_state,
                labels,
            } => cell_of_state.len() == n && cell_of_state.iter().all(|&c| c < labels.len()),
            SecretClassifier::InitialState => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(
                "classifier does not cover the state space".into(),
            ))
        }
    }

    fn terminal_cells(&self, mdp: &Mdp) -> Option<(Vec<usize>, usize)> {
        match self {
            SecretClassifier::TerminalMembership { secret } => Some((
                secret.iter().map(|&b| usize::from(b)).collect(),
                2,
            )),
            SecretClassifier::TerminalPartition {
                cell_of_state,
                labels,
            } => Some((cell_of_state.clone(), labels.len())),
            SecretClassifier::InitialState => {
                let _ = mdp;
                None
            }
        }
    }
}

/// How an [`EntropyReport`] was produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EntropyMode {
    Exact,
    Sampled { m: usize, seed: u64 },
}

/// One enumerated observation sequence, for reporting.
#[derive(Debug, Clone)]
pub struct SequenceDiagnostic {
    pub sequence: Vec<usize>,
    pub prob: f64,
    pub posterior: Vec<f64>,
    pub contribution_bits: f64,
}

/// Entropy value with optional derivatives and per-sequence diagnostics.
#[derive(Debug, Clone)]
pub struct EntropyReport {
    pub entropy_bits: f64,
    pub gradient: Option<Array1<f64>>,
    pub hessian: Option<Array2<f64>>,
    pub mode: EntropyMode,
    pub diagnostics: Option<Vec<SequenceDiagnostic>>,
}

/// Caps for exact enumeration.
#[derive(Debug, Clone, Copy)]
pub struct ExactConfig {
    pub sequence_cap: usize,
}

impl Default for ExactConfig {
    fn default() -> Self {
        ExactConfig {
            sequence_cap: 1_000_000,
        }
    }
}

/// Exact conditional entropy of the secret given `O_{0:T}`, in bits.
pub fn exact_conditional_entropy(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    obs: &ObservationModel,
    classifier: &SecretClassifier,
    horizon: usize,
) -> Result<EntropyReport> {
    exact_report(mdp, policy, obs, classifier, horizon, 0, ExactConfig::default(), false)
}

/// Exact entropy together with its gradient.
pub fn exact_entropy_gradient(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    obs: &ObservationModel,
    classifier: &SecretClassifier,
    horizon: usize,
) -> Result<EntropyReport> {
    exact_report(mdp, policy, obs, classifier, horizon, 1, ExactConfig::default(), false)
}

/// Exact entropy together with gradient and Hessian.
pub fn entropy_hessian(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    obs: &ObservationModel,
    classifier: &SecretClassifier,
    horizon: usize,
) -> Result<EntropyReport> {
    exact_report(mdp, policy, obs, classifier, horizon, 2, ExactConfig::default(), false)
}

/// Exact entropy with per-sequence diagnostics (probabilities, posteriors and
/// entropy contributions for every feasible observation sequence).
pub fn exact_with_diagnostics(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    obs: &ObservationModel,
    classifier: &SecretClassifier,
    horizon: usize,
    config: ExactConfig,
) -> Result<EntropyReport> {
    exact_report(mdp, policy, obs, classifier, horizon, 0, config, true)
}

/// `x log2 x` with the `0 log 0 = 0` convention handled by callers skipping
/// tiny masses.
#[inline]
fn phi(x: f64) -> f64 {
    x * x.log2()
}

#[inline]
fn dphi(x: f64) -> f64 {
    x.log2() + 1.0 / LN2
}

// Per-slot forward quantities at one DFS level.
struct LevelBuf {
    alpha: Vec<Array1<f64>>,
    grad: Vec<Array2<f64>>,
    hess: Vec<Vec<Array2<f64>>>,
}

impl LevelBuf {
    fn new(slots: usize, n: usize, d: usize, order: usize) -> Self {
        LevelBuf {
            alpha: vec![Array1::zeros(n); slots],
            grad: if order >= 1 {
                vec![Array2::zeros((n, d)); slots]
            } else {
                Vec::new()
            },
            hess: if order >= 2 {
                vec![vec![Array2::zeros((d, d)); n]; slots]
            } else {
                Vec::new()
            },
        }
    }
}

// Forward DFS over observation prefixes with one message stack per slot.
// Slots are either the single real initial distribution (terminal secrets) or
// one indicator per initial state (initial-state secret).
struct ForwardDfs<'a> {
    ops: &'a ObservableOperatorSet,
    seeds: Vec<Array1<f64>>,
    levels: Vec<LevelBuf>,
    order: usize,
}

impl<'a> ForwardDfs<'a> {
    fn new(
        ops: &'a ObservableOperatorSet,
        seeds: Vec<Array1<f64>>,
        horizon: usize,
        order: usize,
    ) -> Self {
        let n = ops.n_states();
        let d = ops.n_params();
        let levels = (0..=horizon)
            .map(|_| LevelBuf::new(seeds.len(), n, d, order))
            .collect();
        ForwardDfs {
            ops,
            seeds,
            levels,
            order,
        }
    }

    fn n_slots(&self) -> usize {
        self.seeds.len()
    }

    /// Compute level `t` for observation `o`; returns the total mass across
    /// slots (zero mass means the whole subtree is infeasible).
    fn step(&mut self, t: usize, o: usize) -> f64 {
        let slots = self.n_slots();
        let mut mass = 0.0;
        if t == 0 {
            let level = &mut self.levels[0];
            for k in 0..slots {
                self.ops.forward_init(&self.seeds[k], o, &mut level.alpha[k]);
                mass += level.alpha[k].sum();
                if self.order >= 1 {
                    level.grad[k].fill(0.0);
                }
                if self.order >= 2 {
                    for h in &mut level.hess[k] {
                        h.fill(0.0);
                    }
                }
            }
            return mass;
        }
        let (prev_slice, cur_slice) = self.levels.split_at_mut(t);
        let prev = &prev_slice[t - 1];
        let cur = &mut cur_slice[0];
        for k in 0..slots {
            self.ops.forward_step_value(o, &prev.alpha[k], &mut cur.alpha[k]);
            mass += cur.alpha[k].sum();
            if self.order >= 2 {
                self.ops.forward_step_hess(
                    o,
                    &prev.alpha[k],
                    &prev.grad[k],
                    &prev.hess[k],
                    &mut cur.hess[k],
                );
            }
            if self.order >= 1 {
                self.ops
                    .forward_step_grad(o, &prev.alpha[k], &prev.grad[k], &mut cur.grad[k]);
            }
        }
        mass
    }

    fn leaf(&self, horizon: usize) -> &LevelBuf {
        &self.levels[horizon]
    }
}

// Label-level joints at a leaf: p(z, y) with optional derivatives.
struct LabelJoints {
    p: Vec<f64>,
    grad: Option<Vec<Array1<f64>>>,
    hess: Option<Vec<Array2<f64>>>,
}

enum SecretKind {
    Terminal { cell_of_state: Vec<usize>, n_cells: usize },
    Initial { support: Vec<usize>, weights: Vec<f64> },
}

impl SecretKind {
    fn from_classifier(classifier: &SecretClassifier, mdp: &Mdp) -> Self {
        match classifier.terminal_cells(mdp) {
            Some((cell_of_state, n_cells)) => SecretKind::Terminal {
                cell_of_state,
                n_cells,
            },
            None => {
                let support = mdp.initial_support();
                let weights = support.iter().map(|&s| mdp.initial()[s]).collect();
                SecretKind::Initial { support, weights }
            }
        }
    }

    fn n_labels(&self) -> usize {
        match self {
            SecretKind::Terminal { n_cells, .. } => *n_cells,
            SecretKind::Initial { support, .. } => support.len(),
        }
    }

    fn seeds(&self, mdp: &Mdp) -> Vec<Array1<f64>> {
        match self {
            SecretKind::Terminal { .. } => vec![mdp.initial().clone()],
            SecretKind::Initial { support, .. } => support
                .iter()
                .map(|&s0| {
                    let mut e = Array1::zeros(mdp.n_states());
                    e[s0] = 1.0;
                    e
                })
                .collect(),
        }
    }

    fn joints(&self, leaf: &LevelBuf, order: usize, d: usize) -> LabelJoints {
        let nz = self.n_labels();
        let mut p = vec![0.0; nz];
        let mut grad = (order >= 1).then(|| vec![Array1::zeros(d); nz]);
        let mut hess = (order >= 2).then(|| vec![Array2::zeros((d, d)); nz]);
        match self {
            SecretKind::Terminal { cell_of_state, .. } => {
                let alpha = &leaf.alpha[0];
                for (j, &cell) in cell_of_state.iter().enumerate() {
                    p[cell] += alpha[j];
                    if let Some(g) = grad.as_mut() {
                        g[cell] += &leaf.grad[0].row(j);
                    }
                    if let Some(h) = hess.as_mut() {
                        h[cell] += &leaf.hess[0][j];
                    }
                }
            }
            SecretKind::Initial { weights, .. } => {
                for (k, &w) in weights.iter().enumerate() {
                    p[k] = w * leaf.alpha[k].sum();
                    if let Some(g) = grad.as_mut() {
                        g[k] = leaf.grad[k].sum_axis(ndarray::Axis(0)) * w;
                    }
                    if let Some(h) = hess.as_mut() {
                        let mut acc = Array2::zeros((d, d));
                        for hj in &leaf.hess[k] {
                            acc += hj;
                        }
                        h[k] = acc * w;
                    }
                }
            }
        }
        LabelJoints { p, grad, hess }
    }
}

struct ExactAccumulator {
    entropy: f64,
    gradient: Option<Array1<f64>>,
    hessian: Option<Array2<f64>>,
    diagnostics: Option<Vec<SequenceDiagnostic>>,
}

impl ExactAccumulator {
    // Adds -sum_z phi(p_z) + phi(p_y) and its derivatives.
    fn add_leaf(&mut self, joints: &LabelJoints, y: &[usize]) {
        let p_y: f64 = joints.p.iter().sum();
        if p_y < MIN_SEQUENCE_PROB {
            return;
        }
        if let Some(diags) = self.diagnostics.as_mut() {
            let posterior: Vec<f64> = joints.p.iter().map(|&pz| pz / p_y).collect();
            let bits = -joints
                .p
                .iter()
                .filter(|&&pz| pz >= MIN_SEQUENCE_PROB)
                .map(|&pz| pz * (pz / p_y).log2())
                .sum::<f64>();
            diags.push(SequenceDiagnostic {
                sequence: y.to_vec(),
                prob: p_y,
                posterior,
                contribution_bits: bits,
            });
        }
        // A leaf whose mass sits in a single label is deterministic for the
        // observer; it contributes nothing at any derivative order.
        let active = joints
            .p
            .iter()
            .filter(|&&pz| pz >= MIN_SEQUENCE_PROB)
            .count();
        if active <= 1 {
            return;
        }
        let mut contribution = phi(p_y);
        for &pz in &joints.p {
            if pz >= MIN_SEQUENCE_PROB {
                contribution -= phi(pz);
            }
        }
        self.entropy += contribution;

        if let Some(total) = self.gradient.as_mut() {
            let grads = joints.grad.as_ref().unwrap();
            let mut grad_py = Array1::zeros(total.len());
            for g in grads {
                grad_py += g;
            }
            total.scaled_add(dphi(p_y), &grad_py);
            for (z, &pz) in joints.p.iter().enumerate() {
                if pz >= MIN_SEQUENCE_PROB {
                    total.scaled_add(-dphi(pz), &grads[z]);
                }
            }
        }

        if let Some(total) = self.hessian.as_mut() {
            let grads = joints.grad.as_ref().unwrap();
            let hesses = joints.hess.as_ref().unwrap();
            let d = total.nrows();
            let mut grad_py = Array1::zeros(d);
            let mut hess_py = Array2::zeros((d, d));
            for g in grads {
                grad_py += g;
            }
            for h in hesses {
                hess_py += h;
            }
            // hess phi(x) = dphi(x) hess x + grad x grad x^T / (x ln 2)
            total.scaled_add(dphi(p_y), &hess_py);
            add_outer(total, &grad_py, 1.0 / (p_y * LN2));
            for (z, &pz) in joints.p.iter().enumerate() {
                if pz >= MIN_SEQUENCE_PROB {
                    total.scaled_add(-dphi(pz), &hesses[z]);
                    add_outer(total, &grads[z], -1.0 / (pz * LN2));
                }
            }
        }
    }
}

fn add_outer(total: &mut Array2<f64>, v: &Array1<f64>, scale: f64) {
    let d = v.len();
    for i in 0..d {
        let vi = v[i] * scale;
        if vi == 0.0 {
            continue;
        }
        for j in 0..d {
            total[[i, j]] += vi * v[j];
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn exact_report(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    obs: &ObservationModel,
    classifier: &SecretClassifier,
    horizon: usize,
    order: usize,
    config: ExactConfig,
    diagnostics: bool,
) -> Result<EntropyReport> {
    classifier.validate(mdp)?;
    let needed = (obs.n_observations() as f64).powi(horizon as i32 + 1);
    if needed > config.sequence_cap as f64 {
        return Err(Error::EnumerationCapExceeded {
            needed,
            cap: config.sequence_cap,
        });
    }
    let ops = ObservableOperatorSet::build(mdp, policy, obs, order)?;
    let kind = SecretKind::from_classifier(classifier, mdp);
    let d = ops.n_params();
    let mut dfs = ForwardDfs::new(&ops, kind.seeds(mdp), horizon, order);
    let mut acc = ExactAccumulator {
        entropy: 0.0,
        gradient: (order >= 1).then(|| Array1::zeros(d)),
        hessian: (order >= 2).then(|| Array2::zeros((d, d))),
        diagnostics: diagnostics.then(Vec::new),
    };

    let n_obs = ops.n_observations();
    let mut y = vec![0usize; horizon + 1];
    // Depth-first over all observation sequences, sharing prefix work and
    // pruning zero-mass subtrees.
    fn recurse(
        dfs: &mut ForwardDfs<'_>,
        kind: &SecretKind,
        acc: &mut ExactAccumulator,
        y: &mut Vec<usize>,
        t: usize,
        horizon: usize,
        n_obs: usize,
        order: usize,
        d: usize,
    ) {
        for o in 0..n_obs {
            y[t] = o;
            let mass = dfs.step(t, o);
            if mass < MIN_SEQUENCE_PROB {
                continue;
            }
            if t == horizon {
                let joints = kind.joints(dfs.leaf(horizon), order, d);
                acc.add_leaf(&joints, y);
            } else {
                recurse(dfs, kind, acc, y, t + 1, horizon, n_obs, order, d);
            }
        }
    }
    recurse(
        &mut dfs, &kind, &mut acc, &mut y, 0, horizon, n_obs, order, d,
    );

    Ok(EntropyReport {
        entropy_bits: acc.entropy,
        gradient: acc.gradient,
        hessian: acc.hessian,
        mode: EntropyMode::Exact,
        diagnostics: acc.diagnostics,
    })
}

/// Per-sequence posterior entropy and its gradient contribution, shared by
/// the sampled estimators.
fn posterior_terms(
    p_y: f64,
    joints: &LabelJoints,
    want_grad: bool,
    d: usize,
) -> (f64, Option<Array1<f64>>) {
    let mut h = 0.0;
    let mut g = want_grad.then(|| Array1::zeros(d));
    // Single-label leaves are deterministic for the observer and contribute
    // exactly nothing.
    let active = joints
        .p
        .iter()
        .filter(|&&pz| pz / p_y >= MIN_SEQUENCE_PROB)
        .count();
    if active <= 1 {
        return (h, g);
    }
    let grad_py = joints.grad.as_ref().map(|grads| {
        let mut acc = Array1::zeros(d);
        for gz in grads {
            acc += gz;
        }
        acc
    });
    for (z, &pz) in joints.p.iter().enumerate() {
        let r = pz / p_y;
        if r < MIN_SEQUENCE_PROB {
            continue;
        }
        let log_r = r.log2();
        h -= r * log_r;
        if let Some(gacc) = g.as_mut() {
            let grads = joints.grad.as_ref().unwrap();
            let grad_py = grad_py.as_ref().unwrap();
            // grad r = (grad p_z - r grad p_y) / p_y
            let mut grad_r = grads[z].clone();
            grad_r.scaled_add(-r, grad_py);
            grad_r /= p_y;
            // -[log2(r) grad r + r log2(r) grad ln P(y) + grad r / ln2]
            gacc.scaled_add(-(log_r + 1.0 / LN2), &grad_r);
            gacc.scaled_add(-r * log_r / p_y, grad_py);
        }
    }
    (h, g)
}

/// Entropy estimate (and gradient) from a given collection of observation
/// sequences, weighted uniformly; the estimator is unbiased when the
/// sequences are drawn from the policy-induced process.
pub fn entropy_estimate_from_sequences(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    obs: &ObservationModel,
    classifier: &SecretClassifier,
    sequences: &[Vec<usize>],
    want_grad: bool,
) -> Result<(f64, Option<Array1<f64>>)> {
    classifier.validate(mdp)?;
    assert!(!sequences.is_empty());
    let order = usize::from(want_grad);
    let ops = ObservableOperatorSet::build(mdp, policy, obs, order)?;
    let kind = SecretKind::from_classifier(classifier, mdp);
    let d = ops.n_params();
    let m_total = sequences.len() as f64;
    let horizon = sequences[0].len() - 1;

    let mut h_total = 0.0;
    let mut g_total = want_grad.then(|| Array1::zeros(d));

    match &kind {
        SecretKind::Terminal { .. } => {
            // Sort and walk shared prefixes once per distinct sequence.
            let mut idx: Vec<usize> = (0..sequences.len()).collect();
            idx.sort_by(|&a, &b| sequences[a].cmp(&sequences[b]));
            let mut dfs = ForwardDfs::new(&ops, kind.seeds(mdp), horizon, order);

            let mut i = 0;
            let mut valid_depth = 0usize; // how many leading levels match the current prefix
            let mut current: Vec<usize> = Vec::new();
            while i < idx.len() {
                let y = &sequences[idx[i]];
                // multiplicity of this distinct sequence
                let mut j = i + 1;
                while j < idx.len() && sequences[idx[j]] == *y {
                    j += 1;
                }
                let count = (j - i) as f64;
                // shared prefix length with the previously processed sequence
                let mut t0 = 0;
                while t0 < valid_depth && t0 < y.len() && current.get(t0) == Some(&y[t0]) {
                    t0 += 1;
                }
                let mut dead = false;
                for (t, &o) in y.iter().enumerate().skip(t0) {
                    let mass = dfs.step(t, o);
                    if mass < MIN_SEQUENCE_PROB {
                        dead = true;
                        valid_depth = t; // levels above t are stale
                        break;
                    }
                }
                if !dead {
                    valid_depth = y.len();
                    let joints = kind.joints(dfs.leaf(horizon), order, d);
                    let p_y: f64 = joints.p.iter().sum();
                    if p_y >= MIN_SEQUENCE_PROB {
                        let (h, g) = posterior_terms(p_y, &joints, want_grad, d);
                        h_total += count * h;
                        if let Some(gt) = g_total.as_mut() {
                            gt.scaled_add(count, &g.unwrap());
                        }
                    }
                }
                current = y.clone();
                i = j;
            }
        }
        SecretKind::Initial { support, weights } => {
            // Backward messages give all initial-state joints in one pass.
            let mut idx: Vec<usize> = (0..sequences.len()).collect();
            idx.sort_by(|&a, &b| sequences[a].cmp(&sequences[b]));
            let mut i = 0;
            while i < idx.len() {
                let y = &sequences[idx[i]];
                let mut j = i + 1;
                while j < idx.len() && sequences[idx[j]] == *y {
                    j += 1;
                }
                let count = (j - i) as f64;
                let stack = backward_messages(&ops, y, order)?;
                let mut joints = LabelJoints {
                    p: vec![0.0; support.len()],
                    grad: want_grad.then(|| vec![Array1::zeros(d); support.len()]),
                    hess: None,
                };
                for (k, (&s0, &w)) in support.iter().zip(weights.iter()).enumerate() {
                    joints.p[k] = w * stack.prob_given_initial(s0);
                    if let Some(g) = joints.grad.as_mut() {
                        g[k] = stack.grad_given_initial(s0) * w;
                    }
                }
                let p_y: f64 = joints.p.iter().sum();
                if p_y >= MIN_SEQUENCE_PROB {
                    let (h, g) = posterior_terms(p_y, &joints, want_grad, d);
                    h_total += count * h;
                    if let Some(gt) = g_total.as_mut() {
                        gt.scaled_add(count, &g.unwrap());
                    }
                }
                i = j;
            }
        }
    }

    Ok((
        h_total / m_total,
        g_total.map(|g| g / m_total),
    ))
}

/// Sample `m` observation sequences from the policy-induced process and
/// estimate the conditional entropy and its gradient.
#[allow(clippy::too_many_arguments)]
pub fn sampled_entropy_and_gradient(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    obs: &ObservationModel,
    classifier: &SecretClassifier,
    horizon: usize,
    m: usize,
    seed: u64,
) -> Result<EntropyReport> {
    let batch = sample_batch(mdp, policy, obs, horizon, m, seed);
    let (entropy_bits, gradient) =
        entropy_estimate_from_sequences(mdp, policy, obs, classifier, &batch.observations, true)?;
    Ok(EntropyReport {
        entropy_bits,
        gradient,
        hessian: None,
        mode: EntropyMode::Sampled { m, seed },
        diagnostics: None,
    })
}
