//! Observer-side hidden Markov machinery: observable operators, observation
//! sequence probabilities, forward/backward messages and their first and
//! second derivatives with respect to the policy parameters.
//!
//! For a policy-induced chain written in from-state form
//! `F[i, j] = P(S_{t+1} = j | S_t = i)` and emissions `E(o | s)`, the
//! per-observation operator is `A_o[i, j] = F[j, i] * E(o | j)`: it consumes
//! the emission at the current state `j` and then transitions. Consequently
//! the plain product `A_{o_T} ... A_{o_0} mu0` marginalizes the state at time
//! `T + 1`, and a posterior over the state at time `T` combines the product up
//! to `T - 1` with one explicit emission factor.
//!
//! Messages follow the same convention:
//!
//! * forward: `alpha_t(j) = P(o_{0:t}, S_t = j)`,
//! * backward: `beta_t(i) = P(o_{t:T} | S_t = i)`, which includes the
//!   emission at its own time step so that `beta_0(s0) = P(y | S_0 = s0)`.
//!
//! Both stacks start with zero first and second derivatives at their anchor
//! (t = 0 for forward, the implicit all-ones vector past t = T for backward).

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};
use crate::mdp::{Mdp, SoftmaxPolicy, PROB_TOL};

/// Sequences with probability below this threshold are treated as impossible.
pub const MIN_SEQUENCE_PROB: f64 = 1e-300;

/// Per-state emission distributions over a finite observation alphabet.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    obs_names: Vec<String>,
    /// `emission[[s, o]] = E(o | s)`.
    emission: Array2<f64>,
}

impl ObservationModel {
    pub fn new(obs_names: Vec<String>, emission: Array2<f64>) -> Result<Self> {
        if emission.ncols() != obs_names.len() {
            return Err(Error::DimensionMismatch(format!(
                "emission matrix has {} columns, {} observation names",
                emission.ncols(),
                obs_names.len()
            )));
        }
        for s in 0..emission.nrows() {
            let mut sum = 0.0;
            for &v in emission.row(s) {
                if v < 0.0 {
                    return Err(Error::InvalidModel(format!(
                        "emission row {s} has negative entry {v}"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(Error::InvalidModel(format!(
                    "emission row {s} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Self {
            obs_names,
            emission,
        })
    }

    /// A blind observer: one observation emitted by every state.
    pub fn constant(n_states: usize) -> Self {
        Self {
            obs_names: vec!["o".into()],
            emission: Array2::ones((n_states, 1)),
        }
    }

    pub fn n_states(&self) -> usize {
        self.emission.nrows()
    }

    pub fn n_observations(&self) -> usize {
        self.obs_names.len()
    }

    pub fn observation_names(&self) -> &[String] {
        &self.obs_names
    }

    pub fn observation_index(&self, name: &str) -> Option<usize> {
        self.obs_names.iter().position(|o| o == name)
    }

    pub fn emission(&self) -> &Array2<f64> {
        &self.emission
    }

    pub fn emission_row(&self, s: usize) -> ndarray::ArrayView1<'_, f64> {
        self.emission.row(s)
    }

    pub fn prob(&self, s: usize, o: usize) -> f64 {
        self.emission[[s, o]]
    }

    /// Lift to a larger state space (product or memory augmentation) where
    /// state `v` observes as its base state `base_state[v]`.
    pub fn lift(&self, base_state: &[usize]) -> ObservationModel {
        let mut emission = Array2::zeros((base_state.len(), self.n_observations()));
        for (v, &s) in base_state.iter().enumerate() {
            emission.row_mut(v).assign(&self.emission.row(s));
        }
        ObservationModel {
            obs_names: self.obs_names.clone(),
            emission,
        }
    }
}

/// Observable operators for a fixed policy, together with the derivative
/// tensors of the induced chain needed for first and second order message
/// recursions.
#[derive(Debug, Clone)]
pub struct ObservableOperatorSet {
    n_states: usize,
    n_actions: usize,
    order: usize,
    emission: Array2<f64>,
    /// Row-stochastic chain `F[i, j] = P(S_{t+1} = j | S_t = i)`.
    chain_from: Array2<f64>,
    /// Column-stochastic flipped chain, `chain = chain_from^T`.
    chain: Array2<f64>,
    /// `ops[o][i, j] = chain[i, j] * E(o | j)`.
    ops: Vec<Array2<f64>>,
    /// Policy action probabilities, kept for second-order terms.
    policy_probs: Array2<f64>,
    /// Transition tensor `P[s, a, s']`, kept for second-order terms.
    trans: Array3<f64>,
    /// `dchain[[i, b, j]] = d F[i, j] / d theta_{i, b}` (zero off block `i`).
    dchain: Option<Array3<f64>>,
    /// Transposed copy `dchain_t[[j, i, b]] = dchain[[i, b, j]]`.
    dchain_t: Option<Array3<f64>>,
}

impl ObservableOperatorSet {
    /// Build operators and derivative tensors up to `order` (0, 1 or 2).
    pub fn build(
        mdp: &Mdp,
        policy: &SoftmaxPolicy,
        obs: &ObservationModel,
        order: usize,
    ) -> Result<Self> {
        let n = mdp.n_states();
        let a = mdp.n_actions();
        if obs.n_states() != n {
            return Err(Error::DimensionMismatch(format!(
                "observation model covers {} states, MDP has {n}",
                obs.n_states()
            )));
        }
        if policy.n_states() != n || policy.n_actions() != a {
            return Err(Error::DimensionMismatch(
                "policy shape does not match the MDP".into(),
            ));
        }
        if order > 2 {
            return Err(Error::OrderMismatch {
                have: 2,
                need: order,
            });
        }
        let policy_probs = policy.all_action_probs();
        let mut chain_from = Array2::zeros((n, n));
        for i in 0..n {
            for act in 0..a {
                let pa = policy_probs[[i, act]];
                if pa == 0.0 {
                    continue;
                }
                for j in 0..n {
                    chain_from[[i, j]] += pa * mdp.transition_prob(i, act, j);
                }
            }
        }
        let chain = chain_from.t().as_standard_layout().to_owned();
        let emission = obs.emission().clone();
        let ops = (0..obs.n_observations())
            .map(|o| {
                let mut m = chain.clone();
                for j in 0..n {
                    let e = emission[[j, o]];
                    m.column_mut(j).mapv_inplace(|v| v * e);
                }
                m
            })
            .collect();

        let (dchain, dchain_t) = if order >= 1 {
            let mut d = Array3::zeros((n, a, n));
            let mut dt = Array3::zeros((n, n, a));
            for i in 0..n {
                for b in 0..a {
                    let pb = policy_probs[[i, b]];
                    for j in 0..n {
                        let v = pb * (mdp.transition_prob(i, b, j) - chain_from[[i, j]]);
                        d[[i, b, j]] = v;
                        dt[[j, i, b]] = v;
                    }
                }
            }
            (Some(d), Some(dt))
        } else {
            (None, None)
        };

        Ok(Self {
            n_states: n,
            n_actions: a,
            order,
            emission,
            chain_from,
            chain,
            ops,
            policy_probs,
            trans: mdp.transition().clone(),
            dchain,
            dchain_t,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_observations(&self) -> usize {
        self.ops.len()
    }

    /// Flat parameter dimension `n_states * n_actions`.
    pub fn n_params(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// The flipped column-stochastic chain `T[i, j] = P(S_{t+1} = i | S_t = j)`.
    pub fn chain(&self) -> &Array2<f64> {
        &self.chain
    }

    pub fn chain_from(&self) -> &Array2<f64> {
        &self.chain_from
    }

    pub fn operator(&self, o: usize) -> &Array2<f64> {
        &self.ops[o]
    }

    pub fn operators(&self) -> &[Array2<f64>] {
        &self.ops
    }

    pub fn emission(&self) -> &Array2<f64> {
        &self.emission
    }

    fn require_order(&self, need: usize) -> Result<()> {
        if self.order < need {
            Err(Error::OrderMismatch {
                have: self.order,
                need,
            })
        } else {
            Ok(())
        }
    }

    /// `d A_o[i, j] / d theta_p` for the flat parameter `p`.
    pub fn d_operator_entry(&self, o: usize, p: usize, i: usize, j: usize) -> f64 {
        let dchain_t = self.dchain_t.as_ref().expect("order >= 1");
        let (s, b) = (p / self.n_actions, p % self.n_actions);
        if s != j {
            return 0.0;
        }
        self.emission[[j, o]] * dchain_t[[i, j, b]]
    }

    /// Second derivative of the from-chain entry `F[i, j]` with respect to
    /// `theta_{i, b}` and `theta_{i, c}` (zero for parameters off block `i`).
    fn d2chain(&self, i: usize, b: usize, c: usize, j: usize) -> f64 {
        let pb = self.policy_probs[[i, b]];
        let pc = self.policy_probs[[i, c]];
        let delta = if b == c { 1.0 } else { 0.0 };
        let f = self.chain_from[[i, j]];
        pb * (delta - pc) * (self.trans[[i, b, j]] - f) - pb * pc * (self.trans[[i, c, j]] - f)
    }

    // ---- forward recursion steps ------------------------------------------

    /// `alpha_0(j) = mu0(j) * E(o | j)`.
    pub(crate) fn forward_init(&self, mu0: &Array1<f64>, o: usize, alpha: &mut Array1<f64>) {
        for j in 0..self.n_states {
            alpha[j] = mu0[j] * self.emission[[j, o]];
        }
    }

    /// `alpha_t = diag(E(o|.)) * chain * alpha_{t-1}`.
    pub(crate) fn forward_step_value(
        &self,
        o: usize,
        alpha_in: &Array1<f64>,
        alpha_out: &mut Array1<f64>,
    ) {
        general_mat_mul_vec(&self.chain, alpha_in, alpha_out);
        for j in 0..self.n_states {
            alpha_out[j] *= self.emission[[j, o]];
        }
    }

    /// Gradient recursion. `grad_out` receives
    /// `diag(E(o|.)) * (chain * grad_in + S)` with
    /// `S[j, (i, b)] = alpha_in(i) * dF[i, b, j]`.
    pub(crate) fn forward_step_grad(
        &self,
        o: usize,
        alpha_in: &Array1<f64>,
        grad_in: &Array2<f64>,
        grad_out: &mut Array2<f64>,
    ) {
        let dchain_t = self.dchain_t.as_ref().expect("order >= 1");
        general_mat_mul(1.0, &self.chain, grad_in, 0.0, grad_out);
        let a = self.n_actions;
        for j in 0..self.n_states {
            let e = self.emission[[j, o]];
            let mut row = grad_out.row_mut(j);
            if e == 0.0 {
                row.fill(0.0);
                continue;
            }
            let dt_j = dchain_t.index_axis(ndarray::Axis(0), j);
            for i in 0..self.n_states {
                let w = alpha_in[i];
                if w == 0.0 {
                    continue;
                }
                for b in 0..a {
                    row[i * a + b] += w * dt_j[[i, b]];
                }
            }
            row.mapv_inplace(|v| v * e);
        }
    }

    /// Hessian recursion (symmetric in the two cross terms).
    pub(crate) fn forward_step_hess(
        &self,
        o: usize,
        alpha_in: &Array1<f64>,
        grad_in: &Array2<f64>,
        hess_in: &[Array2<f64>],
        hess_out: &mut [Array2<f64>],
    ) {
        let dchain_t = self.dchain_t.as_ref().expect("order >= 2 tensors");
        let n = self.n_states;
        let a = self.n_actions;
        for j in 0..n {
            let e = self.emission[[j, o]];
            let out = &mut hess_out[j];
            out.fill(0.0);
            if e == 0.0 {
                continue;
            }
            for i in 0..n {
                let f = self.chain[[j, i]];
                if f != 0.0 {
                    out.scaled_add(f, &hess_in[i]);
                }
                let g_row = grad_in.row(i);
                for b in 0..a {
                    let c = dchain_t[[j, i, b]];
                    if c != 0.0 {
                        let p0 = i * a + b;
                        for (q, &g) in g_row.iter().enumerate() {
                            out[[q, p0]] += c * g;
                            out[[p0, q]] += c * g;
                        }
                    }
                }
                let w = alpha_in[i];
                if w != 0.0 {
                    for b in 0..a {
                        for c in 0..a {
                            out[[i * a + b, i * a + c]] += w * self.d2chain(i, b, c, j);
                        }
                    }
                }
            }
            out.mapv_inplace(|v| v * e);
        }
    }

    // ---- backward recursion steps -----------------------------------------

    /// `beta_T(i) = E(o_T | i)` (all-ones anchor folded in).
    pub(crate) fn backward_init(&self, o: usize, beta: &mut Array1<f64>) {
        for i in 0..self.n_states {
            beta[i] = self.emission[[i, o]];
        }
    }

    /// `beta_t = diag(E(o_t|.)) * chain_from * beta_{t+1}`.
    pub(crate) fn backward_step_value(
        &self,
        o: usize,
        beta_in: &Array1<f64>,
        beta_out: &mut Array1<f64>,
    ) {
        general_mat_mul_vec(&self.chain_from, beta_in, beta_out);
        for i in 0..self.n_states {
            beta_out[i] *= self.emission[[i, o]];
        }
    }

    pub(crate) fn backward_step_grad(
        &self,
        o: usize,
        beta_in: &Array1<f64>,
        grad_in: &Array2<f64>,
        grad_out: &mut Array2<f64>,
    ) {
        let dchain = self.dchain.as_ref().expect("order >= 1");
        general_mat_mul(1.0, &self.chain_from, grad_in, 0.0, grad_out);
        let a = self.n_actions;
        for i in 0..self.n_states {
            let e = self.emission[[i, o]];
            let mut row = grad_out.row_mut(i);
            if e == 0.0 {
                row.fill(0.0);
                continue;
            }
            for b in 0..a {
                let mut acc = 0.0;
                for j in 0..self.n_states {
                    acc += beta_in[j] * dchain[[i, b, j]];
                }
                row[i * a + b] += acc;
            }
            row.mapv_inplace(|v| v * e);
        }
    }

    pub(crate) fn backward_step_hess(
        &self,
        o: usize,
        beta_in: &Array1<f64>,
        grad_in: &Array2<f64>,
        hess_in: &[Array2<f64>],
        hess_out: &mut [Array2<f64>],
    ) {
        let dchain = self.dchain.as_ref().expect("order >= 2 tensors");
        let n = self.n_states;
        let a = self.n_actions;
        for i in 0..n {
            let e = self.emission[[i, o]];
            let out = &mut hess_out[i];
            out.fill(0.0);
            if e == 0.0 {
                continue;
            }
            for j in 0..n {
                let f = self.chain_from[[i, j]];
                if f != 0.0 {
                    out.scaled_add(f, &hess_in[j]);
                }
                let g_row = grad_in.row(j);
                for b in 0..a {
                    let c = dchain[[i, b, j]];
                    if c != 0.0 {
                        let p0 = i * a + b;
                        for (q, &g) in g_row.iter().enumerate() {
                            out[[q, p0]] += c * g;
                            out[[p0, q]] += c * g;
                        }
                    }
                }
            }
            for b in 0..a {
                for c in 0..a {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += beta_in[j] * self.d2chain(i, b, c, j);
                    }
                    out[[i * a + b, i * a + c]] += acc;
                }
            }
            out.mapv_inplace(|v| v * e);
        }
    }
}

fn general_mat_mul_vec(m: &Array2<f64>, v: &Array1<f64>, out: &mut Array1<f64>) {
    let tmp = m.dot(v);
    out.assign(&tmp);
}

/// Which direction a [`MessageStack`] was computed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    Forward,
    Backward,
}

/// Forward or backward messages for one observation sequence, optionally with
/// aligned gradient and Hessian stacks.
#[derive(Debug, Clone)]
pub struct MessageStack {
    pub kind: MessageKind,
    pub order: usize,
    /// `values[t]` for `t = 0..=T`.
    pub values: Vec<Array1<f64>>,
    /// `grads[t][[state, param]]`.
    pub grads: Option<Vec<Array2<f64>>>,
    /// `hessians[t][state][[param, param]]`.
    pub hessians: Option<Vec<Vec<Array2<f64>>>>,
}

impl MessageStack {
    /// `P(y)` from a forward stack.
    pub fn prob_y(&self) -> f64 {
        assert_eq!(self.kind, MessageKind::Forward);
        self.values.last().unwrap().sum()
    }

    /// `grad P(y)` from a forward stack.
    pub fn grad_prob_y(&self) -> Array1<f64> {
        assert_eq!(self.kind, MessageKind::Forward);
        let g = self.grads.as_ref().expect("gradients not computed").last().unwrap();
        g.sum_axis(ndarray::Axis(0))
    }

    /// `hess P(y)` from a forward stack.
    pub fn hessian_prob_y(&self) -> Array2<f64> {
        assert_eq!(self.kind, MessageKind::Forward);
        let hs = self
            .hessians
            .as_ref()
            .expect("hessians not computed")
            .last()
            .unwrap();
        let d = hs[0].nrows();
        let mut out = Array2::zeros((d, d));
        for h in hs {
            out += h;
        }
        out
    }

    /// `P(y | S_0 = s0)` from a backward stack.
    pub fn prob_given_initial(&self, s0: usize) -> f64 {
        assert_eq!(self.kind, MessageKind::Backward);
        self.values[0][s0]
    }

    /// `grad P(y | S_0 = s0)` from a backward stack.
    pub fn grad_given_initial(&self, s0: usize) -> Array1<f64> {
        assert_eq!(self.kind, MessageKind::Backward);
        self.grads.as_ref().expect("gradients not computed")[0]
            .row(s0)
            .to_owned()
    }

    /// `P(y)` from a backward stack and an initial distribution.
    pub fn prob_y_from(&self, mu0: &Array1<f64>) -> f64 {
        assert_eq!(self.kind, MessageKind::Backward);
        self.values[0].dot(mu0)
    }
}

/// Forward messages (and derivatives up to `order`) for the sequence `y`.
pub fn forward_messages(
    ops: &ObservableOperatorSet,
    mu0: &Array1<f64>,
    y: &[usize],
    order: usize,
) -> Result<MessageStack> {
    ops.require_order(order)?;
    assert!(!y.is_empty(), "observation sequence must be nonempty");
    let n = ops.n_states();
    let d = ops.n_params();
    let mut values = Vec::with_capacity(y.len());
    let mut alpha = Array1::zeros(n);
    ops.forward_init(mu0, y[0], &mut alpha);
    values.push(alpha);
    let mut grads = (order >= 1).then(|| vec![Array2::zeros((n, d))]);
    let mut hessians = (order >= 2).then(|| vec![vec![Array2::zeros((d, d)); n]]);
    for (t, &o) in y.iter().enumerate().skip(1) {
        let mut alpha = Array1::zeros(n);
        ops.forward_step_value(o, &values[t - 1], &mut alpha);
        if let Some(hs) = hessians.as_mut() {
            let mut h = vec![Array2::zeros((d, d)); n];
            let gs = grads.as_ref().unwrap();
            ops.forward_step_hess(o, &values[t - 1], &gs[t - 1], &hs[t - 1], &mut h);
            hs.push(h);
        }
        if let Some(gs) = grads.as_mut() {
            let mut g = Array2::zeros((n, d));
            ops.forward_step_grad(o, &values[t - 1], &gs[t - 1], &mut g);
            gs.push(g);
        }
        values.push(alpha);
    }
    Ok(MessageStack {
        kind: MessageKind::Forward,
        order,
        values,
        grads,
        hessians,
    })
}

/// Backward messages (and derivatives up to `order`) for the sequence `y`.
///
/// `values[t]` holds `beta_t(i) = P(o_{t:T} | S_t = i)`, so `values[0]` is the
/// vector of conditional sequence probabilities per initial state.
pub fn backward_messages(
    ops: &ObservableOperatorSet,
    y: &[usize],
    order: usize,
) -> Result<MessageStack> {
    ops.require_order(order)?;
    assert!(!y.is_empty(), "observation sequence must be nonempty");
    let n = ops.n_states();
    let d = ops.n_params();
    let horizon = y.len() - 1;
    let mut values = vec![Array1::zeros(n); y.len()];
    let mut grads = (order >= 1).then(|| vec![Array2::zeros((n, d)); y.len()]);
    let mut hessians = (order >= 2).then(|| vec![vec![Array2::zeros((d, d)); n]; y.len()]);
    ops.backward_init(y[horizon], &mut values[horizon]);
    for t in (0..horizon).rev() {
        let (head, tail) = values.split_at_mut(t + 1);
        let beta_in = &tail[0];
        if let Some(hs) = hessians.as_mut() {
            let (h_head, h_tail) = hs.split_at_mut(t + 1);
            let gs = grads.as_ref().unwrap();
            ops.backward_step_hess(y[t], beta_in, &gs[t + 1], &h_tail[0], &mut h_head[t]);
        }
        if let Some(gs) = grads.as_mut() {
            let (g_head, g_tail) = gs.split_at_mut(t + 1);
            let mut g = Array2::zeros((n, d));
            ops.backward_step_grad(y[t], beta_in, &g_tail[0], &mut g);
            g_head[t] = g;
        }
        ops.backward_step_value(y[t], beta_in, &mut head[t]);
    }
    Ok(MessageStack {
        kind: MessageKind::Backward,
        order,
        values,
        grads,
        hessians,
    })
}

/// `P(S_{T+1} = ., y)` as the plain operator product `A_{o_T} ... A_{o_0} mu0`.
pub fn sequence_weight_vector(
    ops: &ObservableOperatorSet,
    mu0: &Array1<f64>,
    y: &[usize],
) -> Array1<f64> {
    assert!(!y.is_empty());
    let n = ops.n_states();
    let mut v = Array1::zeros(n);
    ops.forward_init(mu0, y[0], &mut v);
    let mut cur = ops.chain().dot(&v);
    for &o in &y[1..] {
        // cur holds chain * (emission-weighted previous vector)
        let mut alpha = Array1::zeros(n);
        for j in 0..n {
            alpha[j] = cur[j] * ops.emission()[[j, o]];
        }
        cur = ops.chain().dot(&alpha);
    }
    cur
}

/// `P(y) = 1^T A_{o_T} ... A_{o_0} mu0`.
pub fn observation_probability(
    ops: &ObservableOperatorSet,
    mu0: &Array1<f64>,
    y: &[usize],
) -> f64 {
    sequence_weight_vector(ops, mu0, y).sum()
}

/// Posterior over the state at time `T` given the full sequence `y`:
/// `E(o_T | j) * [A_{o_{T-1}} ... A_{o_0} mu0]_j / P(y)`.
pub fn terminal_posterior(
    ops: &ObservableOperatorSet,
    mu0: &Array1<f64>,
    y: &[usize],
) -> Result<Array1<f64>> {
    let stack = forward_messages(ops, mu0, y, 0)?;
    let p = stack.prob_y();
    if p < MIN_SEQUENCE_PROB {
        return Err(Error::ZeroProbabilitySequence { prob: p });
    }
    Ok(stack.values.last().unwrap() / p)
}

/// `P(y | S_0 = s0) = 1^T A_{o_T} ... A_{o_0} e_{s0}`.
pub fn probability_given_initial(ops: &ObservableOperatorSet, y: &[usize], s0: usize) -> f64 {
    let mut e = Array1::zeros(ops.n_states());
    e[s0] = 1.0;
    observation_probability(ops, &e, y)
}

/// Reference form of the sequence-probability gradient: the sum over insertion
/// positions of `1^T A_{o_T} ... dA_{o_i} ... A_{o_0} mu0`.
///
/// Slow but independent of the message recursions; kept as a cross-check.
pub fn gradient_by_operator_products(
    ops: &ObservableOperatorSet,
    mu0: &Array1<f64>,
    y: &[usize],
) -> Result<Array1<f64>> {
    ops.require_order(1)?;
    let n = ops.n_states();
    let d = ops.n_params();
    let mut grad = Array1::zeros(d);
    for p in 0..d {
        let mut total = 0.0;
        for insert in 0..y.len() {
            let mut v = mu0.clone();
            for (t, &o) in y.iter().enumerate() {
                let mut next = Array1::zeros(n);
                if t == insert {
                    for i in 0..n {
                        let mut acc = 0.0;
                        for j in 0..n {
                            let dv = ops.d_operator_entry(o, p, i, j);
                            if dv != 0.0 {
                                acc += dv * v[j];
                            }
                        }
                        next[i] = acc;
                    }
                } else {
                    next = ops.operator(o).dot(&v);
                }
                v = next;
            }
            total += v.sum();
        }
        grad[p] = total;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envlib;
    use crate::mdp::{induced_chain, SoftmaxPolicy};
    use crate::verify;
    use approx::assert_abs_diff_eq;

    fn example_ops(alpha: f64, order: usize) -> (ObservableOperatorSet, Array1<f64>) {
        let env = envlib::example_finite_memory();
        let policy = envlib::markov_example_policy(alpha);
        let ops = ObservableOperatorSet::build(&env.mdp, &policy, &env.obs, order).unwrap();
        (ops, env.mdp.initial().clone())
    }

    #[test]
    fn operators_sum_to_chain() {
        let env = envlib::example_finite_memory();
        let policy = SoftmaxPolicy::random(3, 2, 5);
        let ops = ObservableOperatorSet::build(&env.mdp, &policy, &env.obs, 0).unwrap();
        let chain = induced_chain(&env.mdp, &policy);
        let mut total = Array2::zeros((3, 3));
        for o in 0..ops.n_observations() {
            total += ops.operator(o);
        }
        for (a, b) in total.iter().zip(chain.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert!(ops.operators().iter().all(|m| m.iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn red_operator_column_structure() {
        // Only q1 can emit R, with emission probability one half.
        let (ops, _) = example_ops(0.3, 0);
        let env = envlib::example_finite_memory();
        let r = env.obs.observation_index("R").unwrap();
        let a_r = ops.operator(r);
        for j in 0..3 {
            for i in 0..3 {
                if j == 1 {
                    let expected = 0.5 * ops.chain()[[i, j]];
                    assert_abs_diff_eq!(a_r[[i, j]], expected, epsilon = 1e-15);
                } else {
                    assert_eq!(a_r[[i, j]], 0.0);
                }
            }
        }
    }

    #[test]
    fn dchain_columns_sum_to_zero() {
        // Derivative of a stochastic row sums to zero over destinations.
        let env = envlib::example_finite_memory();
        let policy = SoftmaxPolicy::uniform(3, 2);
        let ops = ObservableOperatorSet::build(&env.mdp, &policy, &env.obs, 1).unwrap();
        let dchain = ops.dchain.as_ref().unwrap();
        for i in 0..3 {
            for b in 0..2 {
                let sum: f64 = (0..3).map(|j| dchain[[i, b, j]]).sum();
                assert_abs_diff_eq!(sum, 0.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn printed_sequence_probabilities() {
        let env = envlib::example_finite_memory();
        let n = env.obs.observation_index("N").unwrap();
        let r = env.obs.observation_index("R").unwrap();
        for &alpha in &[0.0, 0.25, 0.5, 0.9, 1.0] {
            let (ops, mu0) = example_ops(alpha, 0);
            let p_nrn = observation_probability(&ops, &mu0, &[n, r, n]);
            assert_abs_diff_eq!(p_nrn, (1.0 - alpha) / 8.0, epsilon = 1e-12);
        }
        // The finite-memory policy on the augmentation gives P(NNN) = 0.5.
        let aug = crate::mdp::augment_with_memory(
            &env.mdp,
            &crate::mdp::MemoryTransducer::time_counter(3),
        )
        .unwrap();
        let policy = envlib::finite_memory_example_policy(&aug);
        let obs = env.obs.lift(&aug.base_state);
        let ops = ObservableOperatorSet::build(&aug.mdp, &policy, &obs, 0).unwrap();
        let p = observation_probability(&ops, aug.mdp.initial(), &[n, n, n]);
        assert_abs_diff_eq!(p, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn sequence_probabilities_total_one() {
        let (ops, mu0) = example_ops(0.37, 0);
        let horizon = 2;
        let mut total = 0.0;
        let n_obs = ops.n_observations();
        let mut seq = vec![0usize; horizon + 1];
        loop {
            total += observation_probability(&ops, &mu0, &seq);
            // odometer increment
            let mut k = 0;
            loop {
                seq[k] += 1;
                if seq[k] < n_obs {
                    break;
                }
                seq[k] = 0;
                k += 1;
                if k == seq.len() {
                    assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
                    return;
                }
            }
        }
    }

    #[test]
    fn terminal_posterior_printed_values() {
        let env = envlib::example_finite_memory();
        let aug = crate::mdp::augment_with_memory(
            &env.mdp,
            &crate::mdp::MemoryTransducer::time_counter(3),
        )
        .unwrap();
        let policy = envlib::finite_memory_example_policy(&aug);
        let obs = env.obs.lift(&aug.base_state);
        let ops = ObservableOperatorSet::build(&aug.mdp, &policy, &obs, 0).unwrap();
        let n = env.obs.observation_index("N").unwrap();
        let r = env.obs.observation_index("R").unwrap();
        let b = env.obs.observation_index("B").unwrap();

        let collapse = |post: &Array1<f64>| -> [f64; 3] {
            let mut out = [0.0; 3];
            for (v, &p) in post.iter().enumerate() {
                out[aug.base_state[v]] += p;
            }
            out
        };

        let post = terminal_posterior(&ops, aug.mdp.initial(), &[n, n, n]).unwrap();
        let base = collapse(&post);
        assert_abs_diff_eq!(base[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(base[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(base[2], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(post.sum(), 1.0, epsilon = 1e-12);

        let post = terminal_posterior(&ops, aug.mdp.initial(), &[n, n, r]).unwrap();
        assert_abs_diff_eq!(collapse(&post)[1], 1.0, epsilon = 1e-12);
        let post = terminal_posterior(&ops, aug.mdp.initial(), &[n, n, b]).unwrap();
        assert_abs_diff_eq!(collapse(&post)[2], 1.0, epsilon = 1e-12);

        // Impossible sequence: posterior is an explicit error.
        let err = terminal_posterior(&ops, aug.mdp.initial(), &[r, n, n]);
        assert!(matches!(
            err,
            Err(crate::error::Error::ZeroProbabilitySequence { .. })
        ));
    }

    #[test]
    fn initial_conditioning_consistency() {
        let (mdp, obs) = verify::random_instance(4, 2, 3, 99);
        let policy = SoftmaxPolicy::random(4, 2, 100);
        let ops = ObservableOperatorSet::build(&mdp, &policy, &obs, 0).unwrap();
        let y = [0usize, 2, 1, 0];
        // Law of total probability over the initial state.
        let total: f64 = (0..4)
            .map(|s0| mdp.initial()[s0] * probability_given_initial(&ops, &y, s0))
            .sum();
        assert_abs_diff_eq!(
            total,
            observation_probability(&ops, mdp.initial(), &y),
            epsilon = 1e-14
        );
        // One-hot initial distribution reduces to conditioning.
        let env = envlib::example_finite_memory();
        let policy = SoftmaxPolicy::random(3, 2, 4);
        let ops1 = ObservableOperatorSet::build(&env.mdp, &policy, &env.obs, 0).unwrap();
        let y = [0usize, 0, 1];
        assert_abs_diff_eq!(
            probability_given_initial(&ops1, &y, 0),
            observation_probability(&ops1, env.mdp.initial(), &y),
            epsilon = 1e-15
        );
    }

    #[test]
    fn operator_product_matches_path_enumeration() {
        let (mdp, obs) = verify::random_instance(4, 3, 3, 2718);
        let policy = SoftmaxPolicy::random(4, 3, 281);
        let ops = ObservableOperatorSet::build(&mdp, &policy, &obs, 0).unwrap();
        let table = verify::JointTable::build(&mdp, &policy, &obs, 3);
        for y in table.sequences() {
            let p_ops = observation_probability(&ops, mdp.initial(), &y);
            assert_abs_diff_eq!(p_ops, table.prob(&y), epsilon = 1e-12);
            for s0 in 0..4 {
                let cond = probability_given_initial(&ops, &y, s0);
                assert_abs_diff_eq!(cond, table.prob_given_initial(&y, s0), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn forward_backward_consistency() {
        for seed in 0..10u64 {
            let (mdp, obs) = verify::random_instance(5, 2, 3, 1000 + seed);
            let policy = SoftmaxPolicy::random(5, 2, 2000 + seed);
            let ops = ObservableOperatorSet::build(&mdp, &policy, &obs, 0).unwrap();
            let y = [seed as usize % 3, 1, 0, 2];
            let fwd = forward_messages(&ops, mdp.initial(), &y, 0).unwrap();
            let bwd = backward_messages(&ops, &y, 0).unwrap();
            let p = observation_probability(&ops, mdp.initial(), &y);
            assert_abs_diff_eq!(fwd.prob_y(), p, epsilon = 1e-13);
            assert_abs_diff_eq!(bwd.prob_y_from(mdp.initial()), p, epsilon = 1e-13);
            // Alpha totals are monotone nonincreasing and stay in [0, 1].
            let mut prev = 1.0;
            for v in &fwd.values {
                let s = v.sum();
                assert!(s <= prev + 1e-12);
                assert!(v.iter().all(|&x| (0.0..=1.0).contains(&x)));
                prev = s;
            }
            for v in &bwd.values {
                assert!(v.iter().all(|&x| (0.0..=1.0).contains(&x)));
            }
            for s0 in 0..5 {
                assert_abs_diff_eq!(
                    bwd.prob_given_initial(s0),
                    probability_given_initial(&ops, &y, s0),
                    epsilon = 1e-13
                );
            }
        }
    }

    #[test]
    fn gradient_two_routes_agree() {
        let (mdp, obs) = verify::random_instance(4, 2, 3, 31415);
        let policy = SoftmaxPolicy::random(4, 2, 926);
        let ops = ObservableOperatorSet::build(&mdp, &policy, &obs, 1).unwrap();
        let y = [1usize, 0, 2, 1];
        let fwd = forward_messages(&ops, mdp.initial(), &y, 1).unwrap();
        let by_messages = fwd.grad_prob_y();
        let by_products = gradient_by_operator_products(&ops, mdp.initial(), &y).unwrap();
        for (a, b) in by_messages.iter().zip(by_products.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (mdp, obs) = verify::random_instance(4, 2, 3, 161803);
        let policy = SoftmaxPolicy::random(4, 2, 398);
        let ops = ObservableOperatorSet::build(&mdp, &policy, &obs, 1).unwrap();
        let y = [0usize, 2, 1, 1];
        let grad = forward_messages(&ops, mdp.initial(), &y, 1)
            .unwrap()
            .grad_prob_y();
        let fd = verify::central_diff_gradient(
            |theta| {
                let p = SoftmaxPolicy::new(theta.clone());
                let ops = ObservableOperatorSet::build(&mdp, &p, &obs, 0).unwrap();
                observation_probability(&ops, mdp.initial(), &y)
            },
            policy.theta(),
            1e-6,
        );
        assert!(verify::relative_error(&grad, &fd) < 1e-5);

        // Backward gradient of P(y | s0) against finite differences.
        let bwd = backward_messages(&ops, &y, 1).unwrap();
        for s0 in 0..4 {
            let grad = bwd.grad_given_initial(s0);
            let fd = verify::central_diff_gradient(
                |theta| {
                    let p = SoftmaxPolicy::new(theta.clone());
                    let ops = ObservableOperatorSet::build(&mdp, &p, &obs, 0).unwrap();
                    probability_given_initial(&ops, &y, s0)
                },
                policy.theta(),
                1e-6,
            );
            assert!(verify::relative_error(&grad, &fd) < 1e-5);
        }
    }

    #[test]
    fn hessian_matches_finite_differences_and_is_symmetric() {
        let (mdp, obs) = verify::random_instance(3, 2, 2, 577215);
        let policy = SoftmaxPolicy::random(3, 2, 664);
        let ops = ObservableOperatorSet::build(&mdp, &policy, &obs, 2).unwrap();
        let y = [0usize, 1, 0];
        let stack = forward_messages(&ops, mdp.initial(), &y, 2).unwrap();
        let hess = stack.hessian_prob_y();
        for i in 0..hess.nrows() {
            for j in 0..hess.ncols() {
                assert!((hess[[i, j]] - hess[[j, i]]).abs() < 1e-9);
            }
        }
        let fd = verify::central_diff_jacobian(
            |theta| {
                let p = SoftmaxPolicy::new(theta.clone());
                let ops = ObservableOperatorSet::build(&mdp, &p, &obs, 1).unwrap();
                forward_messages(&ops, mdp.initial(), &y, 1)
                    .unwrap()
                    .grad_prob_y()
            },
            policy.theta(),
            1e-5,
        );
        assert!(verify::relative_error_mat(&hess, &fd) < 1e-4);

        // Backward Hessian of P(y | s0).
        let bwd = backward_messages(&ops, &y, 2).unwrap();
        for s0 in 0..3 {
            let hess = bwd.hessians.as_ref().unwrap()[0][s0].clone();
            let fd = verify::central_diff_jacobian(
                |theta| {
                    let p = SoftmaxPolicy::new(theta.clone());
                    let ops = ObservableOperatorSet::build(&mdp, &p, &obs, 1).unwrap();
                    backward_messages(&ops, &y, 1).unwrap().grad_given_initial(s0)
                },
                policy.theta(),
                1e-5,
            );
            assert!(verify::relative_error_mat(&hess, &fd) < 1e-4);
        }
    }

    #[test]
    fn gradients_sum_to_zero_over_all_sequences() {
        let (mdp, obs) = verify::random_instance(3, 2, 2, 271828);
        let policy = SoftmaxPolicy::random(3, 2, 182);
        let ops = ObservableOperatorSet::build(&mdp, &policy, &obs, 1).unwrap();
        let horizon = 3;
        let n_obs = ops.n_observations();
        let mut total = Array1::<f64>::zeros(ops.n_params());
        let mut seq = vec![0usize; horizon + 1];
        'outer: loop {
            let g = forward_messages(&ops, mdp.initial(), &seq, 1)
                .unwrap()
                .grad_prob_y();
            total += &g;
            let mut k = 0;
            loop {
                seq[k] += 1;
                if seq[k] < n_obs {
                    break;
                }
                seq[k] = 0;
                k += 1;
                if k == seq.len() {
                    break 'outer;
                }
            }
        }
        assert!(total.iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn message_stack_anchors() {
        let (ops, mu0) = example_ops(0.5, 2);
        let y = [0usize, 0, 1];
        let fwd = forward_messages(&ops, &mu0, &y, 2).unwrap();
        // alpha_0(j) = mu0(j) E(o_0 | j), with zero derivative stacks.
        for j in 0..3 {
            assert_abs_diff_eq!(
                fwd.values[0][j],
                mu0[j] * ops.emission()[[j, 0]],
                epsilon = 0.0
            );
        }
        assert!(fwd.grads.as_ref().unwrap()[0].iter().all(|&v| v == 0.0));
        assert!(fwd.hessians.as_ref().unwrap()[0]
            .iter()
            .all(|h| h.iter().all(|&v| v == 0.0)));
        let bwd = backward_messages(&ops, &y, 2).unwrap();
        // The stored last row folds in its own emission; its derivatives
        // vanish because emissions do not depend on theta.
        for i in 0..3 {
            assert_abs_diff_eq!(
                bwd.values[2][i],
                ops.emission()[[i, y[2]]],
                epsilon = 0.0
            );
        }
        assert!(bwd.grads.as_ref().unwrap()[2].iter().all(|&v| v == 0.0));
        assert!(bwd.hessians.as_ref().unwrap()[2]
            .iter()
            .all(|h| h.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn order_mismatch_is_an_error() {
        let (ops, mu0) = example_ops(0.5, 0);
        assert!(matches!(
            forward_messages(&ops, &mu0, &[0, 1], 1),
            Err(Error::OrderMismatch { .. })
        ));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let env = envlib::example_finite_memory();
        let policy = SoftmaxPolicy::uniform(3, 2);
        let wrong = ObservationModel::constant(4);
        assert!(matches!(
            ObservableOperatorSet::build(&env.mdp, &policy, &wrong, 0),
            Err(Error::DimensionMismatch(_))
        ));
        let wrong_policy = SoftmaxPolicy::uniform(4, 2);
        assert!(matches!(
            ObservableOperatorSet::build(&env.mdp, &wrong_policy, &env.obs, 0),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn constant_observation_model() {
        let m = ObservationModel::constant(4);
        assert_eq!(m.n_observations(), 1);
        let lifted = m.lift(&[0, 1, 2, 3, 0, 1]);
        assert_eq!(lifted.n_states(), 6);
        assert_eq!(lifted.prob(5, 0), 1.0);
    }
}
