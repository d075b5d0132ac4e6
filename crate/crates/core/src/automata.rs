//! Deterministic finite automata over label alphabets, the product of a
//! labeled MDP with a DFA, and the classifier that exposes the automaton
//! component of a product state as the secret.

use std::collections::HashMap;

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};
use crate::mdp::{LabeledMdp, Mdp};
use crate::obsop::ObservationModel;
use crate::opacity::SecretClassifier;

/// A complete DFA whose alphabet is a set of proposition subsets.
#[derive(Debug, Clone)]
pub struct Dfa {
    state_names: Vec<String>,
    prop_names: Vec<String>,
    /// Each symbol is a sorted set of proposition indices.
    alphabet: Vec<Vec<usize>>,
    /// `transition[[q, sym]]`, total by construction.
    transition: Array2<usize>,
    initial: usize,
    accepting: Vec<bool>,
}

impl Dfa {
    pub fn new(
        state_names: Vec<String>,
        prop_names: Vec<String>,
        alphabet: Vec<Vec<usize>>,
        transitions: &[(usize, usize, usize)], // (from, symbol, to)
        initial: usize,
        accepting: Vec<bool>,
    ) -> Result<Self> {
        let nq = state_names.len();
        let ns = alphabet.len();
        let mut alphabet = alphabet;
        for sym in &mut alphabet {
            sym.sort_unstable();
            sym.dedup();
            if sym.iter().any(|&p| p >= prop_names.len()) {
                return Err(Error::InvalidModel(
                    "alphabet symbol references an unknown proposition".into(),
                ));
            }
        }
        if initial >= nq || accepting.len() != nq {
            return Err(Error::InvalidModel("malformed DFA".into()));
        }
        let mut table = Array2::from_elem((nq, ns), usize::MAX);
        for &(from, sym, to) in transitions {
            if from >= nq || sym >= ns || to >= nq {
                return Err(Error::InvalidModel(format!(
                    "DFA transition ({from}, {sym}, {to}) out of range"
                )));
            }
            if table[[from, sym]] != usize::MAX && table[[from, sym]] != to {
                return Err(Error::InvalidModel(format!(
                    "DFA transition ({from}, {sym}) defined twice"
                )));
            }
            table[[from, sym]] = to;
        }
        for q in 0..nq {
            for s in 0..ns {
                if table[[q, s]] == usize::MAX {
                    return Err(Error::InvalidModel(format!(
                        "DFA transition function incomplete at state {q}, symbol {s}"
                    )));
                }
            }
        }
        Ok(Self {
            state_names,
            prop_names,
            alphabet,
            transition: table,
            initial,
            accepting,
        })
    }

    pub fn n_states(&self) -> usize {
        self.state_names.len()
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn prop_names(&self) -> &[String] {
        &self.prop_names
    }

    pub fn alphabet(&self) -> &[Vec<usize>] {
        &self.alphabet
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn is_accepting(&self, q: usize) -> bool {
        self.accepting[q]
    }

    /// Index of the alphabet symbol equal to the given proposition set.
    pub fn symbol_index(&self, props: &[usize]) -> Option<usize> {
        let mut key = props.to_vec();
        key.sort_unstable();
        key.dedup();
        self.alphabet.iter().position(|sym| *sym == key)
    }

    pub fn step(&self, q: usize, symbol: usize) -> usize {
        self.transition[[q, symbol]]
    }

    /// Run the DFA on a word of proposition sets, starting from the initial
    /// state. Symbols outside the alphabet are rejected.
    pub fn run(&self, word: &[Vec<usize>]) -> Result<usize> {
        let mut q = self.initial;
        for props in word {
            let sym = self.symbol_index(props).ok_or_else(|| {
                Error::UnknownSymbol(format!(
                    "{{{}}}",
                    props
                        .iter()
                        .map(|&p| {
                            self.prop_names
                                .get(p)
                                .cloned()
                                .unwrap_or_else(|| format!("#{p}"))
                        })
                        .collect::<Vec<_>>()
                        .join(", ")
                ))
            })?;
            q = self.step(q, sym);
        }
        Ok(q)
    }
}

/// Run a DFA on a word of label sets.
pub fn dfa_run(dfa: &Dfa, word: &[Vec<usize>]) -> Result<usize> {
    dfa.run(word)
}

/// The synchronous product of a labeled MDP with a DFA.
///
/// Product state `(s, q)` tracks the automaton state reached after reading
/// the labels of all states visited so far, including the initial one, so
/// the automaton component of a product trajectory always equals the DFA run
/// over the projected label sequence.
#[derive(Debug, Clone)]
pub struct ProductMdp {
    pub mdp: Mdp,
    /// `(s, q)` for every retained product state, in construction order.
    pub state_pairs: Vec<(usize, usize)>,
    /// Base-state projection, aligned with `mdp` states.
    pub base_state: Vec<usize>,
    /// Automaton projection, aligned with `mdp` states.
    pub automaton_state: Vec<usize>,
    /// Pairs dropped as unreachable (empty when pruning is off).
    pub pruned: Vec<(usize, usize)>,
    pub n_dfa_states: usize,
}

impl ProductMdp {
    /// Observation model over product states, emitting as the base state.
    pub fn lift_observations(&self, obs: &ObservationModel) -> ObservationModel {
        obs.lift(&self.base_state)
    }

    /// Classifier exposing the automaton component as the secret. Its label
    /// set is the set of automaton states occurring among retained product
    /// states.
    pub fn automaton_classifier(&self, dfa: &Dfa) -> SecretClassifier {
        let mut present: Vec<usize> = self.automaton_state.clone();
        present.sort_unstable();
        present.dedup();
        let cell_index: HashMap<usize, usize> =
            present.iter().enumerate().map(|(i, &q)| (q, i)).collect();
        SecretClassifier::TerminalPartition {
            cell_of_state: self
                .automaton_state
                .iter()
                .map(|q| cell_index[q])
                .collect(),
            labels: present
                .iter()
                .map(|&q| dfa.state_names()[q].clone())
                .collect(),
        }
    }
}

/// Build the product MDP, pruning unreachable product states.
pub fn build_product(lmdp: &LabeledMdp, dfa: &Dfa) -> Result<ProductMdp> {
    build_product_with_pruning(lmdp, dfa, true)
}

/// Build the product MDP, optionally keeping unreachable states (useful for
/// checking that pruning does not change any probability).
pub fn build_product_with_pruning(
    lmdp: &LabeledMdp,
    dfa: &Dfa,
    prune: bool,
) -> Result<ProductMdp> {
    let mdp = &lmdp.mdp;
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let nq = dfa.n_states();

    // Every state label must be an alphabet symbol.
    let mut label_symbol = Vec::with_capacity(n);
    for s in 0..n {
        let sym = dfa.symbol_index(lmdp.label(s)).ok_or_else(|| {
            Error::AlphabetMismatch(format!(
                "label of state {} is not an alphabet symbol",
                mdp.state_names()[s]
            ))
        })?;
        label_symbol.push(sym);
    }

    // Reachable pairs by breadth-first search from the initial support.
    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut queue = std::collections::VecDeque::new();
    for (s0, &sym0) in label_symbol.iter().enumerate() {
        if mdp.initial()[s0] > 0.0 {
            let q0 = dfa.step(dfa.initial(), sym0);
            if let std::collections::hash_map::Entry::Vacant(e) = index.entry((s0, q0)) {
                e.insert(pairs.len());
                pairs.push((s0, q0));
                queue.push_back((s0, q0));
            }
        }
    }
    while let Some((s, q)) = queue.pop_front() {
        for a in 0..na {
            for (s2, &sym2) in label_symbol.iter().enumerate() {
                if mdp.transition_prob(s, a, s2) > 0.0 {
                    let q2 = dfa.step(q, sym2);
                    if let std::collections::hash_map::Entry::Vacant(e) = index.entry((s2, q2))
                    {
                        e.insert(pairs.len());
                        pairs.push((s2, q2));
                        queue.push_back((s2, q2));
                    }
                }
            }
        }
    }

    let mut pruned = Vec::new();
    if prune {
        for s in 0..n {
            for q in 0..nq {
                if !index.contains_key(&(s, q)) {
                    pruned.push((s, q));
                }
            }
        }
    } else {
        for s in 0..n {
            for q in 0..nq {
                if let std::collections::hash_map::Entry::Vacant(e) = index.entry((s, q)) {
                    e.insert(pairs.len());
                    pairs.push((s, q));
                }
            }
        }
    }

    let nv = pairs.len();
    let mut transition = Array3::zeros((nv, na, nv));
    let mut reward = Array2::zeros((nv, na));
    let mut initial = Array1::zeros(nv);
    for (v, &(s, q)) in pairs.iter().enumerate() {
        for a in 0..na {
            reward[[v, a]] = mdp.reward()[[s, a]];
            for s2 in 0..n {
                let p = mdp.transition_prob(s, a, s2);
                if p > 0.0 {
                    let q2 = dfa.step(q, label_symbol[s2]);
                    let v2 = index[&(s2, q2)];
                    transition[[v, a, v2]] += p;
                }
            }
        }
    }
    for s0 in 0..n {
        let p = mdp.initial()[s0];
        if p > 0.0 {
            let q0 = dfa.step(dfa.initial(), label_symbol[s0]);
            initial[index[&(s0, q0)]] += p;
        }
    }

    let names: Vec<String> = pairs
        .iter()
        .map(|&(s, q)| format!("{}|{}", mdp.state_names()[s], dfa.state_names()[q]))
        .collect();
    let product = Mdp::new(
        names,
        mdp.action_names().to_vec(),
        transition,
        initial,
        reward,
        mdp.discount(),
    )?;
    let base_state = pairs.iter().map(|&(s, _)| s).collect();
    let automaton_state = pairs.iter().map(|&(_, q)| q).collect();
    Ok(ProductMdp {
        mdp: product,
        state_pairs: pairs,
        base_state,
        automaton_state,
        pruned,
        n_dfa_states: nq,
    })
}
