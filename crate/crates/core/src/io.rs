//! JSON file formats for MDPs (with optional labels and sensor blocks) and
//! DFAs, plus loaders that validate probabilities on the way in.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::automata::Dfa;
use crate::error::{Error, Result};
use crate::mdp::{LabeledMdp, Mdp};
use crate::obsop::ObservationModel;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionEntry {
    pub from: String,
    pub action: String,
    pub to: String,
    pub prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardEntry {
    pub state: String,
    pub action: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmissionEntry {
    pub state: String,
    pub observation: String,
    pub prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensorBlock {
    pub observations: Vec<String>,
    pub emissions: Vec<EmissionEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpFile {
    pub schema_version: u32,
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub transitions: Vec<TransitionEntry>,
    pub initial: BTreeMap<String, f64>,
    pub rewards: Vec<RewardEntry>,
    pub discount: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atomic_props: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<BTreeMap<String, Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensors: Option<SensorBlock>,
}

/// A parsed model file: the MDP plus whatever optional blocks were present.
pub struct LoadedModel {
    pub mdp: Mdp,
    pub labeled: Option<LabeledMdp>,
    pub obs: Option<ObservationModel>,
}

impl MdpFile {
    pub fn from_model(
        mdp: &Mdp,
        obs: Option<&ObservationModel>,
        labeled: Option<&LabeledMdp>,
    ) -> MdpFile {
        let mut transitions = Vec::new();
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                for s2 in 0..mdp.n_states() {
                    let p = mdp.transition_prob(s, a, s2);
                    if p > 0.0 {
                        transitions.push(TransitionEntry {
                            from: mdp.state_names()[s].clone(),
                            action: mdp.action_names()[a].clone(),
                            to: mdp.state_names()[s2].clone(),
                            prob: p,
                        });
                    }
                }
            }
        }
        let mut initial = BTreeMap::new();
        for s in 0..mdp.n_states() {
            if mdp.initial()[s] > 0.0 {
                initial.insert(mdp.state_names()[s].clone(), mdp.initial()[s]);
            }
        }
        let mut rewards = Vec::new();
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                let v = mdp.reward()[[s, a]];
                if v != 0.0 {
                    rewards.push(RewardEntry {
                        state: mdp.state_names()[s].clone(),
                        action: mdp.action_names()[a].clone(),
                        value: v,
                    });
                }
            }
        }
        let sensors = obs.map(|o| SensorBlock {
            observations: o.observation_names().to_vec(),
            emissions: (0..mdp.n_states())
                .flat_map(|s| {
                    (0..o.n_observations()).filter_map(move |ob| {
                        let p = o.prob(s, ob);
                        (p > 0.0).then_some((s, ob, p))
                    })
                })
                .map(|(s, ob, p)| EmissionEntry {
                    state: mdp.state_names()[s].clone(),
                    observation: o.observation_names()[ob].clone(),
                    prob: p,
                })
                .collect(),
        });
        let (atomic_props, labels) = match labeled {
            Some(l) => (
                Some(l.atomic_props.clone()),
                Some(
                    (0..mdp.n_states())
                        .map(|s| {
                            (
                                mdp.state_names()[s].clone(),
                                l.label(s)
                                    .iter()
                                    .map(|&p| l.atomic_props[p].clone())
                                    .collect(),
                            )
                        })
                        .collect(),
                ),
            ),
            None => (None, None),
        };
        MdpFile {
            schema_version: SCHEMA_VERSION,
            states: mdp.state_names().to_vec(),
            actions: mdp.action_names().to_vec(),
            transitions,
            initial,
            rewards,
            discount: mdp.discount(),
            atomic_props,
            labels,
            sensors,
        }
    }

    pub fn into_model(self) -> Result<LoadedModel> {
        let n = self.states.len();
        let na = self.actions.len();
        let find = |names: &[String], name: &str, what: &str| -> Result<usize> {
            names
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| Error::InvalidModel(format!("unknown {what} '{name}'")))
        };
        let mut transition = Array3::zeros((n, na, n));
        for t in &self.transitions {
            let s = find(&self.states, &t.from, "state")?;
            let a = find(&self.actions, &t.action, "action")?;
            let s2 = find(&self.states, &t.to, "state")?;
            transition[[s, a, s2]] += t.prob;
        }
        let mut initial = Array1::zeros(n);
        for (name, p) in &self.initial {
            initial[find(&self.states, name, "state")?] = *p;
        }
        let mut reward = Array2::zeros((n, na));
        for r in &self.rewards {
            let s = find(&self.states, &r.state, "state")?;
            let a = find(&self.actions, &r.action, "action")?;
            reward[[s, a]] = r.value;
        }
        let mdp = Mdp::new(
            self.states.clone(),
            self.actions.clone(),
            transition,
            initial,
            reward,
            self.discount,
        )?;

        let obs = match &self.sensors {
            Some(block) => {
                let no = block.observations.len();
                let mut emission = Array2::zeros((n, no));
                for e in &block.emissions {
                    let s = find(&self.states, &e.state, "state")?;
                    let o = find(&block.observations, &e.observation, "observation")?;
                    emission[[s, o]] = e.prob;
                }
                Some(ObservationModel::new(block.observations.clone(), emission)?)
            }
            None => None,
        };

        let labeled = match (&self.atomic_props, &self.labels) {
            (Some(props), Some(labels)) => {
                let mut per_state = vec![Vec::new(); n];
                for (state, prop_names) in labels {
                    let s = find(&self.states, state, "state")?;
                    for p in prop_names {
                        per_state[s].push(find(props, p, "proposition")?);
                    }
                }
                Some(LabeledMdp::new(mdp.clone(), props.clone(), per_state)?)
            }
            (None, None) => None,
            _ => {
                return Err(Error::InvalidModel(
                    "labels and atomic_props must be given together".into(),
                ))
            }
        };

        Ok(LoadedModel { mdp, labeled, obs })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DfaTransitionEntry {
    pub from: String,
    pub symbol: Vec<String>,
    pub to: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DfaFile {
    pub schema_version: u32,
    pub states: Vec<String>,
    pub atomic_props: Vec<String>,
    /// Each symbol is a set of proposition names.
    pub alphabet: Vec<Vec<String>>,
    pub transitions: Vec<DfaTransitionEntry>,
    pub initial: String,
    pub accepting: Vec<String>,
}

impl DfaFile {
    pub fn from_dfa(dfa: &Dfa) -> DfaFile {
        let symbol_names = |sym: &[usize]| -> Vec<String> {
            sym.iter().map(|&p| dfa.prop_names()[p].clone()).collect()
        };
        let mut transitions = Vec::new();
        for q in 0..dfa.n_states() {
            for (sym_idx, sym) in dfa.alphabet().iter().enumerate() {
                transitions.push(DfaTransitionEntry {
                    from: dfa.state_names()[q].clone(),
                    symbol: symbol_names(sym),
                    to: dfa.state_names()[dfa.step(q, sym_idx)].clone(),
                });
            }
        }
        DfaFile {
            schema_version: SCHEMA_VERSION,
            states: dfa.state_names().to_vec(),
            atomic_props: dfa.prop_names().to_vec(),
            alphabet: dfa.alphabet().iter().map(|s| symbol_names(s)).collect(),
            transitions,
            initial: dfa.state_names()[dfa.initial()].clone(),
            accepting: (0..dfa.n_states())
                .filter(|&q| dfa.is_accepting(q))
                .map(|q| dfa.state_names()[q].clone())
                .collect(),
        }
    }

    pub fn into_dfa(self) -> Result<Dfa> {
        let find = |names: &[String], name: &str, what: &str| -> Result<usize> {
            names
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| Error::InvalidModel(format!("unknown {what} '{name}'")))
        };
        let prop_set = |names: &[String]| -> Result<Vec<usize>> {
            names
                .iter()
                .map(|p| find(&self.atomic_props, p, "proposition"))
                .collect()
        };
        let alphabet: Vec<Vec<usize>> = self
            .alphabet
            .iter()
            .map(|sym| prop_set(sym))
            .collect::<Result<_>>()?;
        let symbol_index = |props: &[usize]| -> Option<usize> {
            let mut key = props.to_vec();
            key.sort_unstable();
            key.dedup();
            alphabet
                .iter()
                .position(|sym| {
                    let mut s = sym.clone();
                    s.sort_unstable();
                    s == key
                })
        };
        let mut transitions = Vec::new();
        for t in &self.transitions {
            let from = find(&self.states, &t.from, "DFA state")?;
            let to = find(&self.states, &t.to, "DFA state")?;
            let sym = symbol_index(&prop_set(&t.symbol)?).ok_or_else(|| {
                Error::InvalidModel(format!("transition symbol {:?} not in alphabet", t.symbol))
            })?;
            transitions.push((from, sym, to));
        }
        let initial = find(&self.states, &self.initial, "DFA state")?;
        let mut accepting = vec![false; self.states.len()];
        for name in &self.accepting {
            accepting[find(&self.states, name, "DFA state")?] = true;
        }
        Dfa::new(
            self.states,
            self.atomic_props,
            alphabet,
            &transitions,
            initial,
            accepting,
        )
    }
}

pub fn save_mdp(
    path: &Path,
    mdp: &Mdp,
    obs: Option<&ObservationModel>,
    labeled: Option<&LabeledMdp>,
) -> Result<()> {
    let file = MdpFile::from_model(mdp, obs, labeled);
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_mdp(path: &Path) -> Result<LoadedModel> {
    let text = std::fs::read_to_string(path)?;
    let file: MdpFile = serde_json::from_str(&text)?;
    file.into_model()
}

pub fn save_dfa(path: &Path, dfa: &Dfa) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(&DfaFile::from_dfa(dfa))?)?;
    Ok(())
}

pub fn load_dfa(path: &Path) -> Result<Dfa> {
    let text = std::fs::read_to_string(path)?;
    let file: DfaFile = serde_json::from_str(&text)?;
    file.into_dfa()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envlib;
    use approx::assert_abs_diff_eq;

    #[test]
    fn mdp_round_trip() {
        let env = envlib::graph_example();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("graph.json");
        save_mdp(&path, &env.lmdp.mdp, Some(&env.obs), Some(&env.lmdp)).unwrap();
        let loaded = load_mdp(&path).unwrap();
        let mdp = &loaded.mdp;
        assert_eq!(mdp.state_names(), env.lmdp.mdp.state_names());
        for s in 0..mdp.n_states() {
            assert_abs_diff_eq!(mdp.initial()[s], env.lmdp.mdp.initial()[s], epsilon = 0.0);
            for a in 0..mdp.n_actions() {
                assert_eq!(mdp.reward()[[s, a]], env.lmdp.mdp.reward()[[s, a]]);
                for s2 in 0..mdp.n_states() {
                    assert_abs_diff_eq!(
                        mdp.transition_prob(s, a, s2),
                        env.lmdp.mdp.transition_prob(s, a, s2),
                        epsilon = 0.0
                    );
                }
            }
        }
        let obs = loaded.obs.unwrap();
        for s in 0..mdp.n_states() {
            for o in 0..obs.n_observations() {
                assert_eq!(obs.prob(s, o), env.obs.prob(s, o));
            }
        }
        let labeled = loaded.labeled.unwrap();
        for s in 0..mdp.n_states() {
            assert_eq!(labeled.label(s), env.lmdp.label(s));
        }
    }

    #[test]
    fn dfa_round_trip() {
        let env = envlib::graph_example();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dfa.json");
        save_dfa(&path, &env.dfa).unwrap();
        let dfa = load_dfa(&path).unwrap();
        assert_eq!(dfa.n_states(), 4);
        assert_eq!(dfa.initial(), env.dfa.initial());
        for q in 0..4 {
            assert_eq!(dfa.is_accepting(q), env.dfa.is_accepting(q));
            for sym in 0..4 {
                assert_eq!(dfa.step(q, sym), env.dfa.step(q, sym));
            }
        }
    }

    #[test]
    fn gridworld_round_trip_probabilities() {
        let grid = envlib::gridworld(envlib::GridWorldConfig::default_last_state()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.json");
        save_mdp(&path, &grid.mdp, Some(&grid.obs), None).unwrap();
        let loaded = load_mdp(&path).unwrap();
        for s in 0..grid.mdp.n_states() {
            for a in 0..grid.mdp.n_actions() {
                for s2 in 0..grid.mdp.n_states() {
                    assert_eq!(
                        loaded.mdp.transition_prob(s, a, s2),
                        grid.mdp.transition_prob(s, a, s2)
                    );
                }
            }
        }
    }

    #[test]
    fn example_round_trip() {
        let env = envlib::example_finite_memory();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("example.json");
        save_mdp(&path, &env.mdp, Some(&env.obs), None).unwrap();
        let loaded = load_mdp(&path).unwrap();
        assert_eq!(loaded.mdp.state_names(), env.mdp.state_names());
        for s in 0..3 {
            for a in 0..2 {
                assert_eq!(loaded.mdp.reward()[[s, a]], env.mdp.reward()[[s, a]]);
                for s2 in 0..3 {
                    assert_eq!(
                        loaded.mdp.transition_prob(s, a, s2),
                        env.mdp.transition_prob(s, a, s2)
                    );
                }
            }
        }
        let obs = loaded.obs.unwrap();
        for s in 0..3 {
            for o in 0..3 {
                assert_eq!(obs.prob(s, o), env.obs.prob(s, o));
            }
        }
    }

    #[test]
    fn invalid_probabilities_rejected_on_load() {
        let env = envlib::example_finite_memory();
        let mut file = MdpFile::from_model(&env.mdp, None, None);
        file.transitions[0].prob = 0.8; // break a row sum
        let err = file.into_model();
        assert!(err.is_err());
    }
}
