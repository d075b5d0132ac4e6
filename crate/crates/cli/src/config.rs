//! Experiment configuration: one JSON format for every command, with CLI
//! flags overriding individual fields.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};

use opacity_core::automata::{build_product, Dfa};
use opacity_core::envlib;
use opacity_core::io;
use opacity_core::mdp::Mdp;
use opacity_core::obsop::ObservationModel;
use opacity_core::opacity::SecretClassifier;
use opacity_core::optimizer::{GradientMode, OpacityProblem, PrimalDualConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    LastState,
    InitialState,
    Language,
    BaselineSweep,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Builtin { builtin: String },
    Files { mdp: PathBuf, #[serde(default)] dfa: Option<PathBuf> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSection {
    pub iterations: usize,
    pub step_exponent: f64,
    pub sample_size: usize,
    pub lambda_max: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub mode: GradientModeArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GradientModeArg {
    Exact,
    Sampled,
}

impl From<GradientModeArg> for GradientMode {
    fn from(value: GradientModeArg) -> Self {
        match value {
            GradientModeArg::Exact => GradientMode::Exact,
            GradientModeArg::Sampled => GradientMode::Sampled,
        }
    }
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = PrimalDualConfig::default();
        OptimizerSection {
            iterations: d.iterations,
            step_exponent: d.step_exponent,
            sample_size: d.sample_size,
            lambda_max: d.lambda_max,
            theta_min: d.theta_min,
            theta_max: d.theta_max,
            mode: GradientModeArg::Sampled,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineSection {
    pub steps: usize,
    pub learning_rate: f64,
    pub sample_size: usize,
    pub taus: Vec<f64>,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            steps: 400,
            learning_rate: 0.5,
            sample_size: 500,
            // eleven weights spread over [1, 20]
            taus: (0..11).map(|i| 1.0 + i as f64 * 1.9).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: ProblemKind,
    pub model: ModelSource,
    pub horizon: usize,
    #[serde(default)]
    pub zeta: f64,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    /// Master seed; mandatory so every artifact is reproducible.
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Secret states for last-state problems on file models.
    #[serde(default)]
    pub secret_states: Option<Vec<String>>,
    #[serde(default)]
    pub baseline: Option<BaselineSection>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        if config.schema_version != SCHEMA_VERSION {
            bail!(
                "config schema_version {} unsupported (expected {SCHEMA_VERSION})",
                config.schema_version
            );
        }
        Ok(config)
    }

    pub fn primal_dual(&self) -> PrimalDualConfig {
        PrimalDualConfig {
            zeta: self.zeta,
            iterations: self.optimizer.iterations,
            step_exponent: self.optimizer.step_exponent,
            theta_min: self.optimizer.theta_min,
            theta_max: self.optimizer.theta_max,
            lambda_max: self.optimizer.lambda_max,
            sample_size: self.optimizer.sample_size,
            seed: self.seed,
            mode: self.optimizer.mode.into(),
        }
    }
}

/// A fully assembled model: the MDP the optimizer runs on, the observer's
/// sensor over that state space, and optional origin structures.
pub struct AssembledModel {
    pub mdp: Mdp,
    pub obs: ObservationModel,
    /// Base model secret for last-state problems, when the source defines one.
    pub secret: Option<SecretClassifier>,
    pub labeled: Option<opacity_core::mdp::LabeledMdp>,
    pub dfa: Option<Dfa>,
}

pub fn load_model(source: &ModelSource) -> anyhow::Result<AssembledModel> {
    match source {
        ModelSource::Builtin { builtin } => match builtin.as_str() {
            "example-finite-memory" => {
                let env = envlib::example_finite_memory();
                Ok(AssembledModel {
                    mdp: env.mdp,
                    obs: env.obs,
                    secret: Some(env.secret),
                    labeled: None,
                    dfa: None,
                })
            }
            "example-finite-memory-augmented" => {
                let env = envlib::example_finite_memory();
                let aug = opacity_core::mdp::augment_with_memory(
                    &env.mdp,
                    &opacity_core::mdp::MemoryTransducer::time_counter(3),
                )?;
                Ok(AssembledModel {
                    obs: env.obs.lift(&aug.base_state),
                    secret: Some(envlib::lift_membership(&env.secret, &aug.base_state)),
                    mdp: aug.mdp,
                    labeled: None,
                    dfa: None,
                })
            }
            "gridworld-last-state" | "gridworld" => {
                let grid = envlib::gridworld(envlib::GridWorldConfig::default_last_state())?;
                Ok(AssembledModel {
                    mdp: grid.mdp,
                    obs: grid.obs,
                    secret: Some(grid.secret),
                    labeled: None,
                    dfa: None,
                })
            }
            "gridworld-initial-state" => {
                let grid = envlib::gridworld(envlib::GridWorldConfig::default_initial_state())?;
                Ok(AssembledModel {
                    mdp: grid.mdp,
                    obs: grid.obs,
                    secret: Some(grid.secret),
                    labeled: None,
                    dfa: None,
                })
            }
            "graph-example" => {
                let env = envlib::graph_example();
                Ok(AssembledModel {
                    mdp: env.lmdp.mdp.clone(),
                    obs: env.obs,
                    secret: None,
                    labeled: Some(env.lmdp),
                    dfa: Some(env.dfa),
                })
            }
            other => bail!(
                "unknown builtin '{other}' (available: example-finite-memory, \
                 gridworld-last-state, gridworld-initial-state, graph-example)"
            ),
        },
        ModelSource::Files { mdp, dfa } => {
            let loaded = io::load_mdp(mdp)
                .map_err(|e| anyhow!("loading model {}: {e}", mdp.display()))?;
            let obs = loaded.obs.ok_or_else(|| {
                anyhow!(
                    "model {} has no sensors block; the observer needs one",
                    mdp.display()
                )
            })?;
            let dfa = match dfa {
                Some(path) => Some(
                    io::load_dfa(path)
                        .map_err(|e| anyhow!("loading DFA {}: {e}", path.display()))?,
                ),
                None => None,
            };
            Ok(AssembledModel {
                mdp: loaded.mdp,
                obs,
                secret: None,
                labeled: loaded.labeled,
                dfa,
            })
        }
    }
}

/// Assemble the optimization problem for a config.
pub fn build_problem(config: &ExperimentConfig) -> anyhow::Result<OpacityProblem> {
    let model = load_model(&config.model)?;
    match config.kind {
        ProblemKind::LastState | ProblemKind::BaselineSweep => {
            let classifier = match (&config.secret_states, model.secret) {
                (Some(names), _) => {
                    let mut indices = Vec::new();
                    for name in names {
                        indices.push(model.mdp.state_index(name).ok_or_else(|| {
                            anyhow!("secret state '{name}' not found in the model")
                        })?);
                    }
                    SecretClassifier::membership_of(&model.mdp, &indices)
                }
                (None, Some(secret)) => secret,
                (None, None) => bail!("last-state problem needs secret_states"),
            };
            Ok(OpacityProblem {
                mdp: model.mdp,
                obs: model.obs,
                classifier,
                horizon: config.horizon,
            })
        }
        ProblemKind::InitialState => Ok(OpacityProblem {
            mdp: model.mdp,
            obs: model.obs,
            classifier: SecretClassifier::InitialState,
            horizon: config.horizon,
        }),
        ProblemKind::Language => {
            let labeled = model
                .labeled
                .ok_or_else(|| anyhow!("language problem needs a labeled MDP"))?;
            let dfa = model
                .dfa
                .ok_or_else(|| anyhow!("language problem needs a DFA"))?;
            let product = build_product(&labeled, &dfa)?;
            let obs = product.lift_observations(&model.obs);
            let classifier = product.automaton_classifier(&dfa);
            Ok(OpacityProblem {
                mdp: product.mdp,
                obs,
                classifier,
                horizon: config.horizon,
            })
        }
    }
}
