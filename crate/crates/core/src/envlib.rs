//! Built-in example environments: the three-state sensor example, a
//! stochastic grid world with partially observing sensors, and the
//! seven-state graph with a four-state task automaton.
//!
//! The grid-world layout is an approximation: sensor footprints, walls and
//! special cells follow the published picture only loosely, so grid
//! acceptance checks are property-based rather than number-matching.

use ndarray::{Array1, Array2, Array3};

use crate::automata::Dfa;
use crate::error::{Error, Result};
use crate::mdp::{LabeledMdp, Mdp, MemoryAugmentation, SoftmaxPolicy, THETA_MAX, THETA_MIN};
use crate::obsop::ObservationModel;
use crate::opacity::SecretClassifier;

/// The three-state example: action `a` loops at `q0`, action `b` jumps to one
/// of two absorbing sensor states, each detected with probability one half.
pub struct ExampleFiniteMemory {
    pub mdp: Mdp,
    pub obs: ObservationModel,
    pub secret: SecretClassifier,
}

pub fn example_finite_memory() -> ExampleFiniteMemory {
    let n = 3;
    let a = 2;
    let mut transition = Array3::zeros((n, a, n));
    // q0: a stays, b splits to the sinks
    transition[[0, 0, 0]] = 1.0;
    transition[[0, 1, 1]] = 0.5;
    transition[[0, 1, 2]] = 0.5;
    for act in 0..a {
        transition[[1, act, 1]] = 1.0;
        transition[[2, act, 2]] = 1.0;
    }
    let mut reward = Array2::zeros((n, a));
    // Reward 1 upon reaching a sink, attached to the transition out of q0.
    reward[[0, 1]] = 1.0;
    let mdp = Mdp::new(
        vec!["q0".into(), "q1".into(), "q2".into()],
        vec!["a".into(), "b".into()],
        transition,
        ndarray::array![1.0, 0.0, 0.0],
        reward,
        1.0,
    )
    .unwrap();
    let emission = ndarray::array![
        [1.0, 0.0, 0.0], // q0: N
        [0.5, 0.5, 0.0], // q1: N or R
        [0.5, 0.0, 0.5], // q2: N or B
    ];
    let obs = ObservationModel::new(vec!["N".into(), "R".into(), "B".into()], emission).unwrap();
    let secret = SecretClassifier::membership(vec![false, true, false]);
    ExampleFiniteMemory { mdp, obs, secret }
}

/// Markov policy for the example with `pi(a | q0) = alpha`; behavior at the
/// sinks is irrelevant and left uniform.
pub fn markov_example_policy(alpha: f64) -> SoftmaxPolicy {
    let mut theta = Array2::zeros((3, 2));
    theta[[0, 0]] = alpha.max(f64::MIN_POSITIVE).ln().clamp(THETA_MIN, THETA_MAX);
    theta[[0, 1]] = (1.0 - alpha)
        .max(f64::MIN_POSITIVE)
        .ln()
        .clamp(THETA_MIN, THETA_MAX);
    SoftmaxPolicy::new(theta)
}

fn phi2(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.log2()
    }
}

/// Closed-form conditional entropy of the secret under the Markov policy
/// `pi(a | q0) = alpha`, in bits. Only the all-null observation contributes;
/// the three polynomials below are the joint masses P(Z=1, NNN), P(Z=0, NNN)
/// and the sequence mass P(NNN).
pub fn markov_example_entropy(alpha: f64) -> f64 {
    let a = -0.25 * alpha * alpha + alpha / 8.0 + 0.125;
    let b = 0.75 * alpha * alpha + alpha / 8.0 + 0.125;
    let c = 0.5 * alpha * alpha + 0.25 * alpha + 0.25;
    -(phi2(a) + phi2(b) - phi2(c))
}

/// Analytic derivative of [`markov_example_entropy`] in `alpha`.
pub fn markov_example_entropy_derivative(alpha: f64) -> f64 {
    let a = -0.25 * alpha * alpha + alpha / 8.0 + 0.125;
    let b = 0.75 * alpha * alpha + alpha / 8.0 + 0.125;
    let c = 0.5 * alpha * alpha + 0.25 * alpha + 0.25;
    let da = -0.5 * alpha + 0.125;
    let db = 1.5 * alpha + 0.125;
    let dc = alpha + 0.25;
    // The 1/ln2 correction terms cancel because da + db = dc.
    -(da * a.log2() + db * b.log2() - dc * c.log2())
}

/// The deterministic finite-memory policy on a time-counter augmentation:
/// wait one step, then jump. Memory c1 is in force at time 0 (the counter
/// consumes the initial state), c2 from time 1 on.
pub fn finite_memory_example_policy(aug: &MemoryAugmentation) -> SoftmaxPolicy {
    let mut theta = Array2::zeros((aug.mdp.n_states(), 2));
    for v in 0..aug.mdp.n_states() {
        match aug.memory_state[v] {
            1 => {
                theta[[v, 0]] = THETA_MAX;
                theta[[v, 1]] = THETA_MIN;
            }
            2 => {
                theta[[v, 0]] = THETA_MIN;
                theta[[v, 1]] = THETA_MAX;
            }
            _ => {}
        }
    }
    SoftmaxPolicy::new(theta)
}

/// Lift a terminal-membership secret through a state projection.
pub fn lift_membership(secret: &SecretClassifier, base_state: &[usize]) -> SecretClassifier {
    match secret {
        SecretClassifier::TerminalMembership { secret } => SecretClassifier::TerminalMembership {
            secret: base_state.iter().map(|&s| secret[s]).collect(),
        },
        _ => panic!("lift_membership expects a membership classifier"),
    }
}

/// A rectangular sensor footprint with a detection probability.
#[derive(Debug, Clone)]
pub struct SensorRegion {
    pub name: String,
    pub cells: Vec<(usize, usize)>,
    pub detect_prob: f64,
}

/// Grid-world description. Cells are `(row, col)`; walls are not states,
/// danger cells are absorbing states.
#[derive(Debug, Clone)]
pub struct GridWorldConfig {
    pub width: usize,
    pub height: usize,
    pub walls: Vec<(usize, usize)>,
    pub danger: Vec<(usize, usize)>,
    pub sensors: Vec<SensorRegion>,
    pub goals: Vec<(usize, usize)>,
    pub secrets: Vec<(usize, usize)>,
    pub initial_cells: Vec<(usize, usize)>,
    /// Probability of slipping to each of the two adjacent directions.
    pub slip_prob: f64,
    pub discount: f64,
}

impl GridWorldConfig {
    fn base() -> Self {
        GridWorldConfig {
            width: 6,
            height: 6,
            walls: vec![(1, 3)],
            danger: vec![(4, 1)],
            sensors: vec![
                SensorRegion {
                    name: "A".into(),
                    cells: vec![(0, 1), (0, 2), (1, 1), (1, 2)],
                    detect_prob: 0.7,
                },
                SensorRegion {
                    name: "B".into(),
                    cells: vec![(0, 3), (0, 4), (1, 4)],
                    detect_prob: 0.7,
                },
                SensorRegion {
                    name: "C".into(),
                    cells: vec![(2, 1), (2, 2)],
                    detect_prob: 0.7,
                },
                SensorRegion {
                    name: "D".into(),
                    cells: vec![(5, 1), (5, 2), (5, 3)],
                    detect_prob: 0.7,
                },
                SensorRegion {
                    name: "E".into(),
                    cells: vec![(2, 5), (3, 5), (4, 5)],
                    detect_prob: 0.7,
                },
            ],
            goals: vec![(2, 4), (3, 4)],
            secrets: vec![(2, 3), (3, 3), (4, 3), (4, 4)],
            initial_cells: Vec::new(),
            slip_prob: 0.1,
            discount: 0.95,
        }
    }

    /// Default layout for the last-state task: start anywhere in the first
    /// column.
    pub fn default_last_state() -> Self {
        let mut config = Self::base();
        config.initial_cells = (0..6).map(|r| (r, 0)).collect();
        config
    }

    /// Default layout for the initial-state task: three corner starts, all
    /// outside every sensor footprint.
    pub fn default_initial_state() -> Self {
        let mut config = Self::base();
        config.initial_cells = vec![(0, 0), (0, 5), (5, 5)];
        config
    }
}

/// A constructed grid world.
pub struct GridWorld {
    pub mdp: Mdp,
    pub obs: ObservationModel,
    /// Last-state secret: membership of the final cell in the secret set.
    pub secret: SecretClassifier,
    /// Cell of each state.
    pub cells: Vec<(usize, usize)>,
    pub config: GridWorldConfig,
}

impl GridWorld {
    pub fn state_of_cell(&self, cell: (usize, usize)) -> Option<usize> {
        self.cells.iter().position(|&c| c == cell)
    }
}

const DIRS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, 1), (0, -1)]; // N, S, E, W

pub fn gridworld(config: GridWorldConfig) -> Result<GridWorld> {
    let in_bounds = |r: isize, c: isize| {
        r >= 0 && c >= 0 && (r as usize) < config.height && (c as usize) < config.width
    };
    for &(r, c) in config
        .walls
        .iter()
        .chain(&config.danger)
        .chain(&config.goals)
        .chain(&config.secrets)
        .chain(&config.initial_cells)
        .chain(config.sensors.iter().flat_map(|s| &s.cells))
    {
        if r >= config.height || c >= config.width {
            return Err(Error::InvalidModel(format!(
                "cell ({r}, {c}) outside the {}x{} grid",
                config.height, config.width
            )));
        }
    }
    if config.slip_prob < 0.0 || config.slip_prob * 2.0 > 1.0 {
        return Err(Error::InvalidModel("slip probability outside [0, 0.5]".into()));
    }
    for sensor in &config.sensors {
        if !(0.0..=1.0).contains(&sensor.detect_prob) {
            return Err(Error::InvalidModel(format!(
                "sensor {} detection probability outside [0, 1]",
                sensor.name
            )));
        }
    }
    if config.initial_cells.is_empty() {
        return Err(Error::InvalidModel("no initial cells".into()));
    }

    // Non-wall cells become states, in row-major order.
    let mut cells = Vec::new();
    for r in 0..config.height {
        for c in 0..config.width {
            if !config.walls.contains(&(r, c)) {
                cells.push((r, c));
            }
        }
    }
    let state_of = |cell: (usize, usize)| cells.iter().position(|&c| c == cell);
    for &cell in &config.initial_cells {
        if state_of(cell).is_none() {
            return Err(Error::InvalidModel(format!(
                "initial cell {cell:?} is a wall"
            )));
        }
    }

    let n = cells.len();
    let actions = ["north", "south", "east", "west", "stay"];
    let na = actions.len();
    let mut transition = Array3::zeros((n, na, n));
    for (s, &(r, c)) in cells.iter().enumerate() {
        if config.danger.contains(&(r, c)) {
            for a in 0..na {
                transition[[s, a, s]] = 1.0;
            }
            continue;
        }
        let destination = |dir: (isize, isize)| -> usize {
            let (nr, nc) = (r as isize + dir.0, c as isize + dir.1);
            if in_bounds(nr, nc) {
                state_of((nr as usize, nc as usize)).unwrap_or(s)
            } else {
                s
            }
        };
        for (a, &dir) in DIRS.iter().enumerate() {
            let main = 1.0 - 2.0 * config.slip_prob;
            transition[[s, a, destination(dir)]] += main;
            // slips go to the two perpendicular directions
            let (p1, p2) = if dir.0 == 0 {
                ((-1, 0), (1, 0))
            } else {
                ((0, -1), (0, 1))
            };
            transition[[s, a, destination(p1)]] += config.slip_prob;
            transition[[s, a, destination(p2)]] += config.slip_prob;
        }
        transition[[s, na - 1, s]] = 1.0; // stay
    }

    let mut reward = Array2::zeros((n, na));
    for &cell in &config.goals {
        if let Some(s) = state_of(cell) {
            for a in 0..na {
                reward[[s, a]] = 1.0;
            }
        }
    }

    let mut initial = Array1::zeros(n);
    let w = 1.0 / config.initial_cells.len() as f64;
    for &cell in &config.initial_cells {
        initial[state_of(cell).unwrap()] += w;
    }

    let mdp = Mdp::new(
        cells.iter().map(|&(r, c)| format!("r{r}c{c}")).collect(),
        actions.iter().map(|s| s.to_string()).collect(),
        transition,
        initial,
        reward,
        config.discount,
    )?;

    let mut obs_names: Vec<String> = config.sensors.iter().map(|s| s.name.clone()).collect();
    obs_names.push("N0".into());
    let null_idx = obs_names.len() - 1;
    let mut emission = Array2::zeros((n, obs_names.len()));
    for (s, &cell) in cells.iter().enumerate() {
        let mut covered = false;
        for (o, sensor) in config.sensors.iter().enumerate() {
            if sensor.cells.contains(&cell) {
                emission[[s, o]] = sensor.detect_prob;
                emission[[s, null_idx]] = 1.0 - sensor.detect_prob;
                covered = true;
                break;
            }
        }
        if !covered {
            emission[[s, null_idx]] = 1.0;
        }
    }
    let obs = ObservationModel::new(obs_names, emission)?;

    let secret = SecretClassifier::membership(
        cells.iter().map(|c| config.secrets.contains(c)).collect(),
    );

    Ok(GridWorld {
        mdp,
        obs,
        secret,
        cells,
        config,
    })
}

/// The seven-state graph with two hidden states, two goal states and a
/// four-state DFA tracking "visit a secret then a goal, or just a goal".
pub struct GraphExample {
    pub lmdp: LabeledMdp,
    pub obs: ObservationModel,
    pub dfa: Dfa,
}

pub fn graph_example() -> GraphExample {
    let names = ["0", "1", "2", "3", "4", "h1", "h2"];
    let n = names.len();
    let na = 2;
    let idx = |name: &str| names.iter().position(|&s| s == name).unwrap();
    let (s0, s1, s2, s3, s4, h1, h2) = (
        idx("0"),
        idx("1"),
        idx("2"),
        idx("3"),
        idx("4"),
        idx("h1"),
        idx("h2"),
    );
    let mut transition = Array3::zeros((n, na, n));
    let mut set = |s: usize, a: usize, pairs: &[(usize, f64)]| {
        for &(s2, p) in pairs {
            transition[[s, a, s2]] = p;
        }
    };
    set(s0, 0, &[(h1, 1.0)]);
    set(s0, 1, &[(s1, 1.0)]);
    set(s1, 0, &[(s3, 0.5), (s4, 0.5)]);
    set(s1, 1, &[(h2, 1.0)]);
    set(s2, 0, &[(s3, 1.0)]);
    set(s2, 1, &[(h1, 1.0)]);
    set(s3, 0, &[(s1, 0.5), (h2, 0.5)]);
    set(s3, 1, &[(s2, 1.0)]);
    set(s4, 0, &[(s1, 0.5), (h2, 0.5)]);
    set(s4, 1, &[(s3, 1.0)]);
    set(h1, 0, &[(s2, 1.0)]);
    set(h1, 1, &[(s2, 1.0)]);
    set(h2, 0, &[(s3, 0.5), (s4, 0.5)]);
    set(h2, 1, &[(s3, 0.5), (s4, 0.5)]);

    let mut reward = Array2::zeros((n, na));
    for a in 0..na {
        reward[[s2, a]] = 1.0;
        reward[[s4, a]] = 0.1;
    }
    let mut initial = Array1::zeros(n);
    initial[s0] = 1.0;
    let mdp = Mdp::new(
        names.iter().map(|s| s.to_string()).collect(),
        vec!["a1".into(), "a2".into()],
        transition,
        initial,
        reward,
        0.95,
    )
    .unwrap();

    // p_s marks the hidden states, p_g the goal states.
    let props = vec!["p_s".to_string(), "p_g".to_string()];
    let mut labels = vec![Vec::new(); n];
    labels[h1] = vec![0];
    labels[h2] = vec![0];
    labels[s2] = vec![1];
    labels[s4] = vec![1];
    let lmdp = LabeledMdp::new(mdp, props.clone(), labels).unwrap();

    // Full observation at 0, h1 and 2; the red sensor covers {1, 4}, the
    // blue sensor {3, h2}, each answering with probability one half.
    let mut emission = Array2::zeros((n, 6));
    let (o0, oh1, o2, or, ob, on) = (0, 1, 2, 3, 4, 5);
    emission[[s0, o0]] = 1.0;
    emission[[h1, oh1]] = 1.0;
    emission[[s2, o2]] = 1.0;
    for s in [s1, s4] {
        emission[[s, or]] = 0.5;
        emission[[s, on]] = 0.5;
    }
    for s in [s3, h2] {
        emission[[s, ob]] = 0.5;
        emission[[s, on]] = 0.5;
    }
    let obs = ObservationModel::new(
        vec![
            "o0".into(),
            "oh1".into(),
            "o2".into(),
            "r".into(),
            "b".into(),
            "n".into(),
        ],
        emission,
    )
    .unwrap();

    // Alphabet: all proposition subsets. The simultaneous symbol
    // {p_s, p_g} never occurs in this model; it is routed as if the secret
    // was witnessed before the goal.
    let alphabet = vec![vec![], vec![0], vec![1], vec![0, 1]];
    let (q0, q1, q2, q3) = (0, 1, 2, 3);
    let empty = 0;
    let ps = 1;
    let pg = 2;
    let both = 3;
    let transitions = vec![
        (q0, empty, q0),
        (q0, ps, q2),
        (q0, pg, q1),
        (q0, both, q3),
        (q1, empty, q1),
        (q1, ps, q1),
        (q1, pg, q1),
        (q1, both, q1),
        (q2, empty, q2),
        (q2, ps, q2),
        (q2, pg, q3),
        (q2, both, q3),
        (q3, empty, q3),
        (q3, ps, q3),
        (q3, pg, q3),
        (q3, both, q3),
    ];
    let dfa = Dfa::new(
        vec!["q0".into(), "q1".into(), "q2".into(), "q3".into()],
        props,
        alphabet,
        &transitions,
        q0,
        vec![false, true, false, true],
    )
    .unwrap();

    GraphExample { lmdp, obs, dfa }
}
