use thiserror::Error;

/// Errors produced by model construction, probability queries and the
/// optimization loop.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("symbol outside the automaton alphabet: {0}")]
    UnknownSymbol(String),

    #[error("labeled MDP and DFA alphabets do not agree: {0}")]
    AlphabetMismatch(String),

    #[error("augmented state space has {size} states, exceeding the cap of {cap}")]
    SizeCapExceeded { size: usize, cap: usize },

    #[error(
        "exact enumeration needs {needed} observation sequences, more than the cap of {cap}; \
         use sampled mode"
    )]
    EnumerationCapExceeded { needed: f64, cap: usize },

    #[error("posterior undefined: observation sequence has probability {prob:e}")]
    ZeroProbabilitySequence { prob: f64 },

    #[error("operator derivatives built to order {have}, but order {need} was requested")]
    OrderMismatch { have: usize, need: usize },

    #[error("non-finite gradient encountered at iteration {iteration}: {detail}")]
    NonFiniteGradient { iteration: usize, detail: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
