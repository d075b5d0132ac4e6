//! Synthesis of control policies that keep a secret: maximize the
//! conditional entropy of a secret (a set membership of the final state, the
//! identity of the initial state, or the state of a task automaton) given an
//! eavesdropper's noisy observations, subject to a lower bound on expected
//! return.
//!
//! The crate provides:
//!
//! * [`mdp`]: finite MDPs, softmax policies, sampling, values and value
//!   gradients, finite-memory augmentation;
//! * [`automata`]: DFAs and the product construction reducing language-based
//!   secrets to last-state secrets;
//! * [`obsop`]: the observer-side hidden Markov model via observable
//!   operators, with first- and second-order message recursions;
//! * [`opacity`]: exact and sampled conditional-entropy functionals with
//!   gradients and Hessians;
//! * [`optimizer`]: the primal-dual projected gradient loop;
//! * [`evaluation`]: guess-error metrics and the entropy-regularized
//!   baseline;
//! * [`envlib`]: built-in example environments;
//! * [`io`]: JSON model formats;
//! * [`verify`]: independent oracles and finite-difference checks.

pub mod automata;
pub mod envlib;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod mdp;
pub mod obsop;
pub mod opacity;
pub mod optimizer;
pub mod verify;

pub use error::{Error, Result};
