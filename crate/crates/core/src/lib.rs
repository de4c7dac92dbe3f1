//! Closed-loop two-drug anesthesia dosing lab.
//!
//! Synthetic PK/PD trajectories are resampled and aligned into case records,
//! a random forest learns the one-step dynamics, and two cooperating
//! Q-learning agents (propofol and remifentanil) are trained through one of
//! seven value-decomposition mixers and evaluated against the behavior policy.

pub mod agents;
pub mod envsim;
pub mod evalrep;
pub mod experiment;
pub mod error;
pub mod io;
pub mod mg;
pub mod mixers;
pub mod nn;
pub mod normalize;
pub mod pipeline;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
