//! Tabular model-based planning: exact dynamic programming, model
//! classification by policy performance, gridworld tasks, decision-time and
//! background planners, and the experiment harness that compares them.

pub mod approx;
pub mod dp;
pub mod error;
pub mod experiments;
pub mod gridworld;
pub mod mdp;
pub mod model_space;
pub mod planners;
pub mod plot;
pub mod value;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use mdp::{ModelView, Outcome, Policy, TabularMdp};
pub use value::{Representation, ValueTable};
