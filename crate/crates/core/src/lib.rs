//! Decentralized TD(0) policy evaluation with linear function approximation.
//!
//! Agents on an undirected network share one Markov reward process, observe a
//! common state trajectory and private rewards, and mix their parameter
//! estimates through a doubly stochastic matrix after every local TD step.
//! Besides the simulator, the crate evaluates the closed-form constants and
//! finite-sample bounds of the analysis so runs can be checked against them.

pub mod env;
pub mod featmap;
pub mod harness;
pub mod network;
pub mod error;
pub mod rng;
mod spectral;
pub mod tdcore;
pub mod theory;

pub use error::{Error, Result};
