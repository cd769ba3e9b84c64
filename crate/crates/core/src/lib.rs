//! Tabular policy mirror descent with omega-potential mirror maps.
//!
//! The crate covers exact MDP evaluation, a procedural grid-world family,
//! mirror maps and Bregman divergences, closed-form and gradient-based PMD
//! updates with GAE critics, the tabular AMPO two-step update, convergence
//! bound diagnostics, evolution strategies over mirror-map parameters, and
//! the persistence/reporting formats used by the command-line harness.

pub mod ampo;
pub mod config;
pub mod error;
pub mod evolution;
pub mod gridworld;
pub mod kv;
pub mod mdp;
pub mod persist;
pub mod pmd;
pub mod potential;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
