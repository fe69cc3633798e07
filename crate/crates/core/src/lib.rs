//! Policy evaluation with linear function approximation.
//!
//! The crate covers the whole pipeline for finite Markov reward processes:
//!
//! - [`chain`]: the process itself, its stationary distribution and mixing profile;
//! - [`geometry`]: features, the projected Bellman system and its solution `theta*`;
//! - [`algos`]: the online estimators TD(0), iterate-averaged TD(0) and centered TD;
//! - [`bounds`]: finite-time error bound constants and step-size admissibility;
//! - [`harness`]: seeded multi-run experiments with CSV traces.

pub mod algos;
pub mod bounds;
pub mod chain;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod rng;

pub use error::{Error, Result};
