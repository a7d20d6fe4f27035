//! Discrete-time two-way dynamic matching.
//!
//! Networks of agent types arrive one at a time; greedy policies decide which
//! compatible queued agent (if any) each arrival is matched with. The crate
//! solves the static planning LP, simulates the availability-based policies
//! and the longest-queue baseline, computes offline optima for regret, and
//! checks drift, Lipschitz and coupling properties numerically.

pub mod analytics;
pub mod cli;
pub mod engine;
pub mod error;
pub mod fluid;
pub mod fmt;
pub mod hindsight;
pub mod instances;
pub mod linalg;
pub mod network;
pub mod planner;
pub mod policies;
pub mod simplex;
pub mod verify;

pub use error::{Error, Result};
