//! Simulation and exact computation for the Bernoulli sieve.
//!
//! The sieve allocates balls over boxes with stick-breaking frequencies
//! `P_k = W_1 ⋯ W_{k-1}(1 - W_k)`. This crate samples the occupancy
//! statistics, evaluates the conditional moments of the number of empty boxes
//! in the occupancy range, simulates the perturbed random walks and limit laws
//! that govern its asymptotics, and computes the exact law of the
//! zero-decrement count of nonincreasing Markov chains.

pub mod absorb_chain;
pub mod error;
pub mod limit_law;
pub mod perturbed_walk;
pub mod rng;
pub mod sieve;
pub mod special;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
