//! Delay-optimal computation offloading for a mobile terminal feeding a
//! computation-constrained MEC server through cascaded task queues.
//!
//! The crate contains the system model and its special functions, a seeded
//! stochastic environment, the closed-form water-filling policy, five
//! comparison baselines, a slotted simulator with Monte Carlo replication,
//! a discretized MDP oracle and a multi-terminal multi-server extension.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod config;
pub mod env;
pub mod error;
pub mod experiment;
pub mod mdp;
pub mod multimec;
pub mod numeric;
pub mod plot;
pub mod policy;
pub mod simulator;
pub mod sysmodel;

pub use error::{Error, Result};
