//! Entanglement routing in partially observable quantum networks.
//!
//! The crate is organised bottom-up: [`netmodel`] simulates the hidden
//! network, [`belief`] filters it, [`aggregate`] and [`planner`] build the
//! belief-space planner, [`gnn`] the learned policy, [`hybrid`] fuses the two,
//! [`baselines`] provides reference policies and [`harness`] runs experiments.

pub mod aggregate;
pub mod baselines;
pub mod belief;
pub mod error;
pub mod gnn;
pub mod harness;
pub mod hybrid;
pub mod netmodel;
pub mod planner;
pub mod policy;
pub mod rng;
pub mod routing;
pub mod stats;

pub use error::{Error, Result};
