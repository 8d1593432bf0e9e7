//! Exhaustive analysis of NK, NKp and NKq fitness landscapes through their
//! local optima networks.
//!
//! The pipeline is: generate an [`NkInstance`](landscape::NkInstance),
//! partition it into neutral networks, compute probabilistic basins of
//! attraction for the stochastic hill climber, build the weighted local optima
//! network and summarize it with [`metrics`].

pub mod basins;
pub mod ea;
pub mod error;
pub mod experiment;
pub mod landscape;
pub mod lon;
pub mod metrics;
pub mod neutrality;
pub mod stats;

pub use error::{Error, Result};
