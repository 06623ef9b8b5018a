//! Conservative off-policy learning to rank from logged clicks.

pub mod baselines;
pub mod click_sim;
pub mod cuolr;
pub mod dataset;
pub mod diffmath;
pub mod error;
pub mod evalharness;
pub mod mdp_rank;
pub mod rng;

pub use error::{Error, Result};
