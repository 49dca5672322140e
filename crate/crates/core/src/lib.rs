//! Decide how much training data to collect.
//!
//! The pipeline learns a distribution over the minimum amount of data needed
//! to reach a target score (bootstrapped learning-curve fits followed by a
//! density estimate), then optimizes a multi-round collection schedule
//! against the expected collection cost plus a penalty for missing the
//! target. A simulator replays collection policies against ground-truth
//! learning curves and reports failure rates and cost ratios.

pub mod baselines;
pub mod curves;
pub mod density;
pub mod experiment;
pub mod planner;
pub mod simulator;
pub(crate) mod linalg;
pub mod rng;
