//! Cost-sharing mechanisms for an excludable public project whose release can be delayed.
//!
//! Agents report valuations in `[0, 1]`; a mechanism decides whether the unit-cost
//! project is built, when each agent may start consuming it and what each pays.

pub mod analysis;
pub mod costshare;
pub mod dist;
pub mod error;
pub mod evaluate;
pub mod evolve;
pub mod genome;
pub mod mechanisms;
pub mod model;
pub mod rng;

pub use costshare::{cost_share, indicator, largest_k, largest_k_at_deadline, optimal_deadline, CostShareResult};
pub use dist::{sample_profile, DistributionSpec};
pub use error::{Error, Result};
pub use genome::{CostShareVector, Genome};
pub use mechanisms::{
    fixed_deadline_run, group_based_run, multiple_deadline_run, optimal_deadline_run, scs_run,
    sequential_unanimous_run, single_deadline_run, Grouping, Mechanism,
};
pub use model::{check_outcome, utility, Outcome, TypeProfile, ValidationReport, Violation};
