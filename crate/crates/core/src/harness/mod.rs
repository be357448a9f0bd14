//! Environments, experiments and validation suites.

pub mod counterexample;
pub mod doubling;
pub mod envs;
pub mod experiment;
pub mod validation;

pub use envs::{make_chain, make_garnet, make_riverswim, make_swap, EnvSpec};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentSummary};
pub use validation::{validate, ValidationReport};
