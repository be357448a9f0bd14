//! Optimistic regret minimization for average-reward tabular MDPs.
//!
//! The crate bundles exact solvers for known models ([`mdp`]), trajectory
//! statistics ([`trajectory`]), the bias-function confidence set
//! ([`confidence`]), optimistic planners ([`planners`]), online agents
//! ([`agents`]) and an experiment/validation harness ([`harness`]).

pub mod agents;
pub mod confidence;
pub mod error;
pub mod harness;
mod linalg;
pub mod mdp;
pub mod planners;
pub mod rng;
pub mod trajectory;

pub use agents::{Diagnostics, RegretTrace};
pub use confidence::{ConfidenceParams, ConfidenceSet, ConstraintReport};
pub use error::{Error, Result};
pub use mdp::{GainBias, Mdp, Policy, TransitionModel};
pub use planners::{PlannerBudget, SolverSolution};
pub use trajectory::{Step, Trajectory, TrajectoryStats};
