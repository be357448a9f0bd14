//! Benchmark environments.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{self, Mdp, TransitionModel, ROW_SUM_TOL};
use crate::rng;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;
const GARNET_ATTEMPTS: usize = 1000;

/// `n`-state RiverSwim. Action 0 (LEFT) moves left deterministically and
/// pays 0.005 at the leftmost state; action 1 (RIGHT) drifts right
/// stochastically and pays 1.0 at the rightmost state.
pub fn make_riverswim(n: usize) -> Result<Mdp> {
    if n < 2 {
        return Err(Error::invalid("RiverSwim needs at least 2 states"));
    }
    let mut probs = vec![0.0; n * 2 * n];
    let mut rewards = vec![0.0; n * 2];
    for s in 0..n {
        let left = &mut probs[(s * 2 + LEFT) * n..(s * 2 + LEFT + 1) * n];
        left[s.saturating_sub(1)] = 1.0;
        let right = &mut probs[(s * 2 + RIGHT) * n..(s * 2 + RIGHT + 1) * n];
        if s == 0 {
            right[0] = 0.65;
            right[1] = 0.35;
        } else if s == n - 1 {
            right[s] = 0.95;
            right[s - 1] = 0.05;
        } else {
            right[s + 1] = 0.35;
            right[s] = 0.6;
            right[s - 1] = 0.05;
        }
    }
    rewards[LEFT] = 0.005;
    rewards[(n - 1) * 2 + RIGHT] = 1.0;
    Mdp::new(TransitionModel::new(n, 2, probs, ROW_SUM_TOL)?, rewards, 0)
}

/// Random Garnet MDP: every row is supported on `branching` distinct
/// uniformly chosen states with normalized uniform weights, rewards are
/// uniform on `[0, 1)`. Resampled until communicating.
pub fn make_garnet(n_states: usize, n_actions: usize, branching: usize, seed: u64) -> Result<Mdp> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::invalid("Garnet needs S, A >= 1"));
    }
    if branching == 0 || branching > n_states {
        return Err(Error::invalid(format!(
            "branching must lie in [1, {n_states}], got {branching}"
        )));
    }
    let mut rng = rng::stream(seed, "garnet");
    for _ in 0..GARNET_ATTEMPTS {
        let mut probs = vec![0.0; n_states * n_actions * n_states];
        for row in probs.chunks_mut(n_states) {
            let support = index::sample(&mut rng, n_states, branching);
            let weights: Vec<f64> = (0..branching).map(|_| 1.0 - rng.random::<f64>()).collect();
            let total: f64 = weights.iter().sum();
            for (x, w) in support.iter().zip(&weights) {
                row[x] = w / total;
            }
        }
        let rewards = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
        let mdp = Mdp::new(TransitionModel::new(n_states, n_actions, probs, 1e-9)?, rewards, 0)?;
        if mdp::is_communicating(&mdp) {
            return Ok(mdp);
        }
    }
    Err(Error::invalid(format!(
        "Garnet rejection budget of {GARNET_ATTEMPTS} draws exhausted without a communicating model"
    )))
}

/// Deterministic `n`-state chain: LEFT and RIGHT move one step (staying
/// put at the ends); reward 1 for RIGHT at the rightmost state.
pub fn make_chain(n: usize) -> Result<Mdp> {
    if n < 2 {
        return Err(Error::invalid("chain needs at least 2 states"));
    }
    let mut probs = vec![0.0; n * 2 * n];
    for s in 0..n {
        probs[(s * 2 + LEFT) * n + s.saturating_sub(1)] = 1.0;
        probs[(s * 2 + RIGHT) * n + (s + 1).min(n - 1)] = 1.0;
    }
    let mut rewards = vec![0.0; n * 2];
    rewards[(n - 1) * 2 + RIGHT] = 1.0;
    Mdp::new(TransitionModel::new(n, 2, probs, ROW_SUM_TOL)?, rewards, 0)
}

/// Two states, one action, deterministic swap; reward 1 in state 0.
pub fn make_swap() -> Mdp {
    let p = TransitionModel::new(2, 1, vec![0.0, 1.0, 1.0, 0.0], ROW_SUM_TOL).expect("valid rows");
    Mdp::new(p, vec![1.0, 0.0], 0).expect("valid model")
}

/// Environment selector used by experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "snake_case")]
pub enum EnvSpec {
    Riverswim {
        n: usize,
    },
    Garnet {
        states: usize,
        actions: usize,
        branching: usize,
        seed: u64,
    },
    Chain {
        n: usize,
    },
    Swap,
    /// An MDP stored as JSON (see [`crate::mdp::MdpFile`]).
    File {
        path: String,
    },
}

impl EnvSpec {
    pub fn build(&self) -> Result<Mdp> {
        match self {
            EnvSpec::Riverswim { n } => make_riverswim(*n),
            EnvSpec::Garnet {
                states,
                actions,
                branching,
                seed,
            } => make_garnet(*states, *actions, *branching, *seed),
            EnvSpec::Chain { n } => make_chain(*n),
            EnvSpec::Swap => Ok(make_swap()),
            EnvSpec::File { path } => Mdp::from_json(&std::fs::read_to_string(path)?),
        }
    }
}
