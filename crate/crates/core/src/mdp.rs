//! Ground-truth computations on fully known tabular MDPs.
//!
//! Everything in this module is exact up to iteration tolerances: optimal
//! gain and bias by relative value iteration, the diameter by hitting-time
//! value iteration, optimal gaps, flattening and the variance functional
//! `V(x, h)`. Other modules use these as oracles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance for models loaded from the outside world.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Looser row-sum tolerance for numerically constructed rows.
pub const SIMPLEX_TOL: f64 = 1e-9;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

/// Actions whose backed-up values are within this of the maximum are
/// treated as tied; ties go to the lowest index.
pub const TIE_TOL: f64 = 1e-9;

/// Self-loop weight of the aperiodicity transform `tau * I + (1 - tau) * P`.
/// It leaves the bias unchanged and scales the gain by `1 - tau`.
pub(crate) const APERIODIC_TAU: f64 = 0.5;

/// Per-(s, a) distributions over next states, stored flat as `[s][a][s']`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TransitionModel {
    /// Builds a model and checks every row is a simplex point within `tol`.
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>, tol: f64) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("model needs at least one state and one action"));
        }
        if probs.len() != n_states * n_actions * n_states {
            return Err(Error::invalid(format!(
                "expected {} transition entries, got {}",
                n_states * n_actions * n_states,
                probs.len()
            )));
        }
        let model = TransitionModel {
            n_states,
            n_actions,
            probs,
        };
        for s in 0..n_states {
            for a in 0..n_actions {
                check_simplex(model.row(s, a), tol).map_err(|msg| Error::invalid(format!("row ({s}, {a}): {msg}")))?;
            }
        }
        Ok(model)
    }

    pub fn from_nested(rows: &[Vec<Vec<f64>>], tol: f64) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        let mut probs = Vec::with_capacity(n_states * n_actions * n_states);
        for (s, per_action) in rows.iter().enumerate() {
            if per_action.len() != n_actions {
                return Err(Error::invalid(format!("state {s} has {} actions", per_action.len())));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != n_states {
                    return Err(Error::invalid(format!("row ({s}, {a}) has length {}", row.len())));
                }
                probs.extend_from_slice(row);
            }
        }
        TransitionModel::new(n_states, n_actions, probs, tol)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_states as f64;
        TransitionModel {
            n_states,
            n_actions,
            probs: vec![p; n_states * n_actions * n_states],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.probs[start..start + self.n_states]
    }

    /// Overwrites a row. The caller is responsible for keeping it a simplex point.
    pub fn set_row(&mut self, s: usize, a: usize, row: &[f64]) {
        let start = (s * self.n_actions + a) * self.n_states;
        self.probs[start..start + self.n_states].copy_from_slice(row);
    }

    #[inline]
    pub fn expect(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        dot(self.row(s, a), v)
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_states)
            .map(|s| (0..self.n_actions).map(|a| self.row(s, a).to_vec()).collect())
            .collect()
    }
}

fn check_simplex(row: &[f64], tol: f64) -> std::result::Result<(), String> {
    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(format!("entry {p} is not a probability"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(format!("sums to {sum}"));
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// A tabular MDP with known mean rewards.
///
/// Rewards are kept in `[0, 1]` unless the model was produced by
/// [`flatten`], which may shift them outside that range.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    transitions: TransitionModel,
    rewards: Vec<f64>,
    initial_state: usize,
    unconstrained_rewards: bool,
}

impl Mdp {
    pub fn new(transitions: TransitionModel, rewards: Vec<f64>, initial_state: usize) -> Result<Self> {
        let (s, a) = (transitions.n_states(), transitions.n_actions());
        if rewards.len() != s * a {
            return Err(Error::invalid(format!(
                "expected {} rewards, got {}",
                s * a,
                rewards.len()
            )));
        }
        if let Some(r) = rewards.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::invalid(format!("mean reward {r} outside [0, 1]")));
        }
        if initial_state >= s {
            return Err(Error::invalid(format!("initial state {initial_state} out of range")));
        }
        Ok(Mdp {
            transitions,
            rewards,
            initial_state,
            unconstrained_rewards: false,
        })
    }

    /// Same as [`Mdp::new`] but accepts any finite rewards.
    pub fn with_unconstrained_rewards(
        transitions: TransitionModel,
        rewards: Vec<f64>,
        initial_state: usize,
    ) -> Result<Self> {
        let (s, a) = (transitions.n_states(), transitions.n_actions());
        if rewards.len() != s * a || rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("rewards must be finite and one per (s, a)"));
        }
        if initial_state >= s {
            return Err(Error::invalid(format!("initial state {initial_state} out of range")));
        }
        Ok(Mdp {
            transitions,
            rewards,
            initial_state,
            unconstrained_rewards: true,
        })
    }

    pub fn n_states(&self) -> usize {
        self.transitions.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.transitions.n_actions()
    }

    pub fn transitions(&self) -> &TransitionModel {
        &self.transitions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions() + a]
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn has_unconstrained_rewards(&self) -> bool {
        self.unconstrained_rewards
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: MdpFile = serde_json::from_str(text)?;
        raw.try_into()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MdpFile::from(self))?)
    }
}

/// On-disk layout: `{"S", "A", "P": [S][A][S], "r": [S][A], "s0"}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct MdpFile {
    #[serde(rename = "S")]
    pub n_states: usize,
    #[serde(rename = "A")]
    pub n_actions: usize,
    #[serde(rename = "P")]
    pub transitions: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "r")]
    pub rewards: Vec<Vec<f64>>,
    #[serde(rename = "s0")]
    pub initial_state: usize,
}

impl TryFrom<MdpFile> for Mdp {
    type Error = Error;

    fn try_from(raw: MdpFile) -> Result<Self> {
        let transitions = TransitionModel::from_nested(&raw.transitions, ROW_SUM_TOL)?;
        if transitions.n_states() != raw.n_states || transitions.n_actions() != raw.n_actions {
            return Err(Error::invalid(format!(
                "declared S={}, A={} but P has shape {}x{}",
                raw.n_states,
                raw.n_actions,
                transitions.n_states(),
                transitions.n_actions()
            )));
        }
        if raw.rewards.len() != raw.n_states || raw.rewards.iter().any(|r| r.len() != raw.n_actions) {
            return Err(Error::invalid("r must have shape [S][A]"));
        }
        Mdp::new(transitions, raw.rewards.concat(), raw.initial_state)
    }
}

impl From<&Mdp> for MdpFile {
    fn from(mdp: &Mdp) -> Self {
        MdpFile {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            transitions: mdp.transitions.to_nested(),
            rewards: mdp.rewards.chunks(mdp.n_actions()).map(<[f64]>::to_vec).collect(),
            initial_state: mdp.initial_state,
        }
    }
}

/// Deterministic stationary policy.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Policy(Vec<usize>);

impl Policy {
    pub fn new(actions: Vec<usize>, n_actions: usize) -> Result<Self> {
        if let Some(a) = actions.iter().find(|a| **a >= n_actions) {
            return Err(Error::invalid(format!("action {a} out of range (A={n_actions})")));
        }
        Ok(Policy(actions))
    }

    pub fn constant(n_states: usize, action: usize) -> Self {
        Policy(vec![action; n_states])
    }

    #[inline]
    pub fn action(&self, s: usize) -> usize {
        self.0[s]
    }

    pub fn actions(&self) -> &[usize] {
        &self.0
    }

    pub fn n_states(&self) -> usize {
        self.0.len()
    }

    pub(crate) fn set(&mut self, s: usize, a: usize) {
        self.0[s] = a;
    }
}

/// All `A^S` deterministic policies in lexicographic order.
pub fn enumerate_policies(n_states: usize, n_actions: usize) -> impl Iterator<Item = Policy> {
    let mut next = Some(vec![0usize; n_states]);
    std::iter::from_fn(move || {
        let current = next.take()?;
        let mut succ = current.clone();
        for i in (0..n_states).rev() {
            succ[i] += 1;
            if succ[i] < n_actions {
                next = Some(succ);
                break;
            }
            succ[i] = 0;
        }
        Some(Policy(current))
    })
}

/// `A^S`, saturating.
pub fn policy_count(n_states: usize, n_actions: usize) -> u64 {
    (0..n_states).fold(1u64, |acc, _| acc.saturating_mul(n_actions as u64))
}

/// Optimal gain, bias normalized to minimum zero, its span and the
/// Bellman-optimality residual at the returned pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainBias {
    pub gain: f64,
    pub bias: Vec<f64>,
    pub span: f64,
    pub residual: f64,
}

pub fn span(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::invalid("span of an empty vector"));
    }
    Ok(span_unchecked(v))
}

#[inline]
pub(crate) fn span_unchecked(v: &[f64]) -> f64 {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(*x), hi.max(*x))
    });
    hi - lo
}

pub(crate) fn normalize_min_zero(v: &mut [f64]) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    for x in v.iter_mut() {
        *x -= lo;
    }
}

/// `max_a (r_{s,a} + P_{s,a}^T w)` for one state, with the lowest-index
/// maximizer.
#[inline]
pub(crate) fn best_backup(transitions: &TransitionModel, rewards: &[f64], s: usize, w: &[f64]) -> (f64, usize) {
    let n_actions = transitions.n_actions();
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for a in 0..n_actions {
        let q = rewards[s * n_actions + a] + transitions.expect(s, a, w);
        if q > best {
            best = q;
            arg = a;
        }
    }
    (best, arg)
}

/// `max_s |max_a (r + P h) - h_s - gain|`.
pub fn bellman_residual(mdp: &Mdp, gain: f64, bias: &[f64]) -> f64 {
    (0..mdp.n_states())
        .map(|s| (best_backup(&mdp.transitions, &mdp.rewards, s, bias).0 - bias[s] - gain).abs())
        .fold(0.0, f64::max)
}

pub fn solve_gain_bias(mdp: &Mdp, tol: f64) -> Result<GainBias> {
    solve_gain_bias_with(mdp, tol, DEFAULT_MAX_ITER)
}

/// Relative value iteration anchored at state 0, run on the aperiodic
/// transform of the model so periodic chains converge too. Stops once
/// `span(w_{n+1} - w_n) < tol`.
pub fn solve_gain_bias_with(mdp: &Mdp, tol: f64, max_iter: usize) -> Result<GainBias> {
    let n = mdp.n_states();
    let mut w = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..max_iter {
        for s in 0..n {
            let (q, _) = best_backup(&mdp.transitions, &mdp.rewards, s, &w);
            next[s] = APERIODIC_TAU * w[s] + (1.0 - APERIODIC_TAU) * q;
        }
        let (lo, hi) = (0..n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            let d = next[s] - w[s];
            (lo.min(d), hi.max(d))
        });
        if hi - lo < tol {
            let gain = 0.5 * (hi + lo) / (1.0 - APERIODIC_TAU);
            let mut bias = w;
            normalize_min_zero(&mut bias);
            let residual = bellman_residual(mdp, gain, &bias);
            return Ok(GainBias {
                gain,
                span: span_unchecked(&bias),
                bias,
                residual,
            });
        }
        let anchor = next[0];
        for s in 0..n {
            w[s] = next[s] - anchor;
        }
    }
    Err(Error::NonConvergence {
        what: "relative value iteration",
        iterations: max_iter,
        hint: "possibly not weak-communicating or tol too tight",
    })
}

/// Greedy policy for a solved bias, lowest index among near-ties.
pub fn greedy_policy(mdp: &Mdp, bias: &[f64]) -> Policy {
    let n_actions = mdp.n_actions();
    let actions = (0..mdp.n_states())
        .map(|s| {
            let (best, _) = best_backup(&mdp.transitions, &mdp.rewards, s, bias);
            (0..n_actions)
                .find(|&a| mdp.reward(s, a) + mdp.transitions.expect(s, a, bias) >= best - TIE_TOL)
                .unwrap_or(0)
        })
        .collect();
    Policy(actions)
}

/// Expected hitting times of `target` from every state under the best
/// stationary policy, by value iteration with the target absorbing.
pub fn hitting_times(mdp: &Mdp, target: usize, tol: f64) -> Result<Vec<f64>> {
    hitting_times_with(mdp, target, tol, DEFAULT_MAX_ITER)
}

pub fn hitting_times_with(mdp: &Mdp, target: usize, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = mdp.n_states();
    if target >= n {
        return Err(Error::invalid(format!("target {target} out of range")));
    }
    if !all_reach(mdp, target) {
        return Err(Error::NonConvergence {
            what: "hitting-time iteration",
            iterations: 0,
            hint: "diameter infinite or tol too tight",
        });
    }
    let mut t = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..max_iter {
        let mut change: f64 = 0.0;
        for s in 0..n {
            if s == target {
                next[s] = 0.0;
                continue;
            }
            let best = (0..mdp.n_actions())
                .map(|a| mdp.transitions.expect(s, a, &t))
                .fold(f64::INFINITY, f64::min);
            next[s] = 1.0 + best;
            change = change.max((next[s] - t[s]).abs());
        }
        std::mem::swap(&mut t, &mut next);
        if change < tol {
            return Ok(t);
        }
    }
    Err(Error::NonConvergence {
        what: "hitting-time iteration",
        iterations: max_iter,
        hint: "diameter infinite or tol too tight",
    })
}

/// True when every state reaches `target` with positive probability under
/// some sequence of actions.
fn all_reach(mdp: &Mdp, target: usize) -> bool {
    let n = mdp.n_states();
    let mut reached = vec![false; n];
    reached[target] = true;
    let mut changed = true;
    while changed {
        changed = false;
        for s in 0..n {
            if reached[s] {
                continue;
            }
            let hits = (0..mdp.n_actions()).any(|a| {
                mdp.transitions
                    .row(s, a)
                    .iter()
                    .zip(&reached)
                    .any(|(p, r)| *p > 0.0 && *r)
            });
            if hits {
                reached[s] = true;
                changed = true;
            }
        }
    }
    reached.into_iter().all(|r| r)
}

/// Structural check: every ordered pair of states is connected.
pub fn is_communicating(mdp: &Mdp) -> bool {
    (0..mdp.n_states()).all(|t| all_reach(mdp, t))
}

/// Max over ordered pairs `s != s'` of the minimal expected travel time.
/// A single-state model has diameter 0.
pub fn diameter(mdp: &Mdp, tol: f64) -> Result<f64> {
    let mut d: f64 = 0.0;
    for target in 0..mdp.n_states() {
        let times = hitting_times(mdp, target, tol)?;
        for (s, t) in times.iter().enumerate() {
            if s != target {
                d = d.max(*t);
            }
        }
    }
    Ok(d)
}

/// `reg_{s,a} = h*_s + rho* - P_{s,a}^T h* - r_{s,a}`.
pub fn optimal_gap(mdp: &Mdp, gb: &GainBias, s: usize, a: usize) -> Result<f64> {
    if s >= mdp.n_states() || a >= mdp.n_actions() || gb.bias.len() != mdp.n_states() {
        return Err(Error::invalid("state, action or bias length out of range"));
    }
    Ok(gap_unchecked(mdp, gb, s, a))
}

#[inline]
pub(crate) fn gap_unchecked(mdp: &Mdp, gb: &GainBias, s: usize, a: usize) -> f64 {
    gb.bias[s] + gb.gain - mdp.transitions.expect(s, a, &gb.bias) - mdp.reward(s, a)
}

/// The flat counterpart of `mdp`: same transitions, rewards shifted by the
/// optimal gaps so every action is optimal.
pub fn flatten(mdp: &Mdp, gb: &GainBias) -> Mdp {
    let n_actions = mdp.n_actions();
    let rewards = (0..mdp.n_states() * n_actions)
        .map(|i| {
            let (s, a) = (i / n_actions, i % n_actions);
            gb.bias[s] + gb.gain - mdp.transitions.expect(s, a, &gb.bias)
        })
        .collect();
    Mdp {
        transitions: mdp.transitions.clone(),
        rewards,
        initial_state: mdp.initial_state,
        unconstrained_rewards: true,
    }
}

/// `V(x, h) = sum_s x_s h_s^2 - (x^T h)^2`, the variance of `h` under `x`.
pub fn variance_weighted(x: &[f64], h: &[f64]) -> Result<f64> {
    if x.len() != h.len() {
        return Err(Error::invalid(format!("length mismatch: {} vs {}", x.len(), h.len())));
    }
    Ok(variance_unchecked(x, h))
}

#[inline]
pub(crate) fn variance_unchecked(x: &[f64], h: &[f64]) -> f64 {
    // Evaluated on h - h[0]; V is shift invariant and this avoids
    // cancellation when h sits far from zero.
    let Some(&origin) = h.first() else {
        return 0.0;
    };
    let (m1, m2) = x.iter().zip(h).fold((0.0, 0.0), |(m1, m2), (p, v)| {
        let c = v - origin;
        (m1 + p * c, m2 + p * c * c)
    });
    (m2 - m1 * m1).max(0.0)
}
