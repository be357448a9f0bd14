//! Confidence machinery for the bias-function confidence set.
//!
//! Radii for the transition rows come in three flavours: an element-wise
//! empirical-Bernstein box, an L1 ball, and a bound on the deviation of
//! `P'^T h'` weighted by the empirical variance of `h'`. The bias vector
//! itself must lie in the H-set, a constraint built from arrival-segment
//! sums of the observed trajectory. [`ConfidenceSet`] precomputes all of
//! it once per episode and scores candidate tuples in a [`ConstraintReport`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{self, GainBias, Mdp, Policy, TransitionModel};
use crate::trajectory::{compute_stats, PairSummaries, Trajectory, TrajectoryStats};

pub const DEFAULT_FEAS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceParams {
    /// Upper bound `H` on the span of the optimal bias.
    pub h_bound: f64,
    pub delta: f64,
    /// `log(2 / delta)`.
    pub gamma: f64,
    /// Total horizon `T`.
    pub horizon: u64,
    /// Use `48 S sqrt(A T gamma)` instead of `48 S sqrt(A T)` in the H-set.
    pub include_gamma_in_hset: bool,
}

impl ConfidenceParams {
    pub fn new(h_bound: f64, delta: f64, horizon: u64) -> Result<Self> {
        if !(h_bound > 0.0 && h_bound.is_finite()) {
            return Err(Error::invalid(format!("H must be positive, got {h_bound}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
        }
        if horizon == 0 {
            return Err(Error::invalid("horizon T must be at least 1"));
        }
        Ok(ConfidenceParams {
            h_bound,
            delta,
            gamma: gamma(delta),
            horizon,
            include_gamma_in_hset: false,
        })
    }

    pub fn with_gamma_in_hset(mut self, on: bool) -> Self {
        self.include_gamma_in_hset = on;
        self
    }

    /// Coefficient of `sp(h)` on the right-hand side of the H-set test.
    pub fn hset_coefficient(&self, n_states: usize, n_actions: usize) -> f64 {
        let t = self.horizon as f64;
        let mut lead = 48.0 * n_states as f64 * (n_actions as f64 * t).sqrt();
        if self.include_gamma_in_hset {
            lead *= self.gamma.sqrt();
        }
        lead + (2.0 * self.gamma * t).sqrt() + 1.0
    }
}

pub fn gamma(delta: f64) -> f64 {
    (2.0 / delta).ln()
}

fn check_count(n: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("count must be at least 1 (floor it before calling)"));
    }
    Ok(n as f64)
}

/// `2 sqrt(p_hat gamma / n) + 3 gamma / n + 4 gamma^{3/4} / n^{3/4}`.
pub fn bernstein_elementwise_radius(p_hat: f64, n: u64, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(Error::invalid(format!("p_hat {p_hat} outside [0, 1]")));
    }
    Ok(elementwise(p_hat, check_count(n)?, gamma))
}

/// `sqrt(14 S gamma / n)`.
pub fn l1_radius(n: u64, n_states: usize, gamma: f64) -> Result<f64> {
    Ok(l1(check_count(n)?, n_states, gamma))
}

/// `2 sqrt(V gamma / n) + 12 H gamma / n + 10 H gamma^{3/4} / n^{3/4}`.
pub fn bias_weighted_radius(variance: f64, n: u64, h_bound: f64, gamma: f64) -> Result<f64> {
    if variance < 0.0 {
        return Err(Error::invalid("variance must be non-negative"));
    }
    let n = check_count(n)?;
    Ok(2.0 * (variance * gamma / n).sqrt() + bias_weighted_tail(n, h_bound, gamma))
}

#[inline]
fn elementwise(p_hat: f64, n: f64, gamma: f64) -> f64 {
    2.0 * (p_hat * gamma / n).sqrt() + 3.0 * gamma / n + 4.0 * (gamma / n).powf(0.75)
}

#[inline]
fn l1(n: f64, n_states: usize, gamma: f64) -> f64 {
    (14.0 * n_states as f64 * gamma / n).sqrt()
}

#[inline]
fn bias_weighted_tail(n: f64, h_bound: f64, gamma: f64) -> f64 {
    12.0 * h_bound * gamma / n + 10.0 * h_bound * (gamma / n).powf(0.75)
}

/// Membership of `h` in the H-set of `traj`, with the worst margin
/// `min_{s != s'} (rhs - |L1|)` (infinite when `S = 1`).
pub fn hset_contains(h: &[f64], traj: &Trajectory, params: &ConfidenceParams) -> Result<(bool, f64)> {
    if h.len() != traj.n_states() {
        return Err(Error::invalid("bias vector length differs from the state count"));
    }
    if h.iter().any(|v| !(0.0..=params.h_bound).contains(v)) {
        return Err(Error::invalid(format!("h must lie in [0, {}]^S", params.h_bound)));
    }
    let pairs = PairSummaries::from_trajectory(traj);
    let rho_hat = compute_stats(traj).empirical_gain;
    let coef = params.hset_coefficient(traj.n_states(), traj.n_actions());
    let (margin, _) = hset_margin(&pairs, h, rho_hat, coef);
    Ok((margin >= 0.0, margin))
}

fn hset_margin(pairs: &PairSummaries, h: &[f64], rho_hat: f64, coef: f64) -> (f64, Option<[usize; 2]>) {
    let rhs = coef * mdp::span_unchecked(h);
    let n = pairs.n_states();
    let mut worst = (f64::INFINITY, None);
    for from in 0..n {
        for to in (0..n).filter(|&t| t != from) {
            let margin = rhs - pairs.get(from, to).l1(h[from], h[to], rho_hat).abs();
            if margin < worst.0 {
                worst = (margin, Some([from, to]));
            }
        }
    }
    worst
}

/// The optimality-equation residual of a candidate tuple:
/// `max_s max(|max_a(P'_{s,a}^T h' + r_{s,a}) - h'_s - rho|, max_a(..) - (P'_{s,pi(s)}^T h' + r_{s,pi(s)}))`.
pub fn optimality_residual(
    policy: &Policy,
    p_prime: &TransitionModel,
    h: &[f64],
    rho: f64,
    rewards: &[f64],
) -> Result<f64> {
    let (n_states, n_actions) = (p_prime.n_states(), p_prime.n_actions());
    if policy.n_states() != n_states || h.len() != n_states || rewards.len() != n_states * n_actions {
        return Err(Error::invalid(
            "policy, bias, rewards and transitions disagree in shape",
        ));
    }
    if policy.actions().iter().any(|a| *a >= n_actions) {
        return Err(Error::invalid("policy action out of range"));
    }
    Ok(residual_with_state(policy, p_prime, h, rho, rewards).0)
}

fn residual_with_state(
    policy: &Policy,
    p_prime: &TransitionModel,
    h: &[f64],
    rho: f64,
    rewards: &[f64],
) -> (f64, usize) {
    let n_actions = p_prime.n_actions();
    let mut worst = (0.0, 0);
    for (s, h_s) in h.iter().enumerate() {
        let (best, _) = mdp::best_backup(p_prime, rewards, s, h);
        let chosen = rewards[s * n_actions + policy.action(s)] + p_prime.expect(s, policy.action(s), h);
        let r = (best - h_s - rho).abs().max(best - chosen);
        if r > worst.0 {
            worst = (r, s);
        }
    }
    worst
}

/// Outcome of one family of constraints: the smallest margin over its
/// cells and the indices where it occurs. `worst_margin` is `None` when the
/// family has no cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub ok: bool,
    pub worst_margin: Option<f64>,
    pub at: Vec<usize>,
}

impl ConstraintCheck {
    fn tracker() -> MarginTracker {
        MarginTracker {
            margin: f64::INFINITY,
            at: Vec::new(),
        }
    }
}

struct MarginTracker {
    margin: f64,
    at: Vec<usize>,
}

impl MarginTracker {
    #[inline]
    fn offer(&mut self, margin: f64, at: &[usize]) {
        if margin < self.margin || self.at.is_empty() {
            self.margin = margin;
            self.at.clear();
            self.at.extend_from_slice(at);
        }
    }

    fn finish(self, feas_tol: f64) -> ConstraintCheck {
        if self.at.is_empty() {
            return ConstraintCheck {
                ok: true,
                worst_margin: None,
                at: Vec::new(),
            };
        }
        ConstraintCheck {
            ok: self.margin >= -feas_tol,
            worst_margin: Some(self.margin),
            at: self.at,
        }
    }
}

/// Per-constraint verdicts for a candidate `(pi, P', h', rho)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// Element-wise box, cells `[s, a, s']`.
    pub elementwise: ConstraintCheck,
    /// L1 ball, cells `[s, a]`.
    pub l1: ConstraintCheck,
    /// Variance-weighted deviation of `P'^T h'`, cells `[s, a]`.
    pub bias_weighted: ConstraintCheck,
    /// `h' in [0, H]^S`, cell `[s]`.
    pub bias_range: ConstraintCheck,
    /// H-set, cells `[s, s']`.
    pub hset: ConstraintCheck,
    pub optimality_residual: f64,
    pub optimality_state: usize,
    pub optimality_ok: bool,
    pub feas_tol: f64,
}

impl ConstraintReport {
    pub fn certified(&self) -> bool {
        self.elementwise.ok
            && self.l1.ok
            && self.bias_weighted.ok
            && self.bias_range.ok
            && self.hset.ok
            && self.optimality_ok
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Everything needed to test membership in the episode's confidence set,
/// precomputed from the trajectory observed so far.
#[derive(Debug, Clone)]
pub struct ConfidenceSet {
    params: ConfidenceParams,
    p_hat: TransitionModel,
    divisors: Vec<f64>,
    box_radii: Vec<f64>,
    l1_radii: Vec<f64>,
    bias_tails: Vec<f64>,
    pairs: PairSummaries,
    rho_hat: f64,
    hset_coef: f64,
}

impl ConfidenceSet {
    pub fn new(stats: &TrajectoryStats, pairs: PairSummaries, params: &ConfidenceParams) -> Self {
        let (n_states, n_actions) = (stats.n_states(), stats.n_actions());
        let gamma = params.gamma;
        let mut divisors = Vec::with_capacity(n_states * n_actions);
        let mut box_radii = Vec::with_capacity(n_states * n_actions * n_states);
        let mut l1_radii = Vec::with_capacity(n_states * n_actions);
        let mut bias_tails = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                let n = stats.divisor(s, a);
                divisors.push(n);
                box_radii.extend(stats.p_hat(s, a).iter().map(|p| elementwise(*p, n, gamma)));
                l1_radii.push(l1(n, n_states, gamma));
                bias_tails.push(bias_weighted_tail(n, params.h_bound, gamma));
            }
        }
        ConfidenceSet {
            params: *params,
            p_hat: stats.empirical_transitions.clone(),
            divisors,
            box_radii,
            l1_radii,
            bias_tails,
            pairs,
            rho_hat: stats.empirical_gain,
            hset_coef: params.hset_coefficient(n_states, n_actions),
        }
    }

    /// Full recompute from a trajectory.
    pub fn from_trajectory(traj: &Trajectory, params: &ConfidenceParams) -> Self {
        ConfidenceSet::new(&compute_stats(traj), PairSummaries::from_trajectory(traj), params)
    }

    pub fn params(&self) -> &ConfidenceParams {
        &self.params
    }

    pub fn n_states(&self) -> usize {
        self.p_hat.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.p_hat.n_actions()
    }

    pub fn p_hat(&self) -> &TransitionModel {
        &self.p_hat
    }

    pub fn empirical_gain(&self) -> f64 {
        self.rho_hat
    }

    #[inline]
    pub fn divisor(&self, s: usize, a: usize) -> f64 {
        self.divisors[s * self.n_actions() + a]
    }

    #[inline]
    pub fn box_radii(&self, s: usize, a: usize) -> &[f64] {
        let n = self.n_states();
        let start = (s * self.n_actions() + a) * n;
        &self.box_radii[start..start + n]
    }

    #[inline]
    pub fn l1_radius(&self, s: usize, a: usize) -> f64 {
        self.l1_radii[s * self.n_actions() + a]
    }

    pub fn l1_radii(&self) -> &[f64] {
        &self.l1_radii
    }

    /// Allowed `|(P'_{s,a} - P_hat_{s,a})^T h|` for this `h`.
    #[inline]
    pub fn bias_weighted_radius(&self, s: usize, a: usize, h: &[f64]) -> f64 {
        let variance = mdp::variance_unchecked(self.p_hat.row(s, a), h);
        2.0 * (variance * self.params.gamma / self.divisor(s, a)).sqrt() + self.bias_tails[s * self.n_actions() + a]
    }

    /// Worst H-set margin of `h` and the pair attaining it.
    pub fn hset_margin(&self, h: &[f64]) -> (f64, Option<[usize; 2]>) {
        hset_margin(&self.pairs, h, self.rho_hat, self.hset_coef)
    }

    /// Scores `(policy, p_prime, h, rho)` against every constraint.
    pub fn evaluate(
        &self,
        policy: &Policy,
        p_prime: &TransitionModel,
        h: &[f64],
        rho: f64,
        rewards: &[f64],
        feas_tol: f64,
    ) -> Result<ConstraintReport> {
        let (n_states, n_actions) = (self.n_states(), self.n_actions());
        if p_prime.n_states() != n_states || p_prime.n_actions() != n_actions {
            return Err(Error::invalid("candidate transitions have the wrong shape"));
        }
        let residual = optimality_residual(policy, p_prime, h, rho, rewards)?;
        let (_, optimality_state) = residual_with_state(policy, p_prime, h, rho, rewards);

        let mut elementwise = ConstraintCheck::tracker();
        let mut l1 = ConstraintCheck::tracker();
        let mut bias_weighted = ConstraintCheck::tracker();
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = p_prime.row(s, a);
                let center = self.p_hat.row(s, a);
                let radii = self.box_radii(s, a);
                let mut l1_dev = 0.0;
                let mut weighted_dev = 0.0;
                for x in 0..n_states {
                    let d = row[x] - center[x];
                    elementwise.offer(radii[x] - d.abs(), &[s, a, x]);
                    l1_dev += d.abs();
                    weighted_dev += d * h[x];
                }
                l1.offer(self.l1_radius(s, a) - l1_dev, &[s, a]);
                bias_weighted.offer(self.bias_weighted_radius(s, a, h) - weighted_dev.abs(), &[s, a]);
            }
        }

        let mut bias_range = ConstraintCheck::tracker();
        for (s, v) in h.iter().enumerate() {
            bias_range.offer(v.min(self.params.h_bound - v), &[s]);
        }
        let mut hset = ConstraintCheck::tracker();
        if let (margin, Some(at)) = self.hset_margin(h) {
            hset.offer(margin, &at);
        }

        Ok(ConstraintReport {
            elementwise: elementwise.finish(feas_tol),
            l1: l1.finish(feas_tol),
            bias_weighted: bias_weighted.finish(feas_tol),
            bias_range: bias_range.finish(feas_tol),
            hset: hset.finish(feas_tol),
            optimality_residual: residual,
            optimality_state,
            optimality_ok: residual <= feas_tol,
            feas_tol,
        })
    }
}

/// Membership of a full tuple in the confidence set built from `traj`.
#[allow(clippy::too_many_arguments)]
pub fn tuple_in_m(
    policy: &Policy,
    p_prime: &TransitionModel,
    h: &[f64],
    rho: f64,
    rewards: &[f64],
    stats: &TrajectoryStats,
    traj: &Trajectory,
    params: &ConfidenceParams,
    feas_tol: f64,
) -> Result<ConstraintReport> {
    ConfidenceSet::new(stats, PairSummaries::from_trajectory(traj), params)
        .evaluate(policy, p_prime, h, rho, rewards, feas_tol)
}

/// What the agent knew at the start of an episode, plus ground-truth
/// bookkeeping needed by the bad-event diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeSnapshot<'a> {
    pub confidence_set: &'a ConfidenceSet,
    /// `sum_{t < t_k} (rho* - r_{s_t, a_t})` with mean rewards.
    pub regret_before: f64,
    /// `sum_{t < t_k} reg_{s_t, a_t}`.
    pub gap_sum_before: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BadEvents {
    pub b1: bool,
    pub b2: bool,
    pub b3: bool,
    pub b4: bool,
}

impl BadEvents {
    pub fn any(&self) -> bool {
        self.b1 || self.b2 || self.b3 || self.b4
    }
}

/// The four bad events of an episode, evaluated against the true model.
///
/// * B1: some `|(P - P_hat)^T h*|` exceeds `2 sqrt(V(P, h*) gamma / N) + 2 sp(h*) gamma / N`.
/// * B2: some element-wise deviation exceeds the Bernstein box.
/// * B3: cumulative regret exceeds `26 H S sqrt(A T gamma)` or the cumulative
///   optimal-gap sum exceeds `22 H S sqrt(A T gamma)`.
/// * B4: the true optimal tuple is not certified in the confidence set.
pub fn bad_event_flags(
    snapshot: &EpisodeSnapshot<'_>,
    mdp: &Mdp,
    gb: &GainBias,
    params: &ConfidenceParams,
    feas_tol: f64,
) -> Result<BadEvents> {
    let cs = snapshot.confidence_set;
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    if cs.n_states() != n_states || cs.n_actions() != n_actions {
        return Err(Error::invalid("snapshot and model disagree in shape"));
    }
    let gamma = params.gamma;
    let p = mdp.transitions();
    let mut b1 = false;
    let mut b2 = false;
    for s in 0..n_states {
        for a in 0..n_actions {
            let n = cs.divisor(s, a);
            let truth = p.row(s, a);
            let est = cs.p_hat().row(s, a);
            let dev: f64 = truth.iter().zip(est).zip(&gb.bias).map(|((t, e), h)| (t - e) * h).sum();
            let bound = 2.0 * (mdp::variance_unchecked(truth, &gb.bias) * gamma / n).sqrt() + 2.0 * gb.span * gamma / n;
            b1 |= dev.abs() > bound;
            b2 |= truth
                .iter()
                .zip(est)
                .any(|(t, e)| (e - t).abs() > elementwise(*e, n, gamma));
        }
    }
    let scale = params.h_bound * n_states as f64 * (n_actions as f64 * params.horizon as f64 * gamma).sqrt();
    let b3 = snapshot.regret_before.abs() > 26.0 * scale || snapshot.gap_sum_before > 22.0 * scale;

    let pi_star = mdp::greedy_policy(mdp, &gb.bias);
    let report = cs.evaluate(&pi_star, p, &gb.bias, gb.gain, mdp.rewards(), feas_tol)?;
    Ok(BadEvents {
        b1,
        b2,
        b3,
        b4: !report.certified(),
    })
}
