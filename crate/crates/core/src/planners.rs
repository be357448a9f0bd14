//! Optimistic planners.
//!
//! [`extended_value_iteration`] is the UCRL2-style planner over L1 balls.
//! [`ebf_plan`] searches for the highest-gain tuple `(pi, P', h', rho)`
//! that a [`ConfidenceSet`] certifies: for each candidate policy it
//! alternates between choosing optimistic rows for a fixed `h'` and
//! re-evaluating the policy on those rows, then checks the final tuple
//! against every constraint. The search is approximate; membership of the
//! returned tuple is not.

use serde::{Deserialize, Serialize};

use crate::confidence::{ConfidenceParams, ConfidenceSet, ConstraintReport};
use crate::error::{Error, Result};
use crate::linalg::solve_dense;
use crate::mdp::{self, Policy, TransitionModel, APERIODIC_TAU};
use crate::trajectory::{PairSummaries, Trajectory, TrajectoryStats};

pub const EVI_TOL: f64 = 1e-7;
pub const EVI_MAX_ITER: usize = 100_000;
const CONVERGENCE_TOL: f64 = 1e-9;
const DAMPED_TOL: f64 = 1e-12;
const DAMPED_MAX_ITER: usize = 10_000;
/// Scalings of the optimistic budget tried, in order, when the converged
/// tuple fails certification.
const SHRINK_LEVELS: [f64; 4] = [1.0, 0.5, 0.25, 0.0];

/// Output of extended value iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct EviSolution {
    pub policy: Policy,
    pub gain: f64,
    /// Bias of the extended MDP, normalized to minimum zero.
    pub bias: Vec<f64>,
    /// The optimistic row chosen for every `(s, a)` at the final bias.
    pub transitions: TransitionModel,
    pub converged: bool,
    pub iterations: usize,
}

/// Extended value iteration where row `(s, a)` ranges over the L1 ball of
/// radius `radii[s * A + a]` around `p_hat` intersected with the simplex.
pub fn extended_value_iteration(
    p_hat: &TransitionModel,
    rewards: &[f64],
    radii: &[f64],
    tol: f64,
) -> Result<EviSolution> {
    let sol = extended_value_iteration_with(p_hat, rewards, radii, tol, EVI_MAX_ITER)?;
    if !sol.converged {
        return Err(Error::NonConvergence {
            what: "extended value iteration",
            iterations: sol.iterations,
            hint: "extended MDP possibly multichain; increase tol or check radii",
        });
    }
    Ok(sol)
}

/// Like [`extended_value_iteration`] but returns the last iterate with
/// `converged = false` instead of failing when `max_iter` is hit.
pub fn extended_value_iteration_with(
    p_hat: &TransitionModel,
    rewards: &[f64],
    radii: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<EviSolution> {
    let (n_states, n_actions) = (p_hat.n_states(), p_hat.n_actions());
    if rewards.len() != n_states * n_actions || radii.len() != n_states * n_actions {
        return Err(Error::invalid("rewards and radii need one entry per (s, a)"));
    }
    if radii.iter().any(|r| r.is_nan() || *r < 0.0) {
        return Err(Error::invalid("radii must be non-negative"));
    }
    let mut w = vec![0.0; n_states];
    let mut next = vec![0.0; n_states];
    let mut order: Vec<usize> = (0..n_states).collect();
    let mut row = vec![0.0; n_states];
    let mut actions = vec![0; n_states];
    let mut iterations = 0;
    let mut converged = false;
    let mut gain = 0.0;
    while iterations < max_iter {
        iterations += 1;
        sort_ascending(&mut order, &w);
        for s in 0..n_states {
            let mut best = f64::NEG_INFINITY;
            for a in 0..n_actions {
                let sa = s * n_actions + a;
                shift_row(
                    p_hat.row(s, a),
                    None,
                    radii[sa] / 2.0,
                    f64::INFINITY,
                    &order,
                    &w,
                    true,
                    &mut row,
                );
                let q = rewards[sa] + mdp::dot(&row, &w);
                if q > best {
                    best = q;
                    actions[s] = a;
                }
            }
            next[s] = APERIODIC_TAU * w[s] + (1.0 - APERIODIC_TAU) * best;
        }
        let (lo, hi) = min_max_diff(&next, &w);
        if hi - lo < tol {
            gain = 0.5 * (hi + lo) / (1.0 - APERIODIC_TAU);
            converged = true;
            break;
        }
        let anchor = next[0];
        for s in 0..n_states {
            w[s] = next[s] - anchor;
        }
    }
    if !converged {
        let (lo, hi) = min_max_diff(&next, &w);
        gain = 0.5 * (hi + lo) / (1.0 - APERIODIC_TAU);
    }
    mdp::normalize_min_zero(&mut w);
    sort_ascending(&mut order, &w);
    let mut transitions = p_hat.clone();
    for s in 0..n_states {
        for a in 0..n_actions {
            shift_row(
                p_hat.row(s, a),
                None,
                radii[s * n_actions + a] / 2.0,
                f64::INFINITY,
                &order,
                &w,
                true,
                &mut row,
            );
            transitions.set_row(s, a, &row);
        }
    }
    Ok(EviSolution {
        policy: Policy::new(actions, n_actions)?,
        gain,
        bias: w,
        transitions,
        converged,
        iterations,
    })
}

fn min_max_diff(next: &[f64], w: &[f64]) -> (f64, f64) {
    next.iter()
        .zip(w)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (n, w)| {
            (lo.min(n - w), hi.max(n - w))
        })
}

fn sort_ascending(order: &mut [usize], h: &[f64]) {
    for (i, o) in order.iter_mut().enumerate() {
        *o = i;
    }
    order.sort_by(|a, b| h[*a].total_cmp(&h[*b]).then(a.cmp(b)));
}

/// Greedy mass transfer within one row.
///
/// Starting from `center`, moves mass from the lowest-`h` states to the
/// highest-`h` states (or the reverse when `raise` is false) as long as it
/// changes `row . h` in the requested direction. Each entry may move at
/// most `box_radii[x]` away from the center, the total moved mass is at
/// most `half_l1`, and the total change of `row . h` is at most `cap`.
/// `order` lists state indices by ascending `h`.
#[allow(clippy::too_many_arguments)]
fn shift_row(
    center: &[f64],
    box_radii: Option<&[f64]>,
    half_l1: f64,
    cap: f64,
    order: &[usize],
    h: &[f64],
    raise: bool,
    out: &mut [f64],
) {
    out.copy_from_slice(center);
    let n = order.len();
    let bx = |x: usize| box_radii.map_or(f64::INFINITY, |b| b[x]);
    let room = |x: usize| (1.0 - center[x]).min(bx(x)).max(0.0);
    let avail = |x: usize| center[x].min(bx(x)).max(0.0);
    let dst_at = |k: usize| if raise { order[n - 1 - k] } else { order[k] };
    let src_at = |k: usize| if raise { order[k] } else { order[n - 1 - k] };

    let (mut di, mut si) = (0, 0);
    let mut budget = half_l1;
    let mut left = cap;
    let mut dst_room = room(dst_at(0));
    let mut src_avail = avail(src_at(0));
    while di < n && si < n && budget > 0.0 && left > 0.0 {
        let (d, s) = (dst_at(di), src_at(si));
        let diff = if raise { h[d] - h[s] } else { h[s] - h[d] };
        if diff <= 0.0 {
            break;
        }
        let by_cap = left / diff;
        let m = dst_room.min(src_avail).min(budget).min(by_cap);
        out[d] += m;
        out[s] = (out[s] - m).max(0.0);
        if m == budget || m == by_cap {
            break;
        }
        budget -= m;
        left -= m * diff;
        let dst_done = m == dst_room;
        let src_done = m == src_avail;
        dst_room -= m;
        src_avail -= m;
        if dst_done {
            di += 1;
            if di < n {
                dst_room = room(dst_at(di));
            }
        }
        if src_done {
            si += 1;
            if si < n {
                src_avail = avail(src_at(si));
            }
        }
    }
}

/// Gain and bias of a fixed policy on a fixed model.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEvaluation {
    pub gain: f64,
    /// Normalized to minimum zero.
    pub bias: Vec<f64>,
    /// True when the direct solve was singular and damped iteration was used.
    pub damped: bool,
}

/// Solves `P'_{s,pi(s)}^T h + r_{s,pi(s)} = h_s + rho` for `(rho, h)`.
///
/// The linear system is anchored at `h_0 = 0`. When it is singular (more
/// than one recurrent class) damped relative value iteration is tried; if
/// that does not settle on a single gain either, the policy has no
/// state-independent gain and an error is returned.
pub fn inner_evaluate(policy: &Policy, p_prime: &TransitionModel, rewards: &[f64]) -> Result<PolicyEvaluation> {
    let (n_states, n_actions) = (p_prime.n_states(), p_prime.n_actions());
    if policy.n_states() != n_states || rewards.len() != n_states * n_actions {
        return Err(Error::invalid("policy, rewards and transitions disagree in shape"));
    }
    if policy.actions().iter().any(|a| *a >= n_actions) {
        return Err(Error::invalid("policy action out of range"));
    }
    // Unknowns: x[0] = rho, x[j] = h_j for j >= 1.
    let mut a = vec![0.0; n_states * n_states];
    let mut b = vec![0.0; n_states];
    for s in 0..n_states {
        let act = policy.action(s);
        let row = p_prime.row(s, act);
        let eq = &mut a[s * n_states..(s + 1) * n_states];
        eq[0] = 1.0;
        for j in 1..n_states {
            eq[j] = -row[j];
        }
        if s >= 1 {
            eq[s] += 1.0;
        }
        b[s] = rewards[s * n_actions + act];
    }
    if let Some(x) = solve_dense(a, b) {
        let gain = x[0];
        let mut bias = x;
        bias[0] = 0.0;
        mdp::normalize_min_zero(&mut bias);
        return Ok(PolicyEvaluation {
            gain,
            bias,
            damped: false,
        });
    }
    damped_evaluate(policy, p_prime, rewards)
}

fn damped_evaluate(policy: &Policy, p_prime: &TransitionModel, rewards: &[f64]) -> Result<PolicyEvaluation> {
    let n_states = p_prime.n_states();
    let n_actions = p_prime.n_actions();
    let mut w = vec![0.0; n_states];
    let mut next = vec![0.0; n_states];
    for _ in 0..DAMPED_MAX_ITER {
        for s in 0..n_states {
            let act = policy.action(s);
            let q = rewards[s * n_actions + act] + p_prime.expect(s, act, &w);
            next[s] = APERIODIC_TAU * w[s] + (1.0 - APERIODIC_TAU) * q;
        }
        let (lo, hi) = min_max_diff(&next, &w);
        if hi - lo < DAMPED_TOL {
            let gain = 0.5 * (hi + lo) / (1.0 - APERIODIC_TAU);
            mdp::normalize_min_zero(&mut w);
            return Ok(PolicyEvaluation {
                gain,
                bias: w,
                damped: true,
            });
        }
        let anchor = next[0];
        for s in 0..n_states {
            w[s] = next[s] - anchor;
        }
    }
    Err(Error::NonConvergence {
        what: "policy evaluation",
        iterations: DAMPED_MAX_ITER,
        hint: "the policy induces more than one recurrent class",
    })
}

/// Iteration budget of [`ebf_plan`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerBudget {
    /// Enumerate every deterministic policy when `A^S` is at most this.
    pub policy_cap: u64,
    /// Row-choice / evaluation alternations per candidate policy.
    pub alternations: usize,
    /// Coordinate-ascent sweeps when enumeration is too expensive.
    pub sweeps: usize,
    pub evi_tol: f64,
    pub evi_max_iter: usize,
}

impl Default for PlannerBudget {
    fn default() -> Self {
        PlannerBudget {
            policy_cap: 4096,
            alternations: 50,
            sweeps: 10,
            evi_tol: EVI_TOL,
            evi_max_iter: EVI_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSolution {
    pub policy: Policy,
    pub transitions: TransitionModel,
    pub bias: Vec<f64>,
    pub gain: f64,
    pub report: ConstraintReport,
    pub certified: bool,
    pub fallback_used: bool,
}

#[derive(Serialize)]
struct SolutionJson<'a> {
    policy: &'a Policy,
    rho: f64,
    h: &'a [f64],
    certified: bool,
    fallback_used: bool,
    report: &'a ConstraintReport,
}

impl SolverSolution {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SolutionJson {
            policy: &self.policy,
            rho: self.gain,
            h: &self.bias,
            certified: self.certified,
            fallback_used: self.fallback_used,
            report: &self.report,
        })?)
    }
}

/// Recomputes the confidence set from scratch and plans on it.
pub fn ebf_plan_trajectory(
    traj: &Trajectory,
    stats: &TrajectoryStats,
    params: &ConfidenceParams,
    rewards: &[f64],
    budget: &PlannerBudget,
    feas_tol: f64,
) -> Result<SolverSolution> {
    let cs = ConfidenceSet::new(stats, PairSummaries::from_trajectory(traj), params);
    ebf_plan(&cs, rewards, budget, feas_tol)
}

/// Best certified tuple found in the confidence set, or the EVI solution
/// flagged with `fallback_used` when no candidate certifies.
pub fn ebf_plan(cs: &ConfidenceSet, rewards: &[f64], budget: &PlannerBudget, feas_tol: f64) -> Result<SolverSolution> {
    let (n_states, n_actions) = (cs.n_states(), cs.n_actions());
    if rewards.len() != n_states * n_actions {
        return Err(Error::invalid("rewards need one entry per (s, a)"));
    }
    let evi = extended_value_iteration_with(cs.p_hat(), rewards, cs.l1_radii(), budget.evi_tol, budget.evi_max_iter)?;
    let solver = PolicySolver {
        cs,
        rewards,
        alternations: budget.alternations,
        feas_tol,
        h_init: clip(&evi.bias, cs.params().h_bound),
    };

    let mut best: Option<SolverSolution> = None;
    let consider = |cand: Option<SolverSolution>, best: &mut Option<SolverSolution>| -> bool {
        match cand {
            Some(c) if best.as_ref().is_none_or(|b| c.gain > b.gain) => {
                *best = Some(c);
                true
            }
            _ => false,
        }
    };
    if mdp::policy_count(n_states, n_actions) <= budget.policy_cap {
        for policy in mdp::enumerate_policies(n_states, n_actions) {
            consider(solver.solve(policy), &mut best);
        }
    } else {
        let mut current = evi.policy.clone();
        consider(solver.solve(current.clone()), &mut best);
        for _ in 0..budget.sweeps {
            let mut improved = false;
            for s in 0..n_states {
                for a in 0..n_actions {
                    if a == current.action(s) {
                        continue;
                    }
                    let mut cand = current.clone();
                    cand.set(s, a);
                    if consider(solver.solve(cand.clone()), &mut best) {
                        current = cand;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
    }
    if let Some(sol) = best {
        return Ok(sol);
    }

    let report = cs.evaluate(&evi.policy, &evi.transitions, &evi.bias, evi.gain, rewards, feas_tol)?;
    Ok(SolverSolution {
        policy: evi.policy,
        transitions: evi.transitions,
        bias: evi.bias,
        gain: evi.gain,
        report,
        certified: false,
        fallback_used: true,
    })
}

fn clip(h: &[f64], hi: f64) -> Vec<f64> {
    h.iter().map(|v| v.clamp(0.0, hi)).collect()
}

struct PolicySolver<'a> {
    cs: &'a ConfidenceSet,
    rewards: &'a [f64],
    alternations: usize,
    feas_tol: f64,
    h_init: Vec<f64>,
}

impl PolicySolver<'_> {
    /// Certified tuple for `policy`, if the alternation finds one.
    fn solve(&self, policy: Policy) -> Option<SolverSolution> {
        let h_bound = self.cs.params().h_bound;
        let mut p_prime = self.cs.p_hat().clone();
        let mut order: Vec<usize> = (0..self.cs.n_states()).collect();
        let mut h = self.h_init.clone();
        let mut gain = f64::NEG_INFINITY;
        for _ in 0..self.alternations {
            sort_ascending(&mut order, &h);
            self.optimistic_rows(&policy, &h, &order, 1.0, &mut p_prime);
            let Ok(eval) = inner_evaluate(&policy, &p_prime, self.rewards) else {
                break;
            };
            let h_next = clip(&eval.bias, h_bound);
            let settled = (eval.gain - gain).abs() < CONVERGENCE_TOL
                && h.iter().zip(&h_next).all(|(a, b)| (a - b).abs() < CONVERGENCE_TOL);
            gain = eval.gain;
            h = h_next;
            if settled {
                break;
            }
        }

        sort_ascending(&mut order, &h);
        for scale in SHRINK_LEVELS {
            self.optimistic_rows(&policy, &h, &order, scale, &mut p_prime);
            let Ok(eval) = inner_evaluate(&policy, &p_prime, self.rewards) else {
                continue;
            };
            let mut final_order = order.clone();
            sort_ascending(&mut final_order, &eval.bias);
            self.pessimistic_rows(&policy, &eval.bias, &final_order, &mut p_prime);
            let report = self
                .cs
                .evaluate(&policy, &p_prime, &eval.bias, eval.gain, self.rewards, self.feas_tol)
                .ok()?;
            if report.certified() {
                return Some(SolverSolution {
                    policy,
                    transitions: p_prime,
                    bias: eval.bias,
                    gain: eval.gain,
                    report,
                    certified: true,
                    fallback_used: false,
                });
            }
        }
        None
    }

    /// Rows of the policy's actions pushed towards high `h`, with every
    /// radius scaled by `scale`.
    fn optimistic_rows(&self, policy: &Policy, h: &[f64], order: &[usize], scale: f64, p_prime: &mut TransitionModel) {
        let cs = self.cs;
        let mut row = vec![0.0; cs.n_states()];
        let mut radii = vec![0.0; cs.n_states()];
        for s in 0..cs.n_states() {
            let a = policy.action(s);
            for (r, b) in radii.iter_mut().zip(cs.box_radii(s, a)) {
                *r = b * scale;
            }
            let half_l1 = scale * cs.l1_radius(s, a) / 2.0;
            let cap = scale * cs.bias_weighted_radius(s, a, h);
            shift_row(
                cs.p_hat().row(s, a),
                Some(&radii),
                half_l1,
                cap,
                order,
                h,
                true,
                &mut row,
            );
            p_prime.set_row(s, a, &row);
        }
    }

    /// Rows of all other actions pushed towards low `h`, so that the
    /// policy's actions stay greedy whenever that is possible.
    fn pessimistic_rows(&self, policy: &Policy, h: &[f64], order: &[usize], p_prime: &mut TransitionModel) {
        let cs = self.cs;
        let mut row = vec![0.0; cs.n_states()];
        for s in 0..cs.n_states() {
            for a in (0..cs.n_actions()).filter(|a| *a != policy.action(s)) {
                let cap = cs.bias_weighted_radius(s, a, h);
                shift_row(
                    cs.p_hat().row(s, a),
                    Some(cs.box_radii(s, a)),
                    cs.l1_radius(s, a) / 2.0,
                    cap,
                    order,
                    h,
                    false,
                    &mut row,
                );
                p_prime.set_row(s, a, &row);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confidence::DEFAULT_FEAS_TOL;
    use crate::mdp::Mdp;

    fn model(s: usize, a: usize, probs: Vec<f64>) -> TransitionModel {
        TransitionModel::new(s, a, probs, 1e-12).unwrap()
    }

    #[test]
    fn shift_row_respects_limits() {
        let center = [0.25, 0.25, 0.25, 0.25];
        let h = [0.0, 1.0, 2.0, 3.0];
        let order = [0, 1, 2, 3];
        let mut out = [0.0; 4];
        shift_row(&center, None, 0.3, f64::INFINITY, &order, &h, true, &mut out);
        assert_eq!(out, [0.0, 0.2, 0.25, 0.55]);

        let boxes = [0.1; 4];
        shift_row(&center, Some(&boxes), 1.0, f64::INFINITY, &order, &h, true, &mut out);
        let expect = [0.15, 0.15, 0.35, 0.35];
        assert!(out.iter().zip(expect).all(|(a, b)| (a - b).abs() < 1e-15), "{out:?}");

        shift_row(&center, None, 1.0, 0.6, &order, &h, true, &mut out);
        let gain: f64 = out.iter().zip(&h).map(|(p, h)| p * h).sum::<f64>() - 1.5;
        assert!((gain - 0.6).abs() < 1e-12);

        shift_row(&center, None, 0.3, f64::INFINITY, &order, &h, false, &mut out);
        assert_eq!(out, [0.55, 0.25, 0.2, 0.0]);
    }

    #[test]
    fn evi_zero_radii_matches_exact_solver() {
        let p = model(2, 2, vec![0.5, 0.5, 0.1, 0.9, 0.8, 0.2, 0.3, 0.7]);
        let rewards = vec![0.1, 0.3, 0.9, 0.2];
        let exact = mdp::solve_gain_bias(&Mdp::new(p.clone(), rewards.clone(), 0).unwrap(), 1e-12).unwrap();
        let evi = extended_value_iteration(&p, &rewards, &[0.0; 4], 1e-10).unwrap();
        assert!((evi.gain - exact.gain).abs() < 1e-8);
        assert_eq!(evi.transitions, p);
    }

    #[test]
    fn evi_single_state() {
        let p = TransitionModel::uniform(1, 3);
        let evi = extended_value_iteration(&p, &[0.2, 0.7, 0.4], &[5.0, 0.1, 0.0], EVI_TOL).unwrap();
        assert!((evi.gain - 0.7).abs() < 1e-9);
        assert_eq!(evi.policy.actions(), &[1]);
    }

    #[test]
    fn evi_two_state_vertex() {
        // Vertices of each ball are (0.3, 0.7) and (0.7, 0.3); the best
        // chain stays in state 0 w.p. 0.7 and leaves state 1 w.p. 0.7,
        // giving stationary mass 0.7 on the rewarding state.
        let p = TransitionModel::uniform(2, 1);
        let evi = extended_value_iteration(&p, &[1.0, 0.0], &[0.4, 0.4], 1e-10).unwrap();
        assert!((evi.gain - 0.7).abs() < 1e-8, "{}", evi.gain);
    }

    #[test]
    fn inner_evaluate_cases() {
        let cycle = model(2, 1, vec![0.0, 1.0, 1.0, 0.0]);
        let pi = Policy::constant(2, 0);
        let e = inner_evaluate(&pi, &cycle, &[1.0, 0.0]).unwrap();
        assert!((e.gain - 0.5).abs() < 1e-15);
        assert!((e.bias[0] - 0.5).abs() < 1e-15 && e.bias[1] == 0.0);
        assert!(!e.damped);

        let single = TransitionModel::uniform(1, 2);
        let e = inner_evaluate(&Policy::constant(1, 1), &single, &[0.3, 0.8]).unwrap();
        assert_eq!((e.gain, e.bias.clone()), (0.8, vec![0.0]));

        let split = model(2, 1, vec![1.0, 0.0, 0.0, 1.0]);
        assert!(inner_evaluate(&pi, &split, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn single_state_plan() {
        let params = ConfidenceParams::new(1.0, 0.1, 100).unwrap();
        let cs = ConfidenceSet::from_trajectory(&Trajectory::new(1, 3), &params);
        let sol = ebf_plan(&cs, &[0.2, 0.9, 0.4], &PlannerBudget::default(), DEFAULT_FEAS_TOL).unwrap();
        assert!(sol.certified && !sol.fallback_used);
        assert_eq!(sol.gain, 0.9);
        assert_eq!(sol.policy.actions(), &[1]);
        assert_eq!(sol.report.optimality_residual, 0.0);
        assert!(sol.to_json().unwrap().contains("\"certified\": true"));
    }

    #[test]
    fn empty_history_plan_is_certified() {
        let params = ConfidenceParams::new(2.0, 0.1, 1000).unwrap();
        let cs = ConfidenceSet::from_trajectory(&Trajectory::new(3, 2), &params);
        let rewards = [0.1, 0.5, 0.2, 0.3, 0.9, 0.0];
        let sol = ebf_plan(&cs, &rewards, &PlannerBudget::default(), DEFAULT_FEAS_TOL).unwrap();
        assert!(sol.certified);
        assert!(sol.gain >= 0.0);
        assert!((sol.gain - 0.9).abs() < 1e-9, "every row can jump to the best state");
    }
}
