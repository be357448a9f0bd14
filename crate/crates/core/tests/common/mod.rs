//! Independent brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use ebf_core::mdp::{enumerate_policies, Mdp, Policy};
use ebf_core::trajectory::Trajectory;
use nalgebra::{DMatrix, DVector};

/// Transition matrix of a deterministic policy.
pub fn policy_matrix(mdp: &Mdp, policy: &Policy) -> DMatrix<f64> {
    let n = mdp.n_states();
    DMatrix::from_fn(n, n, |s, x| mdp.transitions().row(s, policy.action(s))[x])
}

/// Cesàro limit of `P` via repeated squaring of the lazy chain `(I + P) / 2`.
pub fn cesaro_limit(p: &DMatrix<f64>) -> DMatrix<f64> {
    let n = p.nrows();
    let mut m = (DMatrix::identity(n, n) + p) * 0.5;
    for _ in 0..64 {
        let mut next = &m * &m;
        // Renormalize so rounding in the row sums cannot compound.
        for mut row in next.row_iter_mut() {
            let total = row.sum();
            row /= total;
        }
        let diff = (&next - &m).abs().max();
        m = next;
        if diff < 1e-14 {
            break;
        }
    }
    m
}

/// Optimal gain of a communicating MDP as the best state-wise gain of any
/// deterministic policy.
pub fn brute_force_gain(mdp: &Mdp) -> f64 {
    let n = mdp.n_states();
    let mut best = f64::NEG_INFINITY;
    for pi in enumerate_policies(n, mdp.n_actions()) {
        let limit = cesaro_limit(&policy_matrix(mdp, &pi));
        let r = DVector::from_fn(n, |s, _| mdp.reward(s, pi.action(s)));
        best = best.max((limit * r).max());
    }
    best
}

/// Expected hitting times of `target` under `policy`, infinite where the
/// target is not reached almost surely.
pub fn policy_hitting_times(mdp: &Mdp, policy: &Policy, target: usize) -> Vec<f64> {
    let n = mdp.n_states();
    let p = policy_matrix(mdp, policy);
    // States that can reach the target under the policy.
    let mut reach = vec![false; n];
    reach[target] = true;
    loop {
        let mut changed = false;
        for s in 0..n {
            if !reach[s] && (0..n).any(|x| p[(s, x)] > 0.0 && reach[x]) {
                reach[s] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    // Reaching a.s. requires every state reachable from s to reach the target.
    let mut good = reach.clone();
    loop {
        let mut changed = false;
        for s in 0..n {
            if good[s] && s != target && (0..n).any(|x| p[(s, x)] > 0.0 && !good[x]) {
                good[s] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let idx: Vec<usize> = (0..n).filter(|s| *s != target && good[*s]).collect();
    let mut out = vec![f64::INFINITY; n];
    out[target] = 0.0;
    if idx.is_empty() {
        return out;
    }
    let m = idx.len();
    let a = DMatrix::from_fn(m, m, |i, j| f64::from(u8::from(i == j)) - p[(idx[i], idx[j])]);
    let b = DVector::from_element(m, 1.0);
    let sol = a.lu().solve(&b).expect("absorbing system is nonsingular");
    for (i, s) in idx.iter().enumerate() {
        out[*s] = sol[i];
    }
    out
}

/// Diameter as max over ordered pairs of the minimum over deterministic
/// policies of the expected travel time.
pub fn brute_force_diameter(mdp: &Mdp) -> f64 {
    let n = mdp.n_states();
    let policies: Vec<Policy> = enumerate_policies(n, mdp.n_actions()).collect();
    let mut d: f64 = 0.0;
    for target in 0..n {
        let mut best = vec![f64::INFINITY; n];
        for pi in &policies {
            for (b, t) in best.iter_mut().zip(policy_hitting_times(mdp, pi, target)) {
                *b = b.min(t);
            }
        }
        d = d.max(best.iter().copied().fold(0.0, f64::max));
    }
    d
}

/// Gain and min-zero bias of a fixed policy by a direct linear solve
/// anchored at `h_0 = 0`.
pub fn evaluate_policy_direct(p: &DMatrix<f64>, r: &[f64]) -> (f64, Vec<f64>) {
    let n = p.nrows();
    let a = DMatrix::from_fn(n, n, |s, j| {
        if j == 0 {
            1.0
        } else {
            f64::from(u8::from(s == j)) - p[(s, j)]
        }
    });
    let x = a.lu().solve(&DVector::from_column_slice(r)).expect("unichain policy");
    let mut h: Vec<f64> = (0..n).map(|i| if i == 0 { 0.0 } else { x[i] }).collect();
    let lo = h.iter().copied().fold(f64::INFINITY, f64::min);
    h.iter_mut().for_each(|v| *v -= lo);
    (x[0], h)
}

/// Segment boundaries straight from the recursive definition, 1-based,
/// with `N + 2` standing for "never".
pub fn rescan(states: &[usize], from: usize, to: usize) -> (Vec<(usize, usize)>, usize) {
    let n = states.len() - 1;
    let never = n + 2;
    let first_after = |target: usize, after: usize| -> usize {
        (after + 1..=n + 1).find(|t| states[t - 1] == target).unwrap_or(never)
    };
    let mut segs = Vec::new();
    let mut ts = first_after(from, 0);
    loop {
        if ts == never {
            break;
        }
        let te = first_after(to, ts);
        segs.push((ts, te));
        if te == never {
            break;
        }
        ts = first_after(from, te);
    }
    let count = segs.iter().filter(|(_, te)| *te <= n + 1).count();
    (segs, count)
}

pub fn rescan_l1(traj: &Trajectory, h: &[f64], from: usize, to: usize, rho: f64) -> f64 {
    let (segs, count) = rescan(&traj.state_sequence(), from, to);
    let mut total = 0.0;
    for &(ts, te) in segs.iter().take(count) {
        let mut inner = 0.0;
        for i in ts..te {
            inner += traj.steps()[i - 1].reward - rho;
        }
        total += (h[to] - h[from]) + inner;
    }
    total
}
