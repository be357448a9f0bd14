//! Order-sensitive trajectory statistics.
//!
//! Time is 1-based throughout: step `t` is `(s_t, a_t, r_t, s_{t+1})` and a
//! trajectory of `N` steps visits the states `s_1, ..., s_{N+1}`.
//!
//! Arrival segments for an ordered pair `(s, s')` are defined recursively:
//! `ts_1` is the first visit of `s`, `te_k` the first visit of `s'` after
//! `ts_k`, and `ts_{k+1}` the first visit of `s` after `te_k`. A missing
//! visit is the sentinel `N + 2`, and only segments with `te_k <= N + 1`
//! are counted.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TransitionModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

impl Step {
    pub fn new(state: usize, action: usize, reward: f64, next_state: usize) -> Self {
        Step {
            state,
            action,
            reward,
            next_state,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    n_states: usize,
    n_actions: usize,
    steps: Vec<Step>,
}

impl Trajectory {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        Trajectory {
            n_states,
            n_actions,
            steps: Vec::new(),
        }
    }

    pub fn from_steps(n_states: usize, n_actions: usize, steps: Vec<Step>) -> Result<Self> {
        let mut traj = Trajectory::new(n_states, n_actions);
        traj.steps.reserve(steps.len());
        for step in steps {
            traj.push(step)?;
        }
        Ok(traj)
    }

    /// Appends a step, enforcing index ranges, finite rewards and that the
    /// step starts where the previous one ended.
    pub fn push(&mut self, step: Step) -> Result<()> {
        if step.state >= self.n_states || step.next_state >= self.n_states || step.action >= self.n_actions {
            return Err(Error::invalid(format!("step {step:?} out of range")));
        }
        if !step.reward.is_finite() {
            return Err(Error::invalid("non-finite reward"));
        }
        if let Some(last) = self.steps.last() {
            if last.next_state != step.state {
                return Err(Error::invalid(format!(
                    "step {} starts at {} but previous step ended at {}",
                    self.steps.len() + 1,
                    step.state,
                    last.next_state
                )));
            }
        }
        self.steps.push(step);
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    /// `s_1, ..., s_{N+1}`; empty for an empty trajectory.
    pub fn state_sequence(&self) -> Vec<usize> {
        let mut seq: Vec<usize> = self.steps.iter().map(|st| st.state).collect();
        if let Some(last) = self.steps.last() {
            seq.push(last.next_state);
        }
        seq
    }

    /// CSV with header `t,s,a,r,s_next`, one row per step, `t` from 1.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        out.write_record(["t", "s", "a", "r", "s_next"])?;
        for (i, st) in self.steps.iter().enumerate() {
            out.write_record(&[
                (i + 1).to_string(),
                st.state.to_string(),
                st.action.to_string(),
                st.reward.to_string(),
                st.next_state.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, n_states: usize, n_actions: usize) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            t: usize,
            s: usize,
            a: usize,
            r: f64,
            s_next: usize,
        }
        let mut traj = Trajectory::new(n_states, n_actions);
        for (i, row) in csv::Reader::from_reader(reader).deserialize::<Row>().enumerate() {
            let row = row?;
            if row.t != i + 1 {
                return Err(Error::invalid(format!("row {} carries t={}", i + 1, row.t)));
            }
            traj.push(Step::new(row.s, row.a, row.r, row.s_next))?;
        }
        Ok(traj)
    }
}

/// Segments of an ordered state pair. `starts` and `ends` hold the counted
/// segments followed, if present, by one trailing open segment whose end is
/// the sentinel `N + 2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArrivalSegments {
    pub from: usize,
    pub to: usize,
    pub starts: Vec<usize>,
    pub ends: Vec<usize>,
    pub count: usize,
    pub sentinel: usize,
}

impl ArrivalSegments {
    /// Counted `(ts_k, te_k)` pairs.
    pub fn closed(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.starts
            .iter()
            .copied()
            .zip(self.ends.iter().copied())
            .take(self.count)
    }

    pub fn open_start(&self) -> Option<usize> {
        (self.starts.len() > self.count).then(|| self.starts[self.count])
    }
}

pub fn arrival_segments(traj: &Trajectory, from: usize, to: usize) -> Result<ArrivalSegments> {
    check_pair(traj.n_states(), from, to)?;
    let sentinel = traj.len() + 2;
    let mut starts = Vec::new();
    let mut ends = Vec::new();
    let mut open = None;
    for (idx, &state) in traj.state_sequence().iter().enumerate() {
        let t = idx + 1;
        match open {
            None if state == from => open = Some(t),
            Some(ts) if state == to => {
                starts.push(ts);
                ends.push(t);
                open = None;
            }
            _ => {}
        }
    }
    let count = ends.len();
    if let Some(ts) = open {
        starts.push(ts);
        ends.push(sentinel);
    }
    Ok(ArrivalSegments {
        from,
        to,
        starts,
        ends,
        count,
        sentinel,
    })
}

fn check_pair(n_states: usize, from: usize, to: usize) -> Result<()> {
    if from == to {
        return Err(Error::invalid("arrival statistics need two distinct states"));
    }
    if from >= n_states || to >= n_states {
        return Err(Error::invalid(format!("state pair ({from}, {to}) out of range")));
    }
    Ok(())
}

/// `L1(h, s, s', L) = sum_k [(h_{s'} - h_s) + sum_{ts_k <= i < te_k} (r_i - rho_hat)]`.
pub fn l1_statistic(h: &[f64], from: usize, to: usize, traj: &Trajectory, rho_hat: f64) -> Result<f64> {
    if h.len() != traj.n_states() {
        return Err(Error::invalid("bias vector length differs from the state count"));
    }
    let segments = arrival_segments(traj, from, to)?;
    let steps = traj.steps();
    let mut total = 0.0;
    for (ts, te) in segments.closed() {
        let mut inner = 0.0;
        for step in &steps[ts - 1..te - 1] {
            inner += step.reward - rho_hat;
        }
        total += (h[to] - h[from]) + inner;
    }
    Ok(total)
}

/// Per-pair aggregates from which `L1` follows in O(1) for any `h`:
/// `L1 = count * (h_{s'} - h_s) + reward_sum - rho_hat * length`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairSummary {
    pub count: u64,
    pub reward_sum: f64,
    pub length: u64,
}

impl PairSummary {
    #[inline]
    pub fn l1(&self, h_from: f64, h_to: f64, rho_hat: f64) -> f64 {
        self.count as f64 * (h_to - h_from) + self.reward_sum - rho_hat * self.length as f64
    }
}

/// `S x S` grid of [`PairSummary`]; the diagonal stays empty.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSummaries {
    n_states: usize,
    cells: Vec<PairSummary>,
}

impl PairSummaries {
    pub fn empty(n_states: usize) -> Self {
        PairSummaries {
            n_states,
            cells: vec![PairSummary::default(); n_states * n_states],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> PairSummary {
        self.cells[from * self.n_states + to]
    }

    /// Full recompute from the segment definition.
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let n = traj.n_states();
        let mut out = PairSummaries::empty(n);
        let steps = traj.steps();
        for from in 0..n {
            for to in (0..n).filter(|&t| t != from) {
                let segs = arrival_segments(traj, from, to).expect("valid pair");
                let cell = &mut out.cells[from * n + to];
                for (ts, te) in segs.closed() {
                    cell.count += 1;
                    cell.length += (te - ts) as u64;
                    cell.reward_sum += steps[ts - 1..te - 1].iter().map(|s| s.reward).sum::<f64>();
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct OpenSegment {
    start: usize,
    reward_before: f64,
}

/// Maintains every pair's segments under appends in O(S) per step.
#[derive(Debug, Clone)]
pub struct ArrivalTracker {
    n_states: usize,
    open: Vec<Option<OpenSegment>>,
    closed: PairSummaries,
    reward_total: f64,
    steps: usize,
    last_state: Option<usize>,
}

impl ArrivalTracker {
    pub fn new(n_states: usize) -> Self {
        ArrivalTracker {
            n_states,
            open: vec![None; n_states * n_states],
            closed: PairSummaries::empty(n_states),
            reward_total: 0.0,
            steps: 0,
            last_state: None,
        }
    }

    pub fn push(&mut self, step: &Step) {
        let t = self.steps + 1;
        let n = self.n_states;
        let x = step.state;
        for other in (0..n).filter(|&o| o != x) {
            // x closes segments heading to it...
            let idx = other * n + x;
            if let Some(seg) = self.open[idx].take() {
                let cell = &mut self.closed.cells[idx];
                cell.count += 1;
                cell.length += (t - seg.start) as u64;
                cell.reward_sum += self.reward_total - seg.reward_before;
            }
            // ...and opens the ones leaving it.
            let idx = x * n + other;
            if self.open[idx].is_none() {
                self.open[idx] = Some(OpenSegment {
                    start: t,
                    reward_before: self.reward_total,
                });
            }
        }
        self.reward_total += step.reward;
        self.steps = t;
        self.last_state = Some(step.next_state);
    }

    /// Summaries as of the current length `N`, including segments closed by
    /// the final next-state `s_{N+1}`.
    pub fn summaries(&self) -> PairSummaries {
        let mut out = self.closed.clone();
        if let Some(x) = self.last_state {
            let n = self.n_states;
            let t = self.steps + 1;
            for other in (0..n).filter(|&o| o != x) {
                let idx = other * n + x;
                if let Some(seg) = self.open[idx] {
                    let cell = &mut out.cells[idx];
                    cell.count += 1;
                    cell.length += (t - seg.start) as u64;
                    cell.reward_sum += self.reward_total - seg.reward_before;
                }
            }
        }
        out
    }
}

/// Counts and empirical model of a trajectory.
///
/// Rows of never-visited pairs are set to the uniform distribution and
/// flagged in `unvisited`; radii use `max(N, 1)` as divisor.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStats {
    pub visit_counts: Vec<u64>,
    pub triple_counts: Vec<u64>,
    pub empirical_transitions: TransitionModel,
    pub unvisited: Vec<bool>,
    pub empirical_gain: f64,
    pub reward_sum: f64,
    pub length: usize,
}

impl TrajectoryStats {
    pub fn n_states(&self) -> usize {
        self.empirical_transitions.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.empirical_transitions.n_actions()
    }

    #[inline]
    pub fn visits(&self, s: usize, a: usize) -> u64 {
        self.visit_counts[s * self.n_actions() + a]
    }

    /// `max(N_{s,a}, 1)`.
    #[inline]
    pub fn divisor(&self, s: usize, a: usize) -> f64 {
        self.visits(s, a).max(1) as f64
    }

    #[inline]
    pub fn p_hat(&self, s: usize, a: usize) -> &[f64] {
        self.empirical_transitions.row(s, a)
    }

    fn from_counts(
        n_states: usize,
        n_actions: usize,
        visits: Vec<u64>,
        triples: Vec<u64>,
        reward_sum: f64,
        length: usize,
    ) -> Self {
        let mut probs = vec![0.0; n_states * n_actions * n_states];
        let mut unvisited = vec![false; n_states * n_actions];
        for sa in 0..n_states * n_actions {
            let row = &mut probs[sa * n_states..(sa + 1) * n_states];
            if visits[sa] == 0 {
                unvisited[sa] = true;
                row.fill(1.0 / n_states as f64);
            } else {
                let n = visits[sa] as f64;
                for (p, c) in row.iter_mut().zip(&triples[sa * n_states..(sa + 1) * n_states]) {
                    *p = *c as f64 / n;
                }
            }
        }
        TrajectoryStats {
            visit_counts: visits,
            triple_counts: triples,
            empirical_transitions: TransitionModel::new(n_states, n_actions, probs, crate::mdp::SIMPLEX_TOL)
                .expect("count-normalized rows are simplex points"),
            unvisited,
            empirical_gain: reward_sum / length.max(1) as f64,
            reward_sum,
            length,
        }
    }
}

pub fn compute_stats(traj: &Trajectory) -> TrajectoryStats {
    let (n_states, n_actions) = (traj.n_states(), traj.n_actions());
    let mut visits = vec![0u64; n_states * n_actions];
    let mut triples = vec![0u64; n_states * n_actions * n_states];
    let mut reward_sum = 0.0;
    for st in traj.steps() {
        let sa = st.state * n_actions + st.action;
        visits[sa] += 1;
        triples[sa * n_states + st.next_state] += 1;
        reward_sum += st.reward;
    }
    TrajectoryStats::from_counts(n_states, n_actions, visits, triples, reward_sum, traj.len())
}

/// A trajectory plus incrementally maintained counts and arrival
/// summaries, for agents that snapshot statistics once per episode.
#[derive(Debug, Clone)]
pub struct TrajectoryRecorder {
    trajectory: Trajectory,
    visits: Vec<u64>,
    triples: Vec<u64>,
    reward_sum: f64,
    arrivals: ArrivalTracker,
}

impl TrajectoryRecorder {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        TrajectoryRecorder {
            trajectory: Trajectory::new(n_states, n_actions),
            visits: vec![0; n_states * n_actions],
            triples: vec![0; n_states * n_actions * n_states],
            reward_sum: 0.0,
            arrivals: ArrivalTracker::new(n_states),
        }
    }

    pub fn push(&mut self, step: Step) -> Result<()> {
        self.trajectory.push(step)?;
        let (n_states, n_actions) = (self.trajectory.n_states(), self.trajectory.n_actions());
        let sa = step.state * n_actions + step.action;
        self.visits[sa] += 1;
        self.triples[sa * n_states + step.next_state] += 1;
        self.reward_sum += step.reward;
        self.arrivals.push(&step);
        Ok(())
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn visit_counts(&self) -> &[u64] {
        &self.visits
    }

    pub fn stats(&self) -> TrajectoryStats {
        TrajectoryStats::from_counts(
            self.trajectory.n_states(),
            self.trajectory.n_actions(),
            self.visits.clone(),
            self.triples.clone(),
            self.reward_sum,
            self.trajectory.len(),
        )
    }

    pub fn pair_summaries(&self) -> PairSummaries {
        self.arrivals.summaries()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// States (1, 3, 2, 1, 2) relabelled to indices, rewards (1, 0, 1, 0).
    fn example() -> Trajectory {
        let states = [1, 3, 2, 1, 2];
        let rewards = [1.0, 0.0, 1.0, 0.0];
        let steps = (0..4)
            .map(|i| Step::new(states[i], 0, rewards[i], states[i + 1]))
            .collect();
        Trajectory::from_steps(4, 1, steps).unwrap()
    }

    #[test]
    fn segments_of_example() {
        let segs = arrival_segments(&example(), 1, 2).unwrap();
        assert_eq!(segs.starts, vec![1, 4]);
        assert_eq!(segs.ends, vec![3, 5]);
        assert_eq!(segs.count, 2);
        assert_eq!(segs.open_start(), None);
    }

    #[test]
    fn never_visited_source() {
        let segs = arrival_segments(&example(), 0, 2).unwrap();
        assert_eq!(segs.count, 0);
        assert!(segs.starts.is_empty());
        assert_eq!(segs.sentinel, 6);
    }

    #[test]
    fn source_only_at_the_end() {
        let segs = arrival_segments(&example(), 2, 3).unwrap();
        // 2 is visited at t=3 and t=5 but 3 never follows.
        assert_eq!(segs.count, 0);
        assert_eq!(segs.starts, vec![3]);
        assert_eq!(segs.ends, vec![segs.sentinel]);
    }

    #[test]
    fn same_state_pair_rejected() {
        assert!(arrival_segments(&example(), 1, 1).is_err());
        assert!(l1_statistic(&[0.0; 4], 2, 2, &example(), 0.0).is_err());
    }

    #[test]
    fn l1_of_example() {
        let h = [0.0, 0.3, 0.1, 0.0];
        let v = l1_statistic(&h, 1, 2, &example(), 0.5).unwrap();
        assert!((v - (-0.9)).abs() < 1e-12, "{v}");
        assert_eq!(l1_statistic(&h, 0, 2, &example(), 0.5).unwrap(), 0.0);
    }

    #[test]
    fn l1_zero_when_rewards_match_gain() {
        let steps = vec![
            Step::new(0, 0, 0.4, 1),
            Step::new(1, 0, 0.4, 0),
            Step::new(0, 0, 0.4, 1),
        ];
        let traj = Trajectory::from_steps(2, 1, steps).unwrap();
        assert!(l1_statistic(&[0.2, 0.2], 0, 1, &traj, 0.4).unwrap().abs() < 1e-15);
    }

    #[test]
    fn stats_of_empty_and_single_step() {
        let empty = compute_stats(&Trajectory::new(2, 1));
        assert!(empty.visit_counts.iter().all(|c| *c == 0));
        assert_eq!(empty.divisor(0, 0), 1.0);
        assert_eq!(empty.empirical_gain, 0.0);
        assert!(empty.unvisited.iter().all(|u| *u));

        let one = compute_stats(&Trajectory::from_steps(2, 1, vec![Step::new(0, 0, 1.0, 1)]).unwrap());
        assert_eq!(one.visits(0, 0), 1);
        assert_eq!(one.p_hat(0, 0), &[0.0, 1.0]);
        assert_eq!(one.empirical_gain, 1.0);
        assert!(!one.unvisited[0] && one.unvisited[1]);
    }

    #[test]
    fn push_rejects_inconsistent_steps() {
        let mut traj = Trajectory::new(3, 2);
        traj.push(Step::new(0, 1, 0.0, 2)).unwrap();
        assert!(traj.push(Step::new(1, 0, 0.0, 0)).is_err());
        assert!(traj.push(Step::new(2, 2, 0.0, 0)).is_err());
        assert!(traj.push(Step::new(2, 0, f64::NAN, 0)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let traj = example();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,s,a,r,s_next\n1,1,0,1,3\n"));
        assert_eq!(Trajectory::read_csv(&buf[..], 4, 1).unwrap(), traj);
    }

    #[test]
    fn tracker_matches_recompute_on_example() {
        let traj = example();
        let mut tracker = ArrivalTracker::new(4);
        for st in traj.steps() {
            tracker.push(st);
        }
        assert_eq!(tracker.summaries(), PairSummaries::from_trajectory(&traj));
    }
}
