//! Online learning loops.
//!
//! All agents share the doubling-episode controller: an episode ends as
//! soon as the in-episode visit count of the pair just executed reaches
//! `max(N, 1)`, where `N` is its count before the episode. The environment
//! realizes Bernoulli rewards; agents plan with the known mean rewards and
//! regret is measured against the mean rewards.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::confidence::{
    bad_event_flags, BadEvents, ConfidenceParams, ConfidenceSet, EpisodeSnapshot, DEFAULT_FEAS_TOL,
};
use crate::error::{Error, Result};
use crate::mdp::{self, GainBias, Mdp, Policy, TransitionModel};
use crate::planners::{self, ebf_plan, PlannerBudget, SolverSolution};
use crate::rng;
use crate::trajectory::{Step, TrajectoryRecorder};

/// Gap used to call a planned gain optimistic.
pub const OPTIMISM_SLACK: f64 = 1e-3;
const LD_EVI_MAX_ITER: usize = 10_000;

/// Doubling-episode bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub index: usize,
    /// 1-based time of the episode's first step.
    pub start: u64,
    /// Visit counts before the episode began.
    pub counts_before: Vec<u64>,
    /// Visit counts within the episode.
    pub in_episode: Vec<u64>,
    n_actions: usize,
}

impl EpisodeState {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        EpisodeState {
            index: 0,
            start: 1,
            counts_before: vec![0; n_states * n_actions],
            in_episode: vec![0; n_states * n_actions],
            n_actions,
        }
    }

    /// Starts episode `index + 1` at time `start` with the given counts.
    pub fn begin(&mut self, start: u64, counts: &[u64]) {
        self.index += 1;
        self.start = start;
        self.counts_before.copy_from_slice(counts);
        self.in_episode.fill(0);
    }

    pub fn record(&mut self, s: usize, a: usize) {
        self.in_episode[s * self.n_actions + a] += 1;
    }
}

/// True iff the in-episode count of `(s, a)` reached `max(N_{k,s,a}, 1)`.
pub fn should_end_episode(state: &EpisodeState, s: usize, a: usize) -> bool {
    let sa = s * state.n_actions + a;
    state.in_episode[sa] >= state.counts_before[sa].max(1)
}

/// `SA (log2(T / SA) + 1)`, defined when `SA >= 2` and `T >= SA`.
pub fn episode_bound(n_states: usize, n_actions: usize, horizon: u64) -> Option<f64> {
    let sa = (n_states * n_actions) as f64;
    (n_states * n_actions >= 2 && horizon as f64 >= sa).then(|| sa * ((horizon as f64 / sa).log2() + 1.0))
}

/// Samples transitions and Bernoulli rewards of a known MDP.
#[derive(Debug, Clone)]
pub struct Environment<'a> {
    mdp: &'a Mdp,
    rng: ChaCha8Rng,
}

impl<'a> Environment<'a> {
    pub fn new(mdp: &'a Mdp, rng: ChaCha8Rng) -> Self {
        Environment { mdp, rng }
    }

    /// Realized reward and next state of playing `a` in `s`.
    pub fn step(&mut self, s: usize, a: usize) -> (f64, usize) {
        let row = self.mdp.transitions().row(s, a);
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        let mut next = None;
        for (x, p) in row.iter().enumerate() {
            if *p > 0.0 {
                acc += p;
                next = Some(x);
                if u < acc {
                    break;
                }
            }
        }
        let mean = self.mdp.reward(s, a).clamp(0.0, 1.0);
        let reward = if self.rng.random::<f64>() < mean { 1.0 } else { 0.0 };
        (reward, next.expect("rows have positive mass"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: u64,
    /// Cumulative mean reward of the executed pairs.
    pub cum_reward: f64,
    pub regret: f64,
    pub episode: usize,
}

/// Per-step regret curve: `regret_t = t rho* - sum_{i <= t} r_{s_i, a_i}`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegretTrace {
    pub rows: Vec<TraceRow>,
}

impl RegretTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn final_regret(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.regret)
    }

    pub fn regrets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.regret).collect()
    }

    /// CSV with header `t,cum_reward,regret,episode`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(["t", "cum_reward", "regret", "episode"])?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BadEventCounts {
    pub b1: usize,
    pub b2: usize,
    pub b3: usize,
    pub b4: usize,
    pub any: usize,
}

impl BadEventCounts {
    fn add(&mut self, flags: &BadEvents) {
        self.b1 += usize::from(flags.b1);
        self.b2 += usize::from(flags.b2);
        self.b3 += usize::from(flags.b3);
        self.b4 += usize::from(flags.b4);
        self.any += usize::from(flags.any());
    }
}

/// What happened in one EBF episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub start: u64,
    pub rho: f64,
    pub certified: bool,
    pub fallback_used: bool,
    /// `h*` inside `[0, H]^S` and the H-set.
    pub hstar_in_hset: bool,
    /// The true `(pi*, P, h*, rho*)` is certified.
    pub true_tuple_certified: bool,
    pub bad_events: BadEvents,
}

/// Run summary written next to each trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub agent: String,
    pub horizon: u64,
    pub seed: u64,
    pub optimal_gain: f64,
    pub bias_span: f64,
    pub episodes: usize,
    pub episode_bound: Option<f64>,
    pub episode_bound_ok: bool,
    /// Episodes that ended with other than exactly one pair at its doubling
    /// threshold.
    pub doubling_violations: usize,
    pub final_regret: f64,
    pub bad_events: BadEventCounts,
    pub fallback_count: usize,
    pub certified_count: usize,
    pub hstar_in_hset_count: usize,
    pub true_tuple_certified_count: usize,
    /// Certified episodes whose planned gain is at least `rho* - 1e-3`.
    pub optimistic_certified_count: usize,
    pub evi_nonconverged: usize,
    pub h_estimate: Option<f64>,
    pub warnings: Vec<String>,
    pub episode_records: Vec<EpisodeRecord>,
}

impl Diagnostics {
    fn new(agent: &str, mdp: &Mdp, gb: &GainBias, horizon: u64, seed: u64) -> Self {
        Diagnostics {
            agent: agent.to_string(),
            horizon,
            seed,
            optimal_gain: gb.gain,
            bias_span: gb.span,
            episodes: 0,
            episode_bound: episode_bound(mdp.n_states(), mdp.n_actions(), horizon),
            episode_bound_ok: true,
            doubling_violations: 0,
            final_regret: 0.0,
            bad_events: BadEventCounts::default(),
            fallback_count: 0,
            certified_count: 0,
            hstar_in_hset_count: 0,
            true_tuple_certified_count: 0,
            optimistic_certified_count: 0,
            evi_nonconverged: 0,
            h_estimate: None,
            warnings: Vec::new(),
            episode_records: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Runs the shared episodic loop. `plan` is called at the start of every
/// episode with the history so far and the 1-based start time.
fn run_episodic<F>(
    mdp: &Mdp,
    gb: &GainBias,
    horizon: u64,
    seed: u64,
    diag: &mut Diagnostics,
    mut plan: F,
) -> Result<RegretTrace>
where
    F: FnMut(&TrajectoryRecorder, u64, f64, f64, &mut Diagnostics) -> Result<Policy>,
{
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    let mut env = Environment::new(mdp, rng::stream(seed, "environment"));
    let mut recorder = TrajectoryRecorder::new(n_states, n_actions);
    let mut episode = EpisodeState::new(n_states, n_actions);
    let mut trace = RegretTrace {
        rows: Vec::with_capacity(horizon as usize),
    };
    let mut s = mdp.initial_state();
    let mut cum_reward = 0.0;
    let mut gap_sum = 0.0;
    let mut t = 0u64;
    while t < horizon {
        let regret_before = t as f64 * gb.gain - cum_reward;
        let policy = plan(&recorder, t + 1, regret_before, gap_sum, diag)?;
        episode.begin(t + 1, recorder.visit_counts());
        loop {
            t += 1;
            let a = policy.action(s);
            let (reward, next) = env.step(s, a);
            recorder.push(Step::new(s, a, reward, next))?;
            episode.record(s, a);
            cum_reward += mdp.reward(s, a);
            gap_sum += mdp::gap_unchecked(mdp, gb, s, a);
            trace.rows.push(TraceRow {
                t,
                cum_reward,
                regret: t as f64 * gb.gain - cum_reward,
                episode: episode.index,
            });
            let done = should_end_episode(&episode, s, a);
            s = next;
            if done {
                let at_threshold = (0..n_states * n_actions)
                    .filter(|sa| episode.in_episode[*sa] >= episode.counts_before[*sa].max(1))
                    .count();
                diag.doubling_violations += usize::from(at_threshold != 1);
            }
            if done || t == horizon {
                break;
            }
        }
    }
    diag.episodes = episode.index;
    diag.final_regret = trace.final_regret();
    if let Some(bound) = diag.episode_bound {
        diag.episode_bound_ok = episode.index as f64 <= bound;
    }
    Ok(trace)
}

/// Settings of an EBF run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EbfSettings {
    pub budget: PlannerBudget,
    pub feas_tol: f64,
}

impl Default for EbfSettings {
    fn default() -> Self {
        EbfSettings {
            budget: PlannerBudget::default(),
            feas_tol: DEFAULT_FEAS_TOL,
        }
    }
}

/// The bias-function optimistic agent.
pub fn run_ebf(
    mdp: &Mdp,
    params: &ConfidenceParams,
    horizon: u64,
    seed: u64,
    settings: &EbfSettings,
) -> Result<(RegretTrace, Diagnostics)> {
    let gb = mdp::solve_gain_bias(mdp, mdp::DEFAULT_TOL)?;
    let pi_star = mdp::greedy_policy(mdp, &gb.bias);
    let mut diag = Diagnostics::new("ebf", mdp, &gb, horizon, seed);
    if params.h_bound < gb.span {
        diag.warnings
            .push(format!("H = {} is below sp(h*) = {}", params.h_bound, gb.span));
    }
    let trace = run_episodic(
        mdp,
        &gb,
        horizon,
        seed,
        &mut diag,
        |rec, start, regret_before, gap_sum, diag| {
            let cs = ConfidenceSet::new(&rec.stats(), rec.pair_summaries(), params);
            let sol: SolverSolution = ebf_plan(&cs, mdp.rewards(), &settings.budget, settings.feas_tol)?;
            let snapshot = EpisodeSnapshot {
                confidence_set: &cs,
                regret_before,
                gap_sum_before: gap_sum,
            };
            let bad_events = bad_event_flags(&snapshot, mdp, &gb, params, settings.feas_tol)?;
            let truth = cs.evaluate(
                &pi_star,
                mdp.transitions(),
                &gb.bias,
                gb.gain,
                mdp.rewards(),
                settings.feas_tol,
            )?;
            let record = EpisodeRecord {
                episode: diag.episode_records.len() + 1,
                start,
                rho: sol.gain,
                certified: sol.certified,
                fallback_used: sol.fallback_used,
                hstar_in_hset: truth.hset.ok && truth.bias_range.ok,
                true_tuple_certified: truth.certified(),
                bad_events,
            };
            diag.bad_events.add(&bad_events);
            diag.fallback_count += usize::from(sol.fallback_used);
            diag.certified_count += usize::from(sol.certified);
            diag.hstar_in_hset_count += usize::from(record.hstar_in_hset);
            diag.true_tuple_certified_count += usize::from(record.true_tuple_certified);
            diag.optimistic_certified_count += usize::from(sol.certified && sol.gain >= gb.gain - OPTIMISM_SLACK);
            diag.episode_records.push(record);
            Ok(sol.policy)
        },
    )?;
    Ok((trace, diag))
}

/// UCRL2 baseline: extended value iteration over L1 balls of radius
/// `sqrt(14 S log(2/delta) / max(N, 1))`.
pub fn run_ucrl2(mdp: &Mdp, delta: f64, horizon: u64, seed: u64) -> Result<(RegretTrace, Diagnostics)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    let gb = mdp::solve_gain_bias(mdp, mdp::DEFAULT_TOL)?;
    let gamma = crate::confidence::gamma(delta);
    let n_states = mdp.n_states();
    let mut diag = Diagnostics::new("ucrl2", mdp, &gb, horizon, seed);
    let trace = run_episodic(mdp, &gb, horizon, seed, &mut diag, |rec, _, _, _, diag| {
        let stats = rec.stats();
        let radii: Vec<f64> = stats
            .visit_counts
            .iter()
            .map(|n| (14.0 * n_states as f64 * gamma / (*n).max(1) as f64).sqrt())
            .collect();
        let evi = planners::extended_value_iteration_with(
            &stats.empirical_transitions,
            mdp.rewards(),
            &radii,
            planners::EVI_TOL,
            planners::EVI_MAX_ITER,
        )?;
        diag.evi_nonconverged += usize::from(!evi.converged);
        Ok(evi.policy)
    })?;
    Ok((trace, diag))
}

/// Result of one diameter-learning run between `x` and `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiameterEstimate {
    pub x: usize,
    pub y: usize,
    /// Estimated travel time from `x` to `y` (infinite if never arrived).
    pub d_xy: f64,
    pub d_yx: f64,
    /// Steps spent targeting `y` and targeting `x`.
    pub steps: [u64; 2],
    /// Arrivals at `y` and at `x`.
    pub arrivals: [u64; 2],
    pub warnings: Vec<String>,
}

/// Per-process state of the diameter learner. Process 0 starts from `x`
/// and targets `y`; process 1 the reverse.
#[derive(Debug, Clone)]
pub struct LdState {
    /// Index of the active process.
    pub active: usize,
    pub visits: [Vec<u64>; 2],
    pub triples: [Vec<u64>; 2],
    /// Visit counts at each process's last policy update.
    pub counts_at_update: [Vec<u64>; 2],
    pub last_update: [Option<u64>; 2],
    pub policies: [Policy; 2],
    pub steps: [u64; 2],
    pub arrivals: [u64; 2],
    needs_update: [bool; 2],
}

impl LdState {
    fn new(n_states: usize, n_actions: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut random_policy = || {
            let actions = (0..n_states).map(|_| rng.random_range(0..n_actions)).collect();
            Policy::new(actions, n_actions).expect("actions in range")
        };
        let policies = [random_policy(), random_policy()];
        let zeros = vec![0; n_states * n_actions];
        LdState {
            active: 0,
            visits: [zeros.clone(), zeros.clone()],
            triples: [
                vec![0; n_states * n_actions * n_states],
                vec![0; n_states * n_actions * n_states],
            ],
            counts_at_update: [zeros.clone(), zeros],
            last_update: [None, None],
            policies,
            steps: [0, 0],
            arrivals: [0, 0],
            needs_update: [true, true],
        }
    }
}

/// Learns the travel times between `x` and `y` with two interleaved
/// optimistic processes. The active process targets one endpoint; on
/// arrival control passes to the process targeting the other endpoint.
/// Each process plans on its own counts with the target's rows redirected
/// to the start endpoint and a unit reward at the target, so its optimal
/// gain is `1 / (1 + travel time)`. Policies are recomputed on a
/// process's first activation and whenever one of its visit counts has
/// doubled since its last update.
pub fn learn_diameter(mdp: &Mdp, x: usize, y: usize, t0: u64, delta0: f64, seed: u64) -> Result<DiameterEstimate> {
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    if x == y {
        return Err(Error::invalid("learn_diameter needs x != y"));
    }
    if x >= n_states || y >= n_states {
        return Err(Error::invalid("endpoint out of range"));
    }
    if !(delta0 > 0.0 && delta0 < 1.0) {
        return Err(Error::invalid(format!("delta0 must lie in (0, 1), got {delta0}")));
    }
    let label = format!("ld/{x}/{y}");
    let mut env = Environment::new(mdp, rng::stream(seed, &format!("{label}/environment")));
    let mut policy_rng = rng::stream(seed, &format!("{label}/policy"));
    let mut st = LdState::new(n_states, n_actions, &mut policy_rng);
    let endpoints = [(x, y), (y, x)];
    let log_term = (2.0 * n_actions as f64 * t0.max(1) as f64 / delta0).ln();

    let mut s = mdp.initial_state();
    st.active = if s == x { 0 } else { 1 };
    for t in 1..=t0 {
        let p = st.active;
        if st.needs_update[p] {
            let (from, to) = endpoints[p];
            st.policies[p] = plan_ld_process(&st.visits[p], &st.triples[p], n_states, n_actions, from, to, log_term)?;
            st.counts_at_update[p].copy_from_slice(&st.visits[p]);
            st.last_update[p] = Some(t);
            st.needs_update[p] = false;
        }
        let a = st.policies[p].action(s);
        let (_, next) = env.step(s, a);
        let sa = s * n_actions + a;
        st.visits[p][sa] += 1;
        st.triples[p][sa * n_states + next] += 1;
        st.steps[p] += 1;
        let base = st.counts_at_update[p][sa];
        if st.visits[p][sa] - base >= base.max(1) {
            st.needs_update[p] = true;
        }
        if next == endpoints[p].1 {
            st.arrivals[p] += 1;
            st.active = 1 - p;
        }
        s = next;
    }

    let mut warnings = Vec::new();
    let ratio = |p: usize, warnings: &mut Vec<String>| {
        if st.arrivals[p] == 0 {
            let (from, to) = endpoints[p];
            warnings.push(format!("no arrival from {from} to {to} within {t0} steps"));
            f64::INFINITY
        } else {
            st.steps[p] as f64 / st.arrivals[p] as f64
        }
    };
    let d_xy = ratio(0, &mut warnings);
    let d_yx = ratio(1, &mut warnings);
    Ok(DiameterEstimate {
        x,
        y,
        d_xy,
        d_yx,
        steps: st.steps,
        arrivals: st.arrivals,
        warnings,
    })
}

fn plan_ld_process(
    visits: &[u64],
    triples: &[u64],
    n_states: usize,
    n_actions: usize,
    from: usize,
    to: usize,
    log_term: f64,
) -> Result<Policy> {
    let mut probs = vec![0.0; n_states * n_actions * n_states];
    let mut radii = vec![0.0; n_states * n_actions];
    let mut rewards = vec![0.0; n_states * n_actions];
    for s in 0..n_states {
        for a in 0..n_actions {
            let sa = s * n_actions + a;
            let row = &mut probs[sa * n_states..(sa + 1) * n_states];
            if s == to {
                row[from] = 1.0;
                rewards[sa] = 1.0;
                continue;
            }
            let n = visits[sa];
            if n == 0 {
                row.fill(1.0 / n_states as f64);
            } else {
                for (p, c) in row.iter_mut().zip(&triples[sa * n_states..(sa + 1) * n_states]) {
                    *p = *c as f64 / n as f64;
                }
            }
            radii[sa] = (14.0 * (n_states * n_actions) as f64 * log_term / n.max(1) as f64).sqrt();
        }
    }
    let model = TransitionModel::new(n_states, n_actions, probs, mdp::SIMPLEX_TOL)?;
    let evi = planners::extended_value_iteration_with(&model, &rewards, &radii, planners::EVI_TOL, LD_EVI_MAX_ITER)?;
    Ok(evi.policy)
}

/// Smallest integer `r` with `r^4 >= t`.
pub fn fourth_root_ceil(t: u64) -> u64 {
    let t = u128::from(t);
    let mut r = (t as f64).powf(0.25) as u128;
    while r.pow(4) < t {
        r += 1;
    }
    while r > 0 && (r - 1).pow(4) >= t {
        r -= 1;
    }
    r as u64
}

/// Upper estimate of the bias span from learned travel times:
/// `max_{s != s'} D_hat(s, s') + 1`, running the diameter learner for every
/// ordered pair with `T0 = ceil(T^{1/4})`.
pub fn estimate_h(mdp: &Mdp, horizon: u64, delta: f64, seed: u64) -> Result<(f64, Vec<DiameterEstimate>)> {
    let n_states = mdp.n_states();
    if n_states < 2 {
        return Err(Error::invalid("estimating H needs at least 2 states"));
    }
    let t0 = fourth_root_ceil(horizon);
    let mut runs = Vec::new();
    let mut worst: f64 = 0.0;
    for x in 0..n_states {
        for y in (0..n_states).filter(|y| *y != x) {
            let est = learn_diameter(mdp, x, y, t0, delta, seed)?;
            if !est.d_xy.is_finite() || !est.d_yx.is_finite() {
                return Err(Error::DiameterLearning(format!(
                    "pair ({x}, {y}) never completed a traversal with T0 = {t0}"
                )));
            }
            worst = worst.max(est.d_xy).max(est.d_yx);
            runs.push(est);
        }
    }
    Ok((worst + 1.0, runs))
}
