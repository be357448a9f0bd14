//! Statistical and deterministic validation suites.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::counterexample::counterexample_mc;
use super::doubling::{check_doubling_sums, random_admissible_sequence};
use super::envs::make_garnet;
use crate::confidence::{bernstein_elementwise_radius, bias_weighted_radius, gamma, l1_radius};
use crate::error::{Error, Result};
use crate::mdp::{self, Mdp};
use crate::rng;
use crate::trajectory::{arrival_segments, Step, Trajectory};

/// Where a check's threshold comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdOrigin {
    /// A fixed number given by the check's definition.
    Stated,
    /// Computed from the check's parameters (nominal rate plus binomial slack).
    Computed,
    /// Follows from a definition or an exact identity.
    Definitional,
}

impl fmt::Display for ThresholdOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThresholdOrigin::Stated => "stated",
            ThresholdOrigin::Computed => "computed",
            ThresholdOrigin::Definitional => "definitional",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub observed: f64,
    pub threshold: f64,
    pub origin: ThresholdOrigin,
    /// 95% normal-approximation interval around `observed`, for frequencies.
    pub interval: Option<(f64, f64)>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub suite: String,
    pub seed: Option<u64>,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn new(suite: &str, seed: Option<u64>) -> Self {
        ValidationReport {
            suite: suite.to_string(),
            seed,
            checks: Vec::new(),
        }
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn extend(&mut self, other: ValidationReport) {
        self.checks.extend(other.checks);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "suite {}", self.suite)?;
        for c in &self.checks {
            writeln!(
                f,
                "[{}] {}: observed {:.6} vs threshold {:.6} ({}){}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.observed,
                c.threshold,
                c.origin,
                if c.detail.is_empty() {
                    String::new()
                } else {
                    format!("; {}", c.detail)
                }
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    /// Arrival-segment sum bound on a flat MDP (`lemma1`).
    SegmentSums,
    /// Whole-trajectory partial-sum bound on a flat MDP (`lemmaB5`).
    PartialSums,
    Coverage,
    Counterexample,
    Doubling,
    All,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::SegmentSums => "segment-sums",
            Suite::PartialSums => "partial-sums",
            Suite::Coverage => "coverage",
            Suite::Counterexample => "counterexample",
            Suite::Doubling => "doubling",
            Suite::All => "all",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lemma1" | "segment-sums" => Suite::SegmentSums,
            "lemmaB5" | "lemmab5" | "partial-sums" => Suite::PartialSums,
            "coverage" => Suite::Coverage,
            "counterexample" => Suite::Counterexample,
            "doubling" => Suite::Doubling,
            "all" => Suite::All,
            other => {
                return Err(Error::Config(format!(
                    "unknown suite '{other}' (expected lemma1, lemmaB5, coverage, counterexample, doubling or all)"
                )))
            }
        })
    }
}

pub fn validate(suite: &str, seed: u64) -> Result<ValidationReport> {
    let suite: Suite = suite.parse()?;
    let mut report = ValidationReport::new(suite.name(), Some(seed));
    let all = suite == Suite::All;
    if all || suite == Suite::SegmentSums {
        report.extend(segment_sum_suite(&FlatRunConfig::default(), seed)?);
    }
    if all || suite == Suite::PartialSums {
        report.extend(partial_sum_suite(&FlatRunConfig::default(), seed)?);
    }
    if all || suite == Suite::Coverage {
        report.extend(coverage_suite(&CoverageConfig::default(), seed)?);
    }
    if all || suite == Suite::Counterexample {
        report.extend(counterexample_suite(5000, 50, 2000, seed)?);
    }
    if all || suite == Suite::Doubling {
        report.extend(doubling_suite(1000, seed)?);
    }
    Ok(report)
}

/// `(p_hat - 1.96 se, p_hat + 1.96 se)` clipped to `[0, 1]`.
pub fn frequency_interval(hits: u64, trials: u64) -> (f64, f64) {
    let p = hits as f64 / trials as f64;
    let se = (p * (1.0 - p) / trials as f64).sqrt();
    ((p - 1.96 * se).max(0.0), (p + 1.96 * se).min(1.0))
}

/// `p + 3 sqrt(p (1 - p) / trials)` with `p` clipped to `[0, 1]`.
pub fn three_sigma_threshold(nominal: f64, trials: u64) -> f64 {
    let p = nominal.clamp(0.0, 1.0);
    p + 3.0 * (p * (1.0 - p) / trials as f64).sqrt()
}

fn frequency_check(
    name: String,
    hits: u64,
    trials: u64,
    threshold: f64,
    origin: ThresholdOrigin,
    detail: String,
) -> Check {
    let observed = hits as f64 / trials as f64;
    Check {
        name,
        passed: observed <= threshold,
        observed,
        threshold,
        origin,
        interval: Some(frequency_interval(hits, trials)),
        detail,
    }
}

/// Coverage protocol for the three transition radii.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageConfig {
    pub delta: f64,
    pub trials: u64,
    pub sample_sizes: Vec<u64>,
    pub bernoulli_means: Vec<f64>,
    pub multinomial: Vec<f64>,
    pub bias: Vec<f64>,
    pub h_bound: f64,
    pub threshold: f64,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        CoverageConfig {
            delta: 0.1,
            trials: 10_000,
            sample_sizes: vec![10, 100, 1000],
            bernoulli_means: vec![0.05, 0.3, 0.7],
            multinomial: vec![0.1, 0.2, 0.3, 0.4],
            bias: vec![0.0, 0.5, 1.0, 2.0],
            h_bound: 2.0,
            threshold: 0.11,
        }
    }
}

fn sample_multinomial<R: Rng>(rng: &mut R, n: u64, p: &[f64], counts: &mut [u64]) {
    let mut left = n;
    let mut mass = 1.0;
    for (i, pi) in p.iter().enumerate() {
        if i + 1 == p.len() || left == 0 {
            counts[i] = left;
            left = 0;
            continue;
        }
        let q = (pi / mass).clamp(0.0, 1.0);
        let k = Binomial::new(left, q).expect("valid binomial").sample(rng);
        counts[i] = k;
        left -= k;
        mass -= pi;
    }
}

pub fn coverage_suite(cfg: &CoverageConfig, seed: u64) -> Result<ValidationReport> {
    let mut report = ValidationReport::new("coverage", Some(seed));
    let g = gamma(cfg.delta);
    let detail = |n: u64| format!("delta = {}, n = {n}, {} trials", cfg.delta, cfg.trials);
    for &p in &cfg.bernoulli_means {
        for &n in &cfg.sample_sizes {
            let mut rng = rng::stream(seed, &format!("coverage/elementwise/{p}/{n}"));
            let binom = Binomial::new(n, p).map_err(|e| Error::invalid(e.to_string()))?;
            let mut hits = 0;
            for _ in 0..cfg.trials {
                let p_hat = binom.sample(&mut rng) as f64 / n as f64;
                hits += u64::from((p_hat - p).abs() > bernstein_elementwise_radius(p_hat, n, g)?);
            }
            report.push(frequency_check(
                format!("elementwise radius coverage, p = {p}, n = {n}"),
                hits,
                cfg.trials,
                cfg.threshold,
                ThresholdOrigin::Stated,
                detail(n),
            ));
        }
    }
    let s = cfg.multinomial.len();
    let mut counts = vec![0u64; s];
    for &n in &cfg.sample_sizes {
        let mut rng = rng::stream(seed, &format!("coverage/multinomial/{n}"));
        let (mut l1_hits, mut weighted_hits) = (0, 0);
        for _ in 0..cfg.trials {
            sample_multinomial(&mut rng, n, &cfg.multinomial, &mut counts);
            let p_hat: Vec<f64> = counts.iter().map(|c| *c as f64 / n as f64).collect();
            let l1: f64 = p_hat.iter().zip(&cfg.multinomial).map(|(a, b)| (a - b).abs()).sum();
            l1_hits += u64::from(l1 > l1_radius(n, s, g)?);
            let dev: f64 = p_hat
                .iter()
                .zip(&cfg.multinomial)
                .zip(&cfg.bias)
                .map(|((a, b), h)| (a - b) * h)
                .sum();
            let v = mdp::variance_weighted(&p_hat, &cfg.bias)?;
            weighted_hits += u64::from(dev.abs() > bias_weighted_radius(v, n, cfg.h_bound, g)?);
        }
        report.push(frequency_check(
            format!("L1 radius coverage, S = {s}, n = {n}"),
            l1_hits,
            cfg.trials,
            cfg.threshold,
            ThresholdOrigin::Stated,
            detail(n),
        ));
        report.push(frequency_check(
            format!("bias-weighted radius coverage, n = {n}"),
            weighted_hits,
            cfg.trials,
            cfg.threshold,
            ThresholdOrigin::Stated,
            detail(n),
        ));
    }
    Ok(report)
}

/// Protocol for the martingale checks on a flat MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatRunConfig {
    pub states: usize,
    pub actions: usize,
    pub model_seed: u64,
    pub steps: usize,
    pub delta: f64,
    pub runs: u64,
    /// Prefix lengths tested by the partial-sum check.
    pub prefixes: Vec<usize>,
}

impl Default for FlatRunConfig {
    fn default() -> Self {
        FlatRunConfig {
            states: 3,
            actions: 2,
            model_seed: 7,
            steps: 200,
            delta: 0.01,
            runs: 2000,
            prefixes: vec![10, 50, 200],
        }
    }
}

/// The flattened model, its gain/bias, and a uniformly random trajectory
/// using mean rewards.
pub fn flat_model(cfg: &FlatRunConfig) -> Result<(Mdp, mdp::GainBias)> {
    let base = make_garnet(cfg.states, cfg.actions, cfg.states, cfg.model_seed)?;
    let gb = mdp::solve_gain_bias(&base, 1e-12)?;
    Ok((mdp::flatten(&base, &gb), gb))
}

fn random_walk<R: Rng>(flat: &Mdp, steps: usize, rng: &mut R) -> Result<Trajectory> {
    let (n_states, n_actions) = (flat.n_states(), flat.n_actions());
    let mut traj = Trajectory::new(n_states, n_actions);
    let mut s = flat.initial_state();
    for _ in 0..steps {
        let a = rng.random_range(0..n_actions);
        let u: f64 = rng.random();
        let row = flat.transitions().row(s, a);
        let mut acc = 0.0;
        let mut next = n_states - 1;
        for (x, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                next = x;
                break;
            }
        }
        traj.push(Step::new(s, a, flat.reward(s, a), next))?;
        s = next;
    }
    Ok(traj)
}

/// Largest `|sum_{k <= c} (h_to - h_from + sum_{t in segment k} (r_t - rho))|`
/// over the completed arrival segments of `(from, to)`.
pub fn max_partial_segment_sum(traj: &Trajectory, from: usize, to: usize, h: &[f64], rho: f64) -> Result<f64> {
    let segs = arrival_segments(traj, from, to)?;
    let steps = traj.steps();
    let mut acc = 0.0;
    let mut worst: f64 = 0.0;
    for (start, end) in segs.closed() {
        acc += h[to] - h[from];
        for t in start..end {
            acc += steps[t - 1].reward - rho;
        }
        worst = worst.max(acc.abs());
    }
    Ok(worst)
}

pub fn segment_sum_suite(cfg: &FlatRunConfig, seed: u64) -> Result<ValidationReport> {
    let mut report = ValidationReport::new("segment-sums", Some(seed));
    let (flat, gb) = flat_model(cfg)?;
    let g = gamma(cfg.delta);
    let bound = ((2.0 * cfg.steps as f64 * g).sqrt() + 1.0) * gb.span;
    let n = cfg.states;
    let mut failures = vec![0u64; n * n];
    let mut rng = rng::stream(seed, "segment-sums");
    for _ in 0..cfg.runs {
        let traj = random_walk(&flat, cfg.steps, &mut rng)?;
        for from in 0..n {
            for to in (0..n).filter(|t| *t != from) {
                let worst = max_partial_segment_sum(&traj, from, to, &gb.bias, gb.gain)?;
                failures[from * n + to] += u64::from(worst > bound);
            }
        }
    }
    let threshold = three_sigma_threshold(cfg.steps as f64 * cfg.delta, cfg.runs);
    for from in 0..n {
        for to in (0..n).filter(|t| *t != from) {
            report.push(frequency_check(
                format!("arrival-segment sum bound, pair ({from}, {to})"),
                failures[from * n + to],
                cfg.runs,
                threshold,
                ThresholdOrigin::Computed,
                format!(
                    "N = {}, delta = {}, {} runs, bound {:.4}; nominal rate N*delta is capped at 1",
                    cfg.steps, cfg.delta, cfg.runs, bound
                ),
            ));
        }
    }
    Ok(report)
}

pub fn partial_sum_suite(cfg: &FlatRunConfig, seed: u64) -> Result<ValidationReport> {
    let mut report = ValidationReport::new("partial-sums", Some(seed));
    let (flat, gb) = flat_model(cfg)?;
    let g = gamma(cfg.delta);
    let mut failures = vec![0u64; cfg.prefixes.len()];
    let mut rng = rng::stream(seed, "partial-sums");
    let steps = cfg.prefixes.iter().copied().max().unwrap_or(0).max(cfg.steps);
    for _ in 0..cfg.runs {
        let traj = random_walk(&flat, steps, &mut rng)?;
        let mut acc = 0.0;
        let mut next = 0;
        for (i, st) in traj.steps().iter().enumerate() {
            acc += st.reward - gb.gain;
            while next < cfg.prefixes.len() && cfg.prefixes[next] == i + 1 {
                let n = cfg.prefixes[next] as f64;
                failures[next] += u64::from(acc.abs() > (2.0 * (n * g).sqrt() + 1.0) * gb.span);
                next += 1;
            }
        }
    }
    let threshold = three_sigma_threshold(cfg.delta, cfg.runs);
    for (n, hits) in cfg.prefixes.iter().zip(failures) {
        report.push(frequency_check(
            format!("flat partial-sum bound, n = {n}"),
            hits,
            cfg.runs,
            threshold,
            ThresholdOrigin::Computed,
            format!("delta = {}, {} runs", cfg.delta, cfg.runs),
        ));
    }
    Ok(report)
}

pub fn counterexample_suite(states: usize, draws: u64, trials: u64, seed: u64) -> Result<ValidationReport> {
    let r = counterexample_mc(states, draws, trials, seed)?;
    let mut report = ValidationReport::new("counterexample", Some(seed));
    let detail = format!(
        "S = {states}, n = {draws}, {trials} trials, mean {:.4} +- {:.4}",
        r.mean, r.std_error
    );
    report.push(Check {
        name: "MC mean within 3 standard errors of exact E[Z]".into(),
        passed: (r.mean - r.exact_mean).abs() <= 3.0 * r.std_error,
        observed: (r.mean - r.exact_mean).abs(),
        threshold: 3.0 * r.std_error,
        origin: ThresholdOrigin::Computed,
        interval: None,
        detail: format!("{detail}, exact {:.6}", r.exact_mean),
    });
    report.push(Check {
        name: "MC mean at least 1.9".into(),
        passed: r.mean >= 1.9,
        observed: r.mean,
        threshold: 1.9,
        origin: ThresholdOrigin::Stated,
        interval: None,
        detail: detail.clone(),
    });
    report.push(Check {
        name: "MC mean exceeds the dimension-free expectation bound".into(),
        passed: r.mean > r.claimed_bound,
        observed: r.mean,
        threshold: r.claimed_bound,
        origin: ThresholdOrigin::Computed,
        interval: None,
        detail: detail.clone(),
    });
    report.push(Check {
        name: "MC mean exceeds the lower bound (1 - 1/S)^n".into(),
        passed: r.mean > r.lower_bound,
        observed: r.mean,
        threshold: r.lower_bound,
        origin: ThresholdOrigin::Definitional,
        interval: None,
        detail,
    });
    Ok(report)
}

pub fn doubling_suite(count: usize, seed: u64) -> Result<ValidationReport> {
    let mut rng = rng::stream(seed, "doubling");
    let mut sequences: Vec<Vec<f64>> = (0..count)
        .map(|_| {
            let len = rng.random_range(1..=60);
            random_admissible_sequence(&mut rng, len)
        })
        .collect();
    sequences.push(vec![1.0, 1.0, 2.0, 4.0, 8.0]);
    sequences.push(vec![1.0; 40]);
    let mut report = check_doubling_sums(&sequences, &[0.25, 0.5, 0.75, 1.0])?;
    report.seed = Some(seed);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names() {
        assert_eq!("lemmaB5".parse::<Suite>().unwrap(), Suite::PartialSums);
        assert!(matches!("nope".parse::<Suite>(), Err(Error::Config(_))));
        assert!(matches!(validate("nope", 0), Err(Error::Config(_))));
    }

    #[test]
    fn thresholds() {
        assert_eq!(three_sigma_threshold(2.0, 100), 1.0);
        assert!((three_sigma_threshold(0.1, 10_000) - 0.109).abs() < 1e-12);
        let (lo, hi) = frequency_interval(0, 10);
        assert_eq!((lo, hi), (0.0, 0.0));
    }

    #[test]
    fn multinomial_counts_sum() {
        let mut rng = rng::stream(1, "t");
        let mut counts = [0u64; 4];
        for n in [0, 1, 17, 1000] {
            sample_multinomial(&mut rng, n, &[0.1, 0.2, 0.3, 0.4], &mut counts);
            assert_eq!(counts.iter().sum::<u64>(), n);
        }
    }

    #[test]
    fn flat_model_has_zero_gaps() {
        let (flat, gb) = flat_model(&FlatRunConfig::default()).unwrap();
        let fgb = mdp::solve_gain_bias(&flat, 1e-12).unwrap();
        assert!((fgb.gain - gb.gain).abs() < 1e-9);
        for s in 0..flat.n_states() {
            for a in 0..flat.n_actions() {
                assert!(mdp::optimal_gap(&flat, &gb, s, a).unwrap().abs() < 1e-9);
            }
        }
    }

    #[test]
    fn doubling_suite_passes() {
        let r = doubling_suite(50, 3).unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(r.checks.len(), 4);
    }
}
