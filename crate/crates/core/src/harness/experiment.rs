//! Config-driven experiment runner.
//!
//! Every seed writes `trace_seed<k>.csv` (for regret-producing agents) and
//! `diagnostics_seed<k>.json`; `summary.json` is written once all seeds
//! finish. Output bytes depend only on the config.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::envs::EnvSpec;
use crate::agents::{self, Diagnostics, DiameterEstimate, EbfSettings, RegretTrace};
use crate::confidence::{ConfidenceParams, DEFAULT_FEAS_TOL};
use crate::error::{Error, Result};
use crate::mdp::{self, Mdp};
use crate::planners::PlannerBudget;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Ebf,
    Ucrl2,
    Ld,
    EstimateH,
}

fn default_delta() -> f64 {
    0.05
}

fn default_feas_tol() -> f64 {
    DEFAULT_FEAS_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub name: AgentKind,
    /// Bound on the bias span. Omitted: `sp(h*) + 1` of the true model.
    #[serde(rename = "H", default)]
    pub h_bound: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub budget: PlannerBudget,
    #[serde(default = "default_feas_tol")]
    pub feas_tol: f64,
    #[serde(default)]
    pub include_gamma_in_hset: bool,
    /// Endpoints for the diameter learner; default `0` and `S - 1`.
    #[serde(default)]
    pub x: Option<usize>,
    #[serde(default)]
    pub y: Option<usize>,
}

fn default_output_dir() -> String {
    "results".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub agent: AgentSpec,
    pub horizon: u64,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn check(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if !(self.agent.delta > 0.0 && self.agent.delta < 1.0) {
            return Err(Error::Config(format!(
                "delta must lie in (0, 1), got {}",
                self.agent.delta
            )));
        }
        if let Some(h) = self.agent.h_bound {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config(format!("H must be positive, got {h}")));
            }
        }
        Ok(())
    }
}

/// Per-seed line of the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_regret: f64,
    pub episodes: usize,
    pub episode_bound_ok: bool,
    pub slope: Option<f64>,
    pub h_estimate: Option<f64>,
    pub diameter: Option<DiameterEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub env: EnvSpec,
    pub agent: AgentKind,
    pub horizon: u64,
    pub optimal_gain: f64,
    pub bias_span: f64,
    pub h_bound: Option<f64>,
    pub seeds: Vec<SeedSummary>,
    pub mean_final_regret: f64,
    /// Slope fitted to the seed-mean regret curve.
    pub mean_curve_slope: Option<f64>,
    pub episode_bound_violations: usize,
}

/// Least-squares slope of `ln max(regret_t, 1)` against `ln t` over
/// `t in [ceil(T / 10), T]`; `None` when fewer than two points or the final
/// regret is not positive.
pub fn loglog_slope(regrets: &[f64]) -> Option<f64> {
    let horizon = regrets.len();
    if horizon < 2 {
        return None;
    }
    let last = regrets[horizon - 1];
    if last.is_nan() || last <= 0.0 {
        return None;
    }
    let first = horizon.div_ceil(10).max(1);
    let n = (horizon - first + 1) as f64;
    if n < 2.0 {
        return None;
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for t in first..=horizon {
        sx += (t as f64).ln();
        sy += regrets[t - 1].max(1.0).ln();
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut cov, mut var) = (0.0, 0.0);
    for t in first..=horizon {
        let dx = (t as f64).ln() - mx;
        cov += dx * (regrets[t - 1].max(1.0).ln() - my);
        var += dx * dx;
    }
    Some(cov / var)
}

enum SeedOutput {
    Regret(RegretTrace, Diagnostics),
    Diameter(DiameterEstimate),
}

fn run_seed(cfg: &ExperimentConfig, mdp: &Mdp, h_default: f64, seed: u64) -> Result<SeedOutput> {
    let a = &cfg.agent;
    let settings = EbfSettings {
        budget: a.budget,
        feas_tol: a.feas_tol,
    };
    let ebf = |h: f64| -> Result<(RegretTrace, Diagnostics)> {
        let params = ConfidenceParams::new(h, a.delta, cfg.horizon.max(1))?.with_gamma_in_hset(a.include_gamma_in_hset);
        agents::run_ebf(mdp, &params, cfg.horizon, seed, &settings)
    };
    Ok(match a.name {
        AgentKind::Ebf => {
            let (trace, diag) = ebf(a.h_bound.unwrap_or(h_default))?;
            SeedOutput::Regret(trace, diag)
        }
        AgentKind::Ucrl2 => {
            let (trace, diag) = agents::run_ucrl2(mdp, a.delta, cfg.horizon, seed)?;
            SeedOutput::Regret(trace, diag)
        }
        AgentKind::EstimateH => {
            let (h_hat, _) = agents::estimate_h(mdp, cfg.horizon, a.delta, seed)?;
            let (trace, mut diag) = ebf(h_hat)?;
            diag.agent = "estimate_h".into();
            diag.h_estimate = Some(h_hat);
            SeedOutput::Regret(trace, diag)
        }
        AgentKind::Ld => {
            let x = a.x.unwrap_or(0);
            let y = a.y.unwrap_or(mdp.n_states().saturating_sub(1));
            SeedOutput::Diameter(agents::learn_diameter(mdp, x, y, cfg.horizon, a.delta, seed)?)
        }
    })
}

/// Runs every seed and writes the output files into `out` (or the config's
/// output directory).
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentSummary> {
    cfg.check()?;
    let mdp = cfg.env.build().map_err(|e| match e {
        Error::InvalidInput(m) => Error::Config(format!("environment: {m}")),
        Error::Io(io) => Error::Config(format!("environment: {io}")),
        other => other,
    })?;
    let gb = mdp::solve_gain_bias(&mdp, mdp::DEFAULT_TOL)?;
    if cfg.agent.name == AgentKind::Ld && mdp.n_states() < 2 {
        return Err(Error::Config("the diameter learner needs at least 2 states".into()));
    }
    let dir: PathBuf = out.map_or_else(|| PathBuf::from(&cfg.output_dir), Path::to_path_buf);
    fs::create_dir_all(&dir)?;

    let h_default = gb.span + 1.0;
    let outputs: Vec<Result<SeedOutput>> = cfg
        .seeds
        .par_iter()
        .map(|seed| run_seed(cfg, &mdp, h_default, *seed))
        .collect();

    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    let mut curves: Vec<Vec<f64>> = Vec::new();
    for (seed, output) in cfg.seeds.iter().zip(outputs) {
        match output? {
            SeedOutput::Regret(trace, diag) => {
                let mut file = fs::File::create(dir.join(format!("trace_seed{seed}.csv")))?;
                trace.write_csv(&mut file)?;
                fs::write(dir.join(format!("diagnostics_seed{seed}.json")), diag.to_json()? + "\n")?;
                let regrets = trace.regrets();
                seeds.push(SeedSummary {
                    seed: *seed,
                    final_regret: trace.final_regret(),
                    episodes: diag.episodes,
                    episode_bound_ok: diag.episode_bound_ok,
                    slope: loglog_slope(&regrets),
                    h_estimate: diag.h_estimate,
                    diameter: None,
                });
                curves.push(regrets);
            }
            SeedOutput::Diameter(est) => {
                fs::write(
                    dir.join(format!("diagnostics_seed{seed}.json")),
                    serde_json::to_string_pretty(&est)? + "\n",
                )?;
                seeds.push(SeedSummary {
                    seed: *seed,
                    final_regret: 0.0,
                    episodes: 0,
                    episode_bound_ok: true,
                    slope: None,
                    h_estimate: None,
                    diameter: Some(est),
                });
            }
        }
    }

    let mean_curve: Vec<f64> = match curves.first() {
        Some(first) => (0..first.len())
            .map(|t| curves.iter().map(|c| c[t]).sum::<f64>() / curves.len() as f64)
            .collect(),
        None => Vec::new(),
    };
    let summary = ExperimentSummary {
        env: cfg.env.clone(),
        agent: cfg.agent.name,
        horizon: cfg.horizon,
        optimal_gain: gb.gain,
        bias_span: gb.span,
        h_bound: match cfg.agent.name {
            AgentKind::Ebf => Some(cfg.agent.h_bound.unwrap_or(h_default)),
            _ => None,
        },
        mean_final_regret: seeds.iter().map(|s| s.final_regret).sum::<f64>() / seeds.len() as f64,
        mean_curve_slope: loglog_slope(&mean_curve),
        episode_bound_violations: seeds.iter().filter(|s| !s.episode_bound_ok).count(),
        seeds,
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}
