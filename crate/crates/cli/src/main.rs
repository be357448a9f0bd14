//! `ebf` command-line front end.
//!
//! Exit codes: 0 success, 1 a check failed (or a run could not finish),
//! 2 bad configuration or input.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ebf_core::harness::counterexample::counterexample_mc;
use ebf_core::harness::{run_experiment, validate, ExperimentConfig};
use ebf_core::{mdp, Error, Mdp};

#[derive(Parser)]
#[command(name = "ebf", version, about = "Optimistic average-reward RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a validation suite: lemma1 (arrival-segment sums), lemmaB5 (partial sums),
    /// coverage, counterexample, doubling or all.
    Validate {
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Monte-Carlo estimate of the L1 deviation of an empirical uniform distribution.
    Counterexample {
        #[arg(long)]
        states: usize,
        #[arg(long)]
        draws: u64,
        #[arg(long)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Solve a known MDP: optimal gain, bias, span and diameter.
    Solve {
        #[arg(long)]
        mdp: PathBuf,
    },
}

enum Outcome {
    Ok,
    CheckFailed,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidInput(_) | Error::Json(_) | Error::Io(_) | Error::Csv(_) => 2,
        Error::NonConvergence { .. } | Error::DiameterLearning(_) => 1,
    }
}

fn run(cli: Cli) -> Result<Outcome, Error> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let summary = run_experiment(&cfg, out.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if summary.episode_bound_violations > 0 {
                eprintln!(
                    "episode-count bound violated in {} seed(s)",
                    summary.episode_bound_violations
                );
                return Ok(Outcome::CheckFailed);
            }
            Ok(Outcome::Ok)
        }
        Command::Validate { suite, seed } => {
            let report = validate(&suite, seed)?;
            print!("{report}");
            Ok(if report.passed() {
                Outcome::Ok
            } else {
                Outcome::CheckFailed
            })
        }
        Command::Counterexample {
            states,
            draws,
            trials,
            seed,
        } => {
            let r = counterexample_mc(states, draws, trials, seed)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            if r.mean > r.claimed_bound {
                println!("mean {:.4} exceeds the claimed bound {:.4}", r.mean, r.claimed_bound);
                Ok(Outcome::Ok)
            } else {
                println!(
                    "mean {:.4} does not exceed the claimed bound {:.4}",
                    r.mean, r.claimed_bound
                );
                Ok(Outcome::CheckFailed)
            }
        }
        Command::Solve { mdp: path } => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let model = Mdp::from_json(&text)?;
            let gb = mdp::solve_gain_bias(&model, mdp::DEFAULT_TOL)?;
            println!("rho* = {}", gb.gain);
            println!("h* = {:?}", gb.bias);
            println!("sp(h*) = {}", gb.span);
            if mdp::is_communicating(&model) {
                println!("D = {}", mdp::diameter(&model, mdp::DEFAULT_TOL)?);
            } else {
                println!("D = inf (not communicating)");
            }
            Ok(Outcome::Ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
