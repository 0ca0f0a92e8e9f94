//! `nonlocal`: config-driven runs of the nonlocal reaction-diffusion laboratory.

mod cases;
mod commands;
mod config;
mod error;
mod output;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::{Experiment, ExperimentConfig};
use crate::error::CliError;
use crate::output::{OutputDir, SCHEMA_VERSION};

#[derive(Parser)]
#[command(name = "nonlocal", version, about = "Spectra, dynamics and equilibria of u_t = Ku - hu + f(x, u)")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Validate inputs without computing.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Principal value, eigenfunction and sign criteria of K - h.
    Spectrum {
        /// Write the principal eigenfunction as `node,x,value` CSV.
        #[arg(long, value_name = "PATH")]
        emit_eigenfunction: Option<PathBuf>,
    },
    /// Evolve the initial state with the configured integrator.
    Evolve,
    /// Envelope and extremal equilibria.
    Equilibria,
    /// Seeded property suites.
    Verify {
        /// comparison | maximum_principle | supersolution | asymptotic | all
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Restrict sampled node counts (comma separated).
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    /// Bundled case study: logistic-sub, logistic-super, bistable, blowup, shift.
    Case {
        name: String,
        /// Parameter override `key=value`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn load(global: &Global) -> Result<Experiment, CliError> {
    let path = global
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("this subcommand needs --config PATH".into()))?;
    let (mut cfg, base) = ExperimentConfig::load(path)?;
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    cfg.build(&base)
}

fn out_dir(global: &Global, exp: Option<&Experiment>) -> PathBuf {
    global
        .out
        .clone()
        .or_else(|| exp.map(|e| e.config.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn dry_run(command: &str, detail: Value) -> Value {
    json!({ "schema_version": SCHEMA_VERSION, "command": command, "dry_run": true, "valid": true, "detail": detail })
}

fn experiment_summary(exp: &Experiment) -> Value {
    json!({
        "nodes": exp.op.len(),
        "symmetric": exp.op.kernel().is_symmetric(),
        "reaction": format!("{:?}", exp.reaction.kind()),
        "scheme": exp.integrator.scheme,
    })
}

fn run(cli: Cli) -> Result<(Value, bool), CliError> {
    let g = &cli.global;
    match cli.command {
        Command::Spectrum { emit_eigenfunction } => {
            let exp = load(g)?;
            if g.dry_run {
                return Ok((dry_run("spectrum", experiment_summary(&exp)), true));
            }
            let out = OutputDir::create(&out_dir(g, Some(&exp)))?;
            Ok((commands::spectrum(&exp, &out, emit_eigenfunction.as_deref())?, true))
        }
        Command::Evolve => {
            let exp = load(g)?;
            if g.dry_run {
                return Ok((dry_run("evolve", experiment_summary(&exp)), true));
            }
            let out = OutputDir::create(&out_dir(g, Some(&exp)))?;
            Ok((commands::evolve(&exp, &out)?, true))
        }
        Command::Equilibria => {
            let exp = load(g)?;
            if g.dry_run {
                return Ok((dry_run("equilibria", experiment_summary(&exp)), true));
            }
            let out = OutputDir::create(&out_dir(g, Some(&exp)))?;
            Ok((commands::equilibria(&exp, &out)?, true))
        }
        Command::Verify { suite, trials, sizes } => {
            let suites = commands::parse_suites(&suite)?;
            if trials == 0 {
                return Err(CliError::Config("--trials: must be at least 1".into()));
            }
            if sizes.as_ref().is_some_and(|s| s.is_empty() || s.contains(&0)) {
                return Err(CliError::Config("--sizes: node counts must be positive".into()));
            }
            let seed = match (g.seed, &g.config) {
                (Some(s), _) => s,
                (None, Some(p)) => ExperimentConfig::load(p)?.0.seed,
                (None, None) => 0,
            };
            if g.dry_run {
                return Ok((dry_run("verify", json!({ "suites": suites, "trials": trials, "seed": seed })), true));
            }
            let out = OutputDir::create(&out_dir(g, None))?;
            commands::verify(&suites, trials, seed, sizes, &out)
        }
        Command::Case { name, overrides } => {
            let params = cases::Params::new(&name, &overrides)?;
            let seed = g.seed.unwrap_or(0);
            if g.dry_run {
                return Ok((dry_run(&format!("case {name}"), params.as_json()), true));
            }
            let out = OutputDir::create(&out_dir(g, None))?;
            Ok((cases::run(&name, &params, seed, &out)?, true))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok((value, passed)) => {
            let text = serde_json::to_string_pretty(&value).expect("json value serializes");
            // A closed pipe (e.g. `| head`) is not an error of the run.
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            if passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: checks failed");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

