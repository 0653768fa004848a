//! `rtpr`: fit, predict, simulate and diagnose robust process regressions.
//!
//! `RTPR_THREADS` sets the worker count for simulations.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rtpr::commands::{cmd_diagnose, cmd_fit, cmd_predict, cmd_simulate, parse_drop};
use rtpr::Error;

#[derive(Parser)]
#[command(name = "rtpr", version, about = "Robust process regression for batches of curves")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a curve dataset and write a JSON artifact.
    Fit {
        /// CSV with columns group,curve,x1..xp,y.
        #[arg(long)]
        data: PathBuf,
        /// TOML run config; defaults to gp-tp with fixed shapes.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Remove a curve before fitting, as group:curve. Repeatable.
        #[arg(long = "drop", value_name = "GROUP:CURVE")]
        drops: Vec<String>,
    },
    /// Predict latent curves from a fit artifact.
    Predict {
        #[arg(long)]
        fit: PathBuf,
        /// Query CSV (x1..xp with optional group column) or grid lo:hi:count.
        #[arg(long)]
        at: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a simulation config and write summary and per-replication tables.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Flag outlying curves from the noise effects of a fit artifact.
    Diagnose {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "rule-mult")]
        rule_mult: Option<f64>,
    },
}

fn threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("RTPR_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::input(format!("RTPR_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::input(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Error> {
    threads()?;
    match cli.command {
        Command::Fit {
            data,
            config,
            out,
            drops,
        } => {
            let drops = drops.iter().map(|d| parse_drop(d)).collect::<Result<Vec<_>, _>>()?;
            let a = cmd_fit(&data, config.as_deref(), &drops, &out)?;
            let d = &a.fit.diagnostics;
            eprintln!(
                "fit {}: m = {:.6}, {} outer iterations, converged = {}",
                a.fit.config.kind().name(),
                a.fit.m_value,
                d.outer_iterations,
                d.converged
            );
        }
        Command::Predict { fit, at, out } => {
            let t = cmd_predict(&fit, &at, &out)?;
            eprintln!("wrote {} predictions", t.rows.len());
        }
        Command::Simulate {
            config,
            out,
            seed,
            reps,
        } => {
            let t = cmd_simulate(&config, seed, reps, &out)?;
            eprintln!("wrote {} summary rows", t.summary.rows.len());
        }
        Command::Diagnose { fit, out, rule_mult } => {
            let t = cmd_diagnose(&fit, rule_mult, &out)?;
            let flagged = t.rows.iter().filter(|r| r[4] == "1").count();
            eprintln!("{flagged} of {} curves flagged", t.rows.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rtpr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
