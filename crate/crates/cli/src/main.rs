use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coalsis_cli::commands::{self, allowed_keys};
use coalsis_cli::config::Config;

/// Importance-sampling experiments on coalescent sampling probabilities.
#[derive(Parser)]
#[command(name = "coalsis", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Likelihood estimates over a grid of mutation rates.
    Surface(RunArgs),
    /// Variance of normalised weights by remaining lineages.
    Varcurve(RunArgs),
    /// Mean truncated cost as the sample size grows.
    Costconv(RunArgs),
    /// Simulate data files.
    Makedata(RunArgs),
    /// Build and save a HUW ratio table.
    Huwtable {
        /// Driving mutation rate.
        #[arg(long)]
        theta: f64,
        /// Largest sample size covered.
        #[arg(long)]
        s_max: u32,
        /// Output file.
        #[arg(long, short)]
        out: PathBuf,
        /// Numerator factor: `carriers` (d - 1) or `biallelic` (1).
        #[arg(long, default_value = "carriers")]
        reading: String,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (`key = value` lines, starting with `version = 1`).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    /// Override a config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
}

fn load(name: &str, a: &RunArgs) -> coalsis::Result<Config> {
    let keys = allowed_keys(name);
    let mut cfg = Config::load(&a.config, &keys)?;
    for s in &a.set {
        cfg.set(s, &keys)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> coalsis::Result<()> {
    match cli.cmd {
        Cmd::Surface(a) => {
            let t = commands::surface(&load("surface", &a)?, &a.out, a.workers)?;
            println!("wrote {} rows to {}", t.rows.len(), a.out.join("surface.csv").display());
        }
        Cmd::Varcurve(a) => {
            let t = commands::varcurve(&load("varcurve", &a)?, &a.out, a.workers)?;
            println!("wrote {} rows to {}", t.rows.len(), a.out.join("varcurve.csv").display());
        }
        Cmd::Costconv(a) => {
            let t = commands::costconv(&load("costconv", &a)?, &a.out, a.workers)?;
            println!("wrote {} rows to {}", t.rows.len(), a.out.join("costconv.csv").display());
        }
        Cmd::Makedata(a) => {
            for p in commands::makedata(&load("makedata", &a)?, &a.out)? {
                println!("wrote {}", p.display());
            }
        }
        Cmd::Huwtable { theta, s_max, out, reading } => {
            commands::huwtable(theta, s_max, &reading, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
