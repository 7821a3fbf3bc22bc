use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use switchlq::cli::{parse_config, run, Command, RunConfig};

#[derive(Parser)]
#[command(name = "switchlq", version, about = "Two-stage LQ control with an optimal switch time")]
struct Args {
    #[command(subcommand)]
    command: Cmd,

    /// TOML run configuration. The verify and certificate commands fall
    /// back to built-in examples without one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Number of Monte Carlo paths.
    #[arg(long, global = true)]
    paths: Option<usize>,

    /// Time steps for the Riccati solves and the simulation grid.
    #[arg(long, global = true)]
    steps: Option<usize>,

    /// Worker threads for path simulation; results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Solve the Riccati equations; writes p_stage2.csv (and p_stage1.csv
    /// when switch_time is set).
    Riccati,
    /// Tabulate phi(r) on the coarse grid; writes value_curve.csv.
    ValueCurve,
    /// Search for the optimal switch time; writes optimal_time.txt.
    OptimalTime,
    /// Monte Carlo run of the optimal feedback; writes sim_report.txt.
    Simulate,
    /// Compare the double-integrator example with its closed forms.
    VerifyExample43,
    /// Compare a scalar problem with its closed forms.
    #[command(name = "verify-1d")]
    Verify1d,
    /// Evaluate the bracket-sign certificate of a scalar problem.
    CheckNontrivial,
}

fn load(args: &Args) -> anyhow::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            parse_config(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => match args.command {
            Cmd::VerifyExample43 => RunConfig::example43(),
            Cmd::Verify1d | Cmd::CheckNontrivial => RunConfig::certificate_scenario(),
            _ => anyhow::bail!("--config is required for this command"),
        },
    };
    if let Some(dir) = &args.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(seed) = args.seed {
        cfg.simulation.seed = seed;
    }
    if let Some(paths) = args.paths {
        cfg.simulation.n_paths = paths;
    }
    if let Some(steps) = args.steps {
        cfg.numerics.n_steps = steps;
        cfg.simulation.n_steps = steps;
    }
    if args.workers.is_some() {
        cfg.simulation.workers = args.workers;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command = match args.command {
        Cmd::Riccati => Command::Riccati,
        Cmd::ValueCurve => Command::ValueCurve,
        Cmd::OptimalTime => Command::OptimalTime,
        Cmd::Simulate => Command::Simulate,
        Cmd::VerifyExample43 => Command::VerifyExample43,
        Cmd::Verify1d => Command::Verify1d,
        Cmd::CheckNontrivial => Command::CheckNontrivial,
    };
    let result = load(&args).and_then(|cfg| Ok(run(&cfg, command)?));
    match result {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            if !outcome.summary.ends_with('\n') {
                println!();
            }
            for f in &outcome.files {
                eprintln!("wrote {}", f.display());
            }
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("verification failed");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
