//! `datareq`: run, validate and generate inputs for collection-policy sweeps.
//!
//! Exit status is 0 on success, 2 for configuration errors and 3 for I/O
//! errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use datareq::experiment::{run_experiment, synth_curve, ExperimentConfig, ExperimentError, SynthKind};

#[derive(Parser)]
#[command(name = "datareq", version, about = "Plan training-data collection against learning-curve oracles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of a sweep and write runs.csv, aggregate.csv and summary.json.
    Run { config: PathBuf },
    /// Check a sweep config and its curve file without running anything.
    Validate { config: PathBuf },
    /// Write a synthetic `size,score` curve file.
    Synth {
        #[arg(long, value_enum)]
        kind: Kind,
        /// Three comma-separated parameters.
        #[arg(long, value_parser = parse_theta, allow_hyphen_values = true)]
        theta: [f64; 3],
        #[arg(long, default_value_t = 50)]
        knots: usize,
        #[arg(long)]
        min: f64,
        #[arg(long)]
        max: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    /// θ0 q^θ1 + θ2
    PowerLaw,
    /// θ0 ln(q + θ1) + θ2
    Logarithmic,
}

fn parse_theta(s: &str) -> Result<[f64; 3], String> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<_, _>>()?;
    vals.try_into().map_err(|v: Vec<f64>| format!("expected 3 values, got {}", v.len()))
}

fn execute(command: Command) -> Result<(), ExperimentError> {
    match command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let outcome = run_experiment(&cfg)?;
            for (policy, horizon, m) in &outcome.aggregates {
                println!(
                    "{:<10} T={horizon} runs={} failure_rate={:.4} cost_ratio={}",
                    format!("{policy:?}").to_lowercase(),
                    m.runs,
                    m.failure_rate,
                    m.cost_ratio.map_or("n/a".into(), |c| format!("{c:.4}")),
                );
            }
            println!("reports written to {}", cfg.output_dir.display());
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            cfg.validate()?;
            let cells = datareq::experiment::cells(&cfg)?;
            println!("ok: {} runs", cells.len());
        }
        Command::Synth {
            kind,
            theta,
            knots,
            min,
            max,
            out,
        } => {
            let kind = match kind {
                Kind::PowerLaw => SynthKind::PowerLaw(theta),
                Kind::Logarithmic => SynthKind::Logarithmic(theta),
            };
            synth_curve(kind, knots, (min, max), &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
