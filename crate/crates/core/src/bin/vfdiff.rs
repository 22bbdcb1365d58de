use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vfdiff::cli::{run, Command, RunOptions, THREADS_ENV};

#[derive(Parser)]
#[command(name = "vfdiff", version, about = "Volume-filling drift-diffusion experiments")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment config (TOML).
    #[arg(long, short, global = true, default_value = "experiment.toml")]
    config: PathBuf,
    /// Output directory.
    #[arg(long, short, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker thread cap; overrides the config.
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    plot: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Solve the deterministic problem; trajectory and flux CSVs.
    Solve,
    /// Evaluate the configured quantities of interest.
    Qoi,
    /// Perturbation ladder and optional growth fit.
    Stability,
    /// Monte Carlo QoI distributions.
    Mc,
    /// Wasserstein distance between the QoI laws of two models.
    Wasserstein,
    /// Nested distance between the scenario trees of two models.
    Nested,
    /// Conditional discrepancy against the conditional nested distance.
    Glue,
    /// Validate the hypotheses only.
    Check,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command = match args.command {
        Cmd::Solve => Command::Solve,
        Cmd::Qoi => Command::Qoi,
        Cmd::Stability => Command::Stability,
        Cmd::Mc => Command::Mc,
        Cmd::Wasserstein => Command::Wasserstein,
        Cmd::Nested => Command::Nested,
        Cmd::Glue => Command::Glue,
        Cmd::Check => Command::Check,
    };
    let opts = RunOptions { config: args.config, out: args.out, threads: args.threads, plot: args.plot };
    match run(command, &opts) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
