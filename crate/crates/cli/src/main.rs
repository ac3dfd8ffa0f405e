use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use num_complex::Complex64;
use qdde_cli::run::{configure_threads, parse_complex};
use qdde_cli::{run, Command, Format, RunConfig};

/// Solve, transform and certify a linear q-difference-differential Cauchy problem.
#[derive(Debug, Parser)]
#[command(name = "qdde", version)]
struct Cli {
    /// Pipeline stage to run.
    #[arg(value_enum)]
    command: Command,
    /// Problem file (JSON).
    #[arg(long)]
    problem: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Table format.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Override a problem field, e.g. `truncation.M=60` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Tolerance for the z-series tail of `evaluate`.
    #[arg(long)]
    tol: Option<f64>,
    /// Evaluation point `t` as `RE,IM`.
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    t: Option<Complex64>,
    /// Evaluation point `z` as `RE,IM`.
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    z: Option<Complex64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = RunConfig {
        problem_path: cli.problem,
        command: cli.command,
        out_path: cli.out,
        format: cli.format,
        overrides: cli.overrides,
        tol: cli.tol,
        t: cli.t,
        z: cli.z,
    };
    let result = configure_threads().and_then(|_| run(&cfg)).with_context(|| format!("qdde {:?} failed", cfg.command));
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
