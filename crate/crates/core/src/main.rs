use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use obstacle_core::cli::{run, Command, Overrides, RunError};
use obstacle_core::config::load_config;
use obstacle_core::optimizer::Method;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    ViSolve,
    PenSolve,
    SweepDelta,
    Optimize,
    KktAudit,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::ViSolve => Command::ViSolve,
            Cmd::PenSolve => Command::PenSolve,
            Cmd::SweepDelta => Command::SweepDelta,
            Cmd::Optimize => Command::Optimize,
            Cmd::KktAudit => Command::KktAudit,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Gradient,
    FixedPoint,
}

/// Optimal control of the obstacle problem: VI and penalized solves,
/// penalty sweeps, obstacle optimization and optimality audits.
#[derive(Debug, Parser)]
#[command(name = "obstacle-opt", version)]
struct Args {
    command: Cmd,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: the config's `out`, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Penalty parameter(s), comma separated and strictly decreasing.
    #[arg(long, value_delimiter = ',')]
    delta: Option<Vec<f64>>,
}

fn fail(e: &RunError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let mut cfg = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => return fail(&e.into()),
    };
    let overrides = Overrides {
        method: args.method.map(|m| match m {
            MethodArg::Gradient => Method::Gradient,
            MethodArg::FixedPoint => Method::FixedPoint,
        }),
        delta: args.delta,
    };
    if let Err(e) = overrides.apply(&mut cfg) {
        return fail(&e.into());
    }
    let out = args
        .out
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    match run(&cfg, args.command.into(), &out) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => fail(&e),
    }
}
