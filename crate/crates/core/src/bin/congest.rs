use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use congest_core::cli::{run_check, run_oracle, run_solve, EXIT_ERROR};
use congest_core::config::RunConfig;

/// Congested optimal transport: solve, verify, brute-force.
#[derive(Parser)]
#[command(name = "congest", version)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run Frank-Wolfe and write artifacts to the output directory.
    Solve {
        config: PathBuf,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the equilibrium conditions for a given path flow and plan.
    Check {
        config: PathBuf,
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// Overrides `check.tol`.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Brute-force optimum for tiny instances.
    Oracle { config: PathBuf },
}

fn run(args: Args) -> congest_core::Result<i32> {
    match args.command {
        Command::Solve { config, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(out) = out {
                cfg.output.dir = std::env::current_dir()?.join(out);
            }
            let outcome = run_solve(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&outcome.summary).expect("plain numbers"));
            Ok(outcome.summary.exit_code())
        }
        Command::Check { config, flow, plan, tol } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(tol) = tol {
                cfg.check.tol = tol;
            }
            let summary = run_check(&cfg, &flow, &plan)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("plain numbers"));
            Ok(summary.exit_code())
        }
        Command::Oracle { config } => {
            let summary = run_oracle(&RunConfig::load(&config)?)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("plain numbers"));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = std::env::var("CONGEST_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("CONGEST_THREADS ignored: {e}");
        }
    }
    let code = match run(Args::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    };
    ExitCode::from(code as u8)
}
