use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coupled_lqr::experiment::{self, Overrides};
use coupled_lqr::Error;

#[derive(Parser)]
#[command(name = "coupled-lqr", version, about = "Risk-aware LQR with temporally coupled state costs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to the config's `output.dir`, then `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the number of Monte Carlo trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (all cores by default).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            trials: self.trials,
            seed: self.seed,
            threads: self.threads,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Riccati recursion and write the controller.
    Synthesize(Common),
    /// Simulate the closed loop and write summary and interval CSVs.
    Simulate(Common),
    /// Evaluate a grid of (beta, k, lambda) and write the frontier CSV.
    Sweep(Common),
    /// Run the numerical self-checks and write a JSON report.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Controller file to check against the synthesized one.
        #[arg(long)]
        controller: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Json(_) => 2,
        _ => 3,
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Synthesize(c) => {
            let path = experiment::cmd_synthesize(&c.config, c.out.as_deref(), &c.overrides())?;
            println!("wrote {}", path.display());
            Ok(0)
        }
        Command::Simulate(c) => {
            let files = experiment::cmd_simulate(&c.config, c.out.as_deref(), &c.overrides())?;
            println!("wrote {}", files.summary.display());
            println!("wrote {}", files.intervals.display());
            if let Some(t) = files.trials {
                println!("wrote {}", t.display());
            }
            Ok(0)
        }
        Command::Sweep(c) => {
            let path = experiment::cmd_sweep(&c.config, c.out.as_deref(), &c.overrides())?;
            println!("wrote {}", path.display());
            Ok(0)
        }
        Command::Verify { common: c, controller } => {
            let (report, path) = experiment::cmd_verify(
                &c.config,
                c.out.as_deref(),
                controller.as_deref(),
                &c.overrides(),
            )?;
            for check in &report.checks {
                let tag = if check.passed { "PASS" } else { "FAIL" };
                println!("{tag} {} ({} <= {})", check.name, check.statistic, check.tolerance);
            }
            println!("wrote {}", path.display());
            Ok(if report.passed { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
