use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kmconsensus_cli::error::{EXIT_OK, EXIT_RUNTIME};
use kmconsensus_cli::{cmd_montecarlo, cmd_oracle, cmd_run, cmd_sweep, cmd_validate, CliError, Overrides};

#[derive(Parser)]
#[command(name = "kmsolve", version, about = "Distributed linear equations over random graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `[output] dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Process seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Stopping tolerance on successive-iterate displacement.
    #[arg(long)]
    tol: Option<f64>,
    /// Worker threads for sweeps and Monte Carlo (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn overrides(&self, trials: Option<usize>) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            max_iters: self.max_iters,
            tol: self.tol,
            trials,
            jobs: self.jobs,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check step sizes, beta, weights, connectivity and graph recurrence.
    Validate(Common),
    /// Compute the limit point without iterating.
    Oracle(Common),
    /// Run one trajectory and write its diagnostics.
    Run(Common),
    /// Run the configured sweep grid.
    Sweep(Common),
    /// Mean-square error over independent trials.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
    },
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Validate(c) => {
            let report = cmd_validate(&c.config, &c.overrides(None))?;
            print!("{}", report.render());
            Ok(report.exit_code())
        }
        Command::Oracle(c) => {
            let art = cmd_oracle(&c.config, &c.overrides(None))?;
            println!("{}", serde_json::to_string_pretty(&art).expect("serializable"));
            Ok(EXIT_OK)
        }
        Command::Run(c) => {
            let out = cmd_run(&c.config, &c.overrides(None))?;
            println!("{}", serde_json::to_string_pretty(&out.summary).expect("serializable"));
            eprintln!("wrote {}", out.out_dir.display());
            Ok(if out.summary.verified { EXIT_OK } else { EXIT_RUNTIME })
        }
        Command::Sweep(c) => {
            let rows = cmd_sweep(&c.config, &c.overrides(None))?;
            for r in &rows {
                println!(
                    "cell {:>3} {:<10} beta={:<5} weighting={:<11} seed={:<6} err={:?} mse={:?}",
                    r.cell, r.kind, r.beta, r.weighting, r.seed, r.terminal_error, r.final_mse
                );
            }
            Ok(EXIT_OK)
        }
        Command::Montecarlo { common, trials } => {
            if let Some(j) = common.jobs {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(j)
                    .build_global()
                    .map_err(|e| CliError::Io(e.to_string()))?;
            }
            let (_, summary) = cmd_montecarlo(&common.config, &common.overrides(trials))?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
