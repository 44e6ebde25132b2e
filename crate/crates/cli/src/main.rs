use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use smp_cli::error::{EXIT_CHECK_FAILED, EXIT_PASS};
use smp_cli::{run, CliError, Command, Outcome};

#[derive(Parser)]
#[command(name = "smp", version, about = "Maximum-principle experiments for mean-field regime-switching control")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir` in the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Sub {
    /// Simulate the particle system and estimate the criterion.
    Simulate(Common),
    /// Solve the first- and second-order adjoint equations.
    Adjoint(Common),
    /// Run the configured optimality checks.
    Check(Common),
    /// Brute-force the coarse instance and compare with the MP candidate.
    Oracle(Common),
    /// Audit analytic partials against finite differences.
    ValidateModel(Common),
}

fn execute(command: Command, common: &Common) -> Result<Outcome, CliError> {
    let go = || run(command, &common.config, common.out.as_deref());
    #[cfg(feature = "parallel")]
    if let Some(threads) = common.threads {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| CliError::Config(format!("cannot build thread pool: {e}")))?;
        return pool.install(go);
    }
    go()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match &cli.command {
        Sub::Simulate(c) => (Command::Simulate, c),
        Sub::Adjoint(c) => (Command::Adjoint, c),
        Sub::Check(c) => (Command::Check, c),
        Sub::Oracle(c) => (Command::Oracle, c),
        Sub::ValidateModel(c) => (Command::ValidateModel, c),
    };
    let code = match execute(command, common) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            if !outcome.summary.ends_with('\n') {
                println!();
            }
            if outcome.passed {
                EXIT_PASS
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
