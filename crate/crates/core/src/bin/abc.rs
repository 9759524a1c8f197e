use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use abc_smc::cli::{cmd_bench, cmd_run, cmd_validate, Overrides};

/// ABC SMC inference engine with adaptive perturbation kernels.
#[derive(Parser)]
#[command(name = "abc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Override the config file's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the number of proposal-evaluation workers.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Override the output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one ABC SMC run and write generations.csv + posterior.csv.
    Run { config: PathBuf },
    /// Run repeats of every kernel in kernel_list and write bench.csv.
    Bench { config: PathBuf },
    /// Check a config file and print the effective settings.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        workers: cli.workers,
        output_dir: cli.output_dir,
    };
    let code = match &cli.command {
        Command::Run { config } => cmd_run(config, &overrides),
        Command::Bench { config } => cmd_bench(config, &overrides),
        Command::Validate { config } => cmd_validate(config, &overrides),
    };
    ExitCode::from(code as u8)
}
