use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use trapsim_cli::{catalog, execute, load_config, CliError, RunOptions};

#[derive(Parser)]
#[command(name = "trapsim", version, about = "Random walks among Poisson traps: experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config file or `builtin:<id>`.
    Run {
        config: String,
        /// Worker threads (defaults to the available cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Leave host-dependent fields out of the manifest.
        #[arg(long)]
        strict: bool,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the built-in experiment catalog as JSON.
    List,
    /// Print version information.
    Version,
}

fn run(config: &str, workers: Option<usize>, strict: bool, out: Option<PathBuf>) -> Result<u8, CliError> {
    let cfg = load_config(config)?;
    let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(CliError::Workers(0, "must be >= 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| CliError::Workers(workers, e.to_string()))?;
    let summary = execute(&cfg, &RunOptions { out, strict, workers })?;
    for c in &summary.outcome.checks {
        println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("wrote {}", summary.out_dir.display());
    Ok(summary.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            workers,
            strict,
            out,
        } => match run(&config, workers, strict, out) {
            Ok(code) => ExitCode::from(code),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
        Command::List => {
            println!("{}", serde_json::to_string_pretty(&catalog::catalog()).expect("catalog serializes"));
            ExitCode::SUCCESS
        }
        Command::Version => {
            println!("trapsim {} (config schema {})", env!("CARGO_PKG_VERSION"), trapsim_cli::config::SCHEMA_VERSION);
            ExitCode::SUCCESS
        }
    }
}
