use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use riccilab::runner::{list_experiments, replay, run_experiment, ExperimentConfig, RunStatus};
use riccilab::Error;

/// Environment variable overriding the worker thread count.
const THREADS_VAR: &str = "RICCILAB_THREADS";

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "riccilab", version, about = "Run Ricci flow and metric-flow experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// List registered experiment ids.
    ListExperiments,
    /// Parse and range-check a config without computing anything.
    Validate { config: PathBuf },
    /// Rerun a manifest's config and compare artifact checksums.
    Replay {
        manifest: PathBuf,
        /// Where to write the rerun (default: replay/ next to the manifest).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_for(e: &Error) -> ExitCode {
    let code = if e.is_validation() || matches!(e, Error::Io(_)) { EXIT_VALIDATION } else { EXIT_NUMERIC };
    ExitCode::from(code)
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    exit_for(&e)
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| format!("{THREADS_VAR}={v} is not a thread count"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_VALIDATION);
    }
    match cli.command {
        Command::ListExperiments => {
            for e in list_experiments() {
                println!("{:<24} {}", e.id, e.summary);
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            match cfg.validate() {
                Ok(_) => {
                    println!("valid: {} (config hash {})", cfg.experiment, cfg.hash());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Run { config } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            match run_experiment(&cfg) {
                Ok(m) => {
                    for a in &m.artifacts {
                        println!("{}  {}", a.sha256, cfg.output_dir.join(&a.path).display());
                    }
                    match &m.status {
                        RunStatus::Completed => {
                            println!("completed in {:.2} s", m.wall_clock_seconds);
                            ExitCode::SUCCESS
                        }
                        RunStatus::Failed { stage, message } => {
                            eprintln!("error: stage `{stage}` failed: {message}");
                            ExitCode::from(EXIT_NUMERIC)
                        }
                    }
                }
                Err(e) => fail(e),
            }
        }
        Command::Replay { manifest, out } => match replay(&manifest, out) {
            Ok(r) => {
                for p in &r.matching {
                    println!("same     {p}");
                }
                for p in &r.differing {
                    println!("differs  {p}");
                }
                if r.identical() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(EXIT_NUMERIC)
                }
            }
            Err(e) => fail(e),
        },
    }
}
