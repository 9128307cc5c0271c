use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use branchkit::builtins;
use branchkit::config;
use branchkit::report::{self, ErrorRecord};
use branchkit::runner;

#[derive(Parser)]
#[command(
    name = "branchkit",
    about = "Trace and classify global solution branches of parameter-dependent nonlinear systems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured traces and write branch, event, classification,
    /// balance, and summary files.
    Run {
        /// Path to a key = value config file.
        config: PathBuf,
        /// Output directory (overrides the config's `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for randomized oracle checks (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Step budget per trace (overrides the config).
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Run the oracle verification suite and write verify.json.
    Verify {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List the built-in calibration systems.
    ListBuiltins,
}

fn load_config(
    path: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    max_steps: Option<usize>,
) -> branchkit::Result<(config::RunConfig, PathBuf)> {
    let mut cfg = config::load(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(ms) = max_steps {
        cfg.max_steps = ms;
    }
    let out_dir = out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out_dir))
}

fn record_error(out_dir: &Path, err: &branchkit::Error, context: &str) {
    if std::fs::create_dir_all(out_dir).is_ok() {
        let _ = report::write_errors(
            out_dir,
            &[ErrorRecord {
                error: err.to_string(),
                context: context.to_string(),
            }],
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            max_steps,
        } => match load_config(&config, out, seed, max_steps) {
            Ok((cfg, out_dir)) => match runner::run(&cfg, &out_dir) {
                Ok(code) => code,
                Err(e @ branchkit::Error::Config(_)) => {
                    record_error(&out_dir, &e, "run");
                    eprintln!("error: {e}");
                    runner::EXIT_CONFIG
                }
                Err(e) => {
                    record_error(&out_dir, &e, "run");
                    eprintln!("error: {e}");
                    runner::EXIT_RUNTIME
                }
            },
            Err(e) => {
                eprintln!("error: {e}");
                runner::EXIT_CONFIG
            }
        },
        Command::Verify { config, out, seed } => match load_config(&config, out, seed, None) {
            Ok((cfg, out_dir)) => match runner::verify(&cfg, &out_dir) {
                Ok(code) => code,
                Err(e) => {
                    record_error(&out_dir, &e, "verify");
                    eprintln!("error: {e}");
                    runner::EXIT_RUNTIME
                }
            },
            Err(e) => {
                eprintln!("error: {e}");
                runner::EXIT_CONFIG
            }
        },
        Command::ListBuiltins => {
            for b in builtins::all() {
                println!("{:<10} {}", b.name, b.description);
            }
            runner::EXIT_OK
        }
    };
    ExitCode::from(code as u8)
}
