use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use persona_eval::cli::{
    cmd_report, cmd_run, validate_config, Clock, RunConfig, RunOptions, EXIT_INVALID, EXIT_OK,
    EXIT_PARTIAL,
};

#[derive(Parser)]
#[command(name = "persona-eval", version, about = "Persona-conditioned offensiveness evaluation")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the corpus, personas and backend settings without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Collect samples, estimate labels and write all analysis outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Only run these backend ids (repeatable).
        #[arg(long = "backend")]
        backends: Vec<String>,
        /// Continue the latest run with the same configuration.
        #[arg(long)]
        resume: bool,
        /// Override every backend's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory, replacing the configured one.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Re-render tables and plots from an existing run directory.
    Report {
        /// Run directory (e.g. runs/latest).
        run_dir: PathBuf,
        /// Where to write the report; defaults to <run_dir>/report.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let code = match Args::parse().command {
        Command::Validate { config } => validate(config),
        Command::Run {
            config,
            backends,
            resume,
            seed,
            output,
        } => {
            let opts = RunOptions {
                config_path: config,
                backends,
                resume,
                seed,
                output,
                clock: Clock::from_env(),
            };
            match cmd_run(&opts) {
                Ok(summary) => {
                    println!("{}", summary.run_dir.display());
                    if summary.manifest.complete {
                        EXIT_OK
                    } else {
                        eprintln!("run is partial; see failures.json under each backend");
                        EXIT_PARTIAL
                    }
                }
                Err(e) => fail(e),
            }
        }
        Command::Report { run_dir, output } => {
            let out = output.unwrap_or_else(|| run_dir.join("report"));
            match cmd_report(&run_dir, &out) {
                Ok(r) => {
                    println!("{}", r.out_dir.display());
                    EXIT_OK
                }
                Err(e) => fail(e),
            }
        }
    };
    ExitCode::from(code as u8)
}

fn validate(config: PathBuf) -> i32 {
    let cfg = match RunConfig::load(&config) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let report = validate_config(&cfg);
    for issue in &report.issues {
        eprintln!("error: {issue}");
    }
    if report.is_valid() {
        println!("{}: ok", config.display());
        EXIT_OK
    } else {
        EXIT_INVALID
    }
}

fn fail(e: persona_eval::cli::CliError) -> i32 {
    if let persona_eval::cli::CliError::Invalid(issues) = &e {
        for issue in issues {
            eprintln!("error: {issue}");
        }
    }
    eprintln!("error: {e}");
    e.exit_code()
}
