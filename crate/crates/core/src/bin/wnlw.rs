use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wiener_nlw::runner::{describe, run, ExperimentConfig, RunError, RunOptions};

/// Experiment runner for the randomized quintic wave equation.
#[derive(Parser)]
#[command(name = "wnlw", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Parse and validate only; write nothing.
        #[arg(long)]
        validate_only: bool,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Print the resolved plan for a config.
    Describe { config: PathBuf },
}

fn fail(err: RunError) -> ExitCode {
    eprintln!("{}", err.to_json());
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match cli.command {
        Command::Run {
            config,
            validate_only,
            threads,
            output_dir,
        } => {
            let options = RunOptions {
                output_dir,
                threads,
                validate_only,
            };
            match run(&config, &options) {
                Ok(outcome) => {
                    match outcome.manifest {
                        Some(m) => println!(
                            "wrote {} files to {} (config hash {}, {} aborted)",
                            m.outputs.len() + 1,
                            outcome.output_dir.display(),
                            m.config_hash,
                            m.aborted_samples
                        ),
                        None => println!("config valid"),
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Describe { config } => match ExperimentConfig::load(&config).and_then(|c| describe(&c)) {
            Ok(plan) => {
                print!("{}", plan.render());
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
    }
}
