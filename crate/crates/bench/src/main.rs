use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rmfgp_bench::{config::SCHEMA, output_dir, run_and_write, BenchError, ExperimentConfig, OUT_ENV};

#[derive(Parser)]
#[command(name = "rmfgp-bench", version, about = "Run rotated multi-fidelity GP benchmark studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a JSON config or a built-in problem default.
    Run {
        /// Experiment config (JSON).
        config: Option<PathBuf>,
        /// Use the default study of a problem: linear, nonlinear, advection or elliptic.
        #[arg(long, conflicts_with = "config")]
        problem: Option<String>,
        /// Comma-separated seeds replacing the config's list.
        #[arg(long, value_delimiter = ',')]
        seed_override: Option<Vec<u64>>,
        /// Output root; files go to <root>/<problem>.
        #[arg(long, env = OUT_ENV)]
        out: Option<PathBuf>,
    },
    /// Print the config JSON schema.
    Schema,
}

fn load(config: Option<PathBuf>, problem: Option<String>, seeds: Option<Vec<u64>>) -> Result<ExperimentConfig, BenchError> {
    let config = match (config, problem) {
        (Some(path), None) => ExperimentConfig::from_path(&path)?,
        (None, Some(name)) => ExperimentConfig::default_study(&name)?,
        _ => return Err(BenchError::Config("give a config file or --problem".into())),
    };
    match seeds {
        Some(seeds) => config.with_seeds(seeds),
        None => Ok(config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Schema => {
            println!("{SCHEMA}");
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            problem,
            seed_override,
            out,
        } => {
            let result = load(config, problem, seed_override).and_then(|c| {
                let dir = output_dir(&c, out.as_deref());
                log::info!("writing to {}", dir.display());
                run_and_write(&c, &dir).map(|_| dir)
            });
            match result {
                Ok(dir) => {
                    println!("{}", dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
