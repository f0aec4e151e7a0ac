//! Benchmark runner for the rotated multi-fidelity GP pipeline: experiment
//! configuration, execution with baselines, and CSV/manifest emission.

pub mod config;
pub mod error;
pub mod output;
pub mod runner;

pub use config::{Baseline, ExperimentConfig};
pub use error::BenchError;
pub use runner::{run_experiment, ExperimentReport, Method, Outcome};

use std::path::{Path, PathBuf};

/// Environment variable naming the output root when `--out` is absent.
pub const OUT_ENV: &str = "RMFGP_OUT";

/// Directory receiving the files of `config`: `<root>/<problem>`.
pub fn output_dir(config: &ExperimentConfig, root: Option<&Path>) -> PathBuf {
    let root = root
        .map(Path::to_path_buf)
        .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"));
    root.join(&config.problem)
}

/// Runs `config` and writes its report under `dir`. A runtime failure still
/// writes the completed cells and a failure record before returning the error.
pub fn run_and_write(config: &ExperimentConfig, dir: &Path) -> Result<ExperimentReport, BenchError> {
    let Outcome { report, failure } = run_experiment(config)?;
    output::write_report(&report, dir, failure.as_ref())?;
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
