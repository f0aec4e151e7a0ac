//! Experiment configuration: JSON ingestion, schema and validation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use rmfgp::benchmarks::{advection_problem, elliptic_problem, problem_by_name, BenchmarkProblem};

use crate::error::BenchError;

pub const SCHEMA_VERSION: u32 = 1;

/// Published JSON schema for [`ExperimentConfig`].
pub const SCHEMA: &str = include_str!("../schema/experiment.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Plain GP on the high-fidelity inputs.
    Gp,
    /// GP on inputs reduced by SAVE fitted to the high-fidelity data alone.
    GpSave,
    /// SAVE on a large exact sample; subspace distance only.
    PureSave,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpSettings {
    pub n_high: usize,
    pub grid_points: usize,
    pub n_xi: usize,
    pub n_truth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub problem: String,
    /// Advection speed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    /// Spatial query point (advection and elliptic).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    /// Advection time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub n_low: usize,
    pub n_test: usize,
    /// Final high-fidelity sizes; each is a separate run.
    pub n_high: Vec<usize>,
    /// Points added per acquisition iteration. A run ending at `N_H` starts
    /// from `N_H − Σ batch_sizes`.
    pub batch_sizes: Vec<usize>,
    pub flags: Vec<u8>,
    pub s: usize,
    pub slices: usize,
    pub n_mc: usize,
    pub sdr_samples: usize,
    pub seeds: Vec<u64>,
    pub baselines: Vec<Baseline>,
    /// `N_H` whose first-seed run feeds the correlation and prediction CSVs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot_n_high: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub up: Option<UpSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let config: Self = serde_json::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Default full-size study for `problem`.
    pub fn default_study(problem: &str) -> Result<Self, BenchError> {
        let (n_high, batch_sizes, up, plot) = match problem {
            "linear" => (vec![25, 30, 35, 40], vec![5, 5], None, 30),
            "nonlinear" => (vec![10, 15, 20, 25], vec![2, 3], None, 20),
            "advection" => (vec![20, 25, 30, 35], vec![5, 5], Some(35), 30),
            "elliptic" => (vec![20, 25, 30, 35], vec![2, 3], Some(35), 25),
            other => return Err(BenchError::Config(format!("unknown problem {other:?}"))),
        };
        let config = Self {
            schema_version: SCHEMA_VERSION,
            problem: problem.to_string(),
            a: None,
            x: None,
            t: None,
            n_low: 200,
            n_test: 500,
            n_high,
            batch_sizes,
            flags: vec![0, 1],
            s: 3,
            slices: rmfgp::sdr::DEFAULT_SLICES,
            n_mc: rmfgp::multifidelity::DEFAULT_N_MC,
            sdr_samples: rmfgp::pipeline::DEFAULT_SDR_SAMPLES,
            seeds: vec![0, 1, 2, 3, 4],
            baselines: vec![Baseline::Gp, Baseline::GpSave, Baseline::PureSave],
            plot_n_high: Some(plot),
            up: up.map(|n_high| UpSettings {
                n_high,
                grid_points: 50,
                n_xi: 2000,
                n_truth: 100_000,
            }),
            output_dir: None,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn problem(&self) -> Result<BenchmarkProblem, BenchError> {
        let mut problem =
            problem_by_name(&self.problem).ok_or_else(|| BenchError::Config(format!("unknown problem {:?}", self.problem)))?;
        match self.problem.as_str() {
            "advection" => {
                problem = advection_problem(self.a.unwrap_or(1.0), self.x.unwrap_or(0.5), self.t.unwrap_or(1.0));
            }
            "elliptic" => problem = elliptic_problem(self.x.unwrap_or(0.7)),
            _ => {
                if self.a.is_some() || self.x.is_some() || self.t.is_some() {
                    return Err(BenchError::Config(format!("{} takes no a, x or t parameters", self.problem)));
                }
            }
        }
        Ok(problem)
    }

    /// Total points acquired by one run.
    pub fn acquired(&self) -> usize {
        self.batch_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |msg: String| Err(BenchError::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        let problem = self.problem()?;
        if self.problem == "elliptic" && self.a.is_some() || self.problem == "elliptic" && self.t.is_some() {
            return bad("elliptic takes only x".into());
        }
        if let Some(x) = self.x {
            if !(0.0..=1.0).contains(&x) {
                return bad(format!("x = {x} must lie in [0, 1]"));
            }
        }
        if self.n_high.is_empty() {
            return bad("n_high must list at least one size".into());
        }
        if self.batch_sizes.iter().any(|&b| b == 0) {
            return bad("batch sizes must be positive".into());
        }
        for &n in &self.n_high {
            let start = n.checked_sub(self.acquired()).unwrap_or(0);
            if start < 3 {
                return bad(format!("N_H = {n} leaves a start of {start} after acquiring {}; at least 3 needed", self.acquired()));
            }
            if n > self.n_low {
                return bad(format!("N_H = {n} exceeds N_L = {}; high-fidelity points must nest in the low-fidelity set", self.n_low));
            }
        }
        if self.n_test < 2 {
            return bad("n_test must be at least 2".into());
        }
        if self.flags.is_empty() || self.flags.iter().any(|&f| f > 1) {
            return bad("flags must be a non-empty subset of {0, 1}".into());
        }
        if self.flags.contains(&1) && !(2..problem.p).contains(&self.s) {
            return bad(format!("s = {} must satisfy 1 < s < p = {}", self.s, problem.p));
        }
        if self.slices < 2 {
            return bad("slices must be at least 2".into());
        }
        if self.n_mc == 0 {
            return bad("n_mc must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if let Some(n) = self.plot_n_high {
            if !self.n_high.contains(&n) {
                return bad(format!("plot_n_high {n} is not one of n_high"));
            }
        }
        if let Some(up) = &self.up {
            if !problem.has_profile() {
                return bad(format!("{} has no spatial profile for uncertainty propagation", problem.name));
            }
            if !self.n_high.contains(&up.n_high) {
                return bad(format!("up.n_high {} is not one of n_high", up.n_high));
            }
            if !self.flags.contains(&1) || !self.baselines.contains(&Baseline::GpSave) {
                return bad("uncertainty propagation needs flag 1 and the gp_save baseline".into());
            }
            if up.grid_points < 2 || up.n_xi < 2 || up.n_truth < 2 {
                return bad("up grid_points, n_xi and n_truth must be at least 2".into());
            }
        }
        Ok(())
    }

    /// Replaces the seed list.
    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Result<Self, BenchError> {
        self.seeds = seeds;
        self.validate()?;
        Ok(self)
    }
}
