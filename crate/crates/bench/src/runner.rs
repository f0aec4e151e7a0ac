//! Experiment execution: RMFGP runs and baselines per (seed, N_H) cell.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use rmfgp::benchmarks::{
    curve_distance, generate_data, monte_carlo_truth, pure_save, relative_error, surrogate_profile, unit_grid,
    BenchmarkProblem, ProfileStats, REFERENCE_SAMPLES,
};
use rmfgp::data::{sample_uniform, Dataset};
use rmfgp::gp::{fit_gp, GpConfig};
use rmfgp::pipeline::{build_final_surrogate, run_loop, Flag, RmfgpConfig};
use rmfgp::sdr::{save_with, subspace_distance, Bic, SdrOptions};

use crate::config::{Baseline, ExperimentConfig};
use crate::error::BenchError;

const UP_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    RmfgpFlag0,
    Gp,
    RmfgpFlag1,
    GpSave,
    PureSave,
}

impl Method {
    /// Row order of the emitted tables.
    pub const TABLE_ROWS: [Method; 4] = [Method::RmfgpFlag0, Method::Gp, Method::RmfgpFlag1, Method::GpSave];

    pub fn key(self) -> &'static str {
        match self {
            Method::RmfgpFlag0 => "rmfgp_flag0",
            Method::Gp => "gp",
            Method::RmfgpFlag1 => "rmfgp_flag1",
            Method::GpSave => "gp_save",
            Method::PureSave => "pure_save",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::RmfgpFlag0 => "RMFGP flag=0",
            Method::Gp => "GP",
            Method::RmfgpFlag1 => "RMFGP flag=1",
            Method::GpSave => "GP-SAVE",
            Method::PureSave => "SAVE-10000",
        }
    }
}

/// One (method, seed, N_H) result. For `PureSave` the size is the sample count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub method: Method,
    pub seed: u64,
    pub n_high: usize,
    pub m: Option<f64>,
    pub relative_error: Option<f64>,
    pub mse: Option<f64>,
    pub d_hat: Option<usize>,
    /// SAVE ran with no more points than inputs.
    pub degenerate: bool,
}

/// BIC criterion of the final re-rotation SAVE of one loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicRecord {
    pub seed: u64,
    pub n_high: usize,
    pub bic: Bic,
}

/// Test-set predictions of the first-seed run at the plot size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub seed: u64,
    pub n_high: usize,
    pub exact: Vec<f64>,
    pub predictions: Vec<(Method, Vec<f64>)>,
    /// Test inputs projected on the flag-1 reduction, one vector per direction.
    pub projected: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpSeed {
    pub seed: u64,
    pub rmfgp: ProfileStats,
    pub baseline: ProfileStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpReport {
    pub n_high: usize,
    pub grid: Vec<f64>,
    pub truth: ProfileStats,
    pub per_seed: Vec<UpSeed>,
}

impl UpReport {
    /// Seed average of the RMFGP and baseline curves.
    pub fn averaged(&self) -> (ProfileStats, ProfileStats) {
        let avg = |pick: fn(&UpSeed) -> &ProfileStats| {
            let n = self.per_seed.len() as f64;
            let k = self.grid.len();
            let mut mean = vec![0.0; k];
            let mut std = vec![0.0; k];
            for s in &self.per_seed {
                let stats = pick(s);
                for j in 0..k {
                    mean[j] += stats.mean[j] / n;
                    std[j] += stats.std[j] / n;
                }
            }
            ProfileStats { mean, std }
        };
        (avg(|s| &s.rmfgp), avg(|s| &s.baseline))
    }

    /// L2 distances of the seed-averaged mean curves to the truth.
    pub fn mean_distances(&self) -> (f64, f64) {
        let (r, b) = self.averaged();
        (curve_distance(&r.mean, &self.truth.mean), curve_distance(&b.mean, &self.truth.mean))
    }

    /// Grid averages of the seed-averaged std curves.
    pub fn average_std(&self) -> (f64, f64) {
        let (r, b) = self.averaged();
        let k = self.grid.len() as f64;
        (r.std.iter().sum::<f64>() / k, b.std.iter().sum::<f64>() / k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub seed: u64,
    pub n_high: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub reference_d: usize,
    /// Criterion of the large-sample reference SAVE, when the subspace is not known.
    pub reference_bic: Option<Bic>,
    pub records: Vec<CellRecord>,
    pub bic: Vec<BicRecord>,
    pub plot: Option<PlotData>,
    pub up: Option<UpReport>,
    pub timing: Vec<Timing>,
}

impl ExperimentReport {
    pub fn record(&self, method: Method, seed: u64, n_high: usize) -> Option<&CellRecord> {
        self.records
            .iter()
            .find(|r| r.method == method && r.seed == seed && r.n_high == n_high)
    }

    /// Seed average of `metric` over the available records of a cell column.
    pub fn average(&self, method: Method, n_high: usize, metric: fn(&CellRecord) -> Option<f64>) -> Option<f64> {
        let values: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.method == method && r.n_high == n_high)
            .filter_map(metric)
            .collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Result of [`run_experiment`]: the report holds every completed cell even
/// when a later one failed.
#[derive(Debug)]
pub struct Outcome {
    pub report: ExperimentReport,
    pub failure: Option<BenchError>,
}

struct UpInputs {
    seed: u64,
    rmfgp: (DMatrix<f64>, DMatrix<f64>),
    baseline: (DMatrix<f64>, DMatrix<f64>),
}

fn mse(y: &DVector<f64>, pred: &DVector<f64>) -> f64 {
    (y - pred).norm_squared() / y.len() as f64
}

fn cell_seed(seed: u64, n_high: usize, salt: u64) -> u64 {
    seed.wrapping_mul(0x2545_f491_4f6c_dd1d)
        .wrapping_add((n_high as u64) << 16)
        .wrapping_add(salt)
}

/// Executes `config`. Configuration errors are returned directly; runtime
/// errors end the run and are reported in [`Outcome::failure`].
pub fn run_experiment(config: &ExperimentConfig) -> Result<Outcome, BenchError> {
    config.validate()?;
    let problem = config.problem()?;
    let reference = problem
        .reference_subspace()
        .map_err(BenchError::run(format!("{} reference subspace", problem.name)))?;
    let mut report = ExperimentReport {
        config: config.clone(),
        reference_d: reference.d,
        reference_bic: reference.bic.clone(),
        records: Vec::new(),
        bic: Vec::new(),
        plot: None,
        up: None,
        timing: Vec::new(),
    };
    let failure = execute(config, &problem, &reference.basis, &mut report).err();
    if let Some(e) = &failure {
        log::error!("run failed: {e}");
    }
    Ok(Outcome { report, failure })
}

fn execute(
    config: &ExperimentConfig,
    problem: &BenchmarkProblem,
    truth: &DMatrix<f64>,
    report: &mut ExperimentReport,
) -> Result<(), BenchError> {
    let d = truth.ncols();
    let mut up_inputs = Vec::new();
    for (seed_pos, &seed) in config.seeds.iter().enumerate() {
        if config.baselines.contains(&Baseline::PureSave) {
            let r = pure_save(problem, REFERENCE_SAMPLES, cell_seed(seed, REFERENCE_SAMPLES, 7))
                .map_err(BenchError::run(format!("pure SAVE, seed {seed}")))?;
            let m = subspace_distance(truth, &r.leading(d)).map_err(BenchError::run("pure SAVE distance"))?;
            report.records.push(CellRecord {
                method: Method::PureSave,
                seed,
                n_high: REFERENCE_SAMPLES,
                m: Some(m),
                relative_error: None,
                mse: None,
                d_hat: Some(d),
                degenerate: false,
            });
        }
        for &n_high in &config.n_high {
            let start = Instant::now();
            let ctx = |what: &str| format!("{what}, seed {seed}, N_H {n_high}");
            let data = generate_data(problem, config.n_low, n_high - config.acquired(), config.n_test, seed)
                .map_err(BenchError::run(ctx("data generation")))?;
            let rm_config = rmfgp_config(config, seed);
            let outcome = run_loop(&data.low, &data.split, &data.test, |r| problem.high(r), &rm_config)
                .map_err(BenchError::run(ctx("acquisition loop")))?;
            let test_x = data.test.x();
            let test_y = data.test.y();
            let score = |pred: &DVector<f64>| -> Result<(f64, f64), BenchError> {
                Ok((relative_error(test_y, pred).map_err(BenchError::run(ctx("relative error")))?, mse(test_y, pred)))
            };
            let plot_cell = seed_pos == 0 && config.plot_n_high == Some(n_high);
            let mut predictions = Vec::new();
            let mut projected = Vec::new();
            let mut up_rmfgp = None;
            let mut reduced_d = d;
            for &code in &config.flags {
                let flag = Flag::from_code(code).expect("validated flag");
                let result = build_final_surrogate(&outcome, flag, &rm_config)
                    .map_err(BenchError::run(ctx(&format!("final surrogate flag {code}"))))?;
                let pred = result
                    .surrogate
                    .predict_mean(test_x)
                    .map_err(BenchError::run(ctx("prediction")))?;
                let (e, err2) = score(&pred)?;
                let (method, estimate) = match flag {
                    Flag::Rotate => (Method::RmfgpFlag0, result.m1.columns(0, d).into_owned()),
                    Flag::Reduce => (Method::RmfgpFlag1, result.m.clone()),
                };
                let m = subspace_distance(truth, &estimate).map_err(BenchError::run(ctx("subspace distance")))?;
                if flag == Flag::Reduce {
                    report.bic.push(BicRecord {
                        seed,
                        n_high,
                        bic: result.bic.clone(),
                    });
                    if plot_cell {
                        let xd = test_x * &result.m;
                        projected = xd.column_iter().map(|c| c.iter().copied().collect()).collect();
                    }
                    up_rmfgp = Some((result.m.clone(), result.final_high.x().clone()));
                    reduced_d = result.m.ncols();
                }
                report.records.push(CellRecord {
                    method,
                    seed,
                    n_high,
                    m: Some(m),
                    relative_error: Some(e),
                    mse: Some(err2),
                    d_hat: result.d_hat,
                    degenerate: false,
                });
                predictions.push((method, pred.iter().copied().collect::<Vec<f64>>()));
            }
            let high = &outcome.final_high;
            if config.baselines.contains(&Baseline::Gp) {
                let gp = fit_gp(high.x(), high.y(), &baseline_gp(seed, n_high, 1))
                    .map_err(BenchError::run(ctx("GP baseline")))?;
                let pred = gp.predict_mean(test_x).map_err(BenchError::run(ctx("GP baseline prediction")))?;
                let (e, err2) = score(&pred)?;
                report.records.push(CellRecord {
                    method: Method::Gp,
                    seed,
                    n_high,
                    m: None,
                    relative_error: Some(e),
                    mse: Some(err2),
                    d_hat: None,
                    degenerate: false,
                });
                predictions.push((Method::Gp, pred.iter().copied().collect()));
            }
            // GP-SAVE keeps as many directions as the flag-1 reduction of the same cell
            if config.baselines.contains(&Baseline::GpSave) {
                let (record, pred, b) = baseline_gp_save(high, &data.test, truth, reduced_d, seed, config.slices)
                    .map_err(BenchError::run(ctx("GP-SAVE baseline")))?;
                report.records.push(record);
                predictions.push((Method::GpSave, pred.iter().copied().collect()));
                if let (Some(up), Some(rm)) = (&config.up, up_rmfgp.take()) {
                    if up.n_high == n_high {
                        up_inputs.push(UpInputs {
                            seed,
                            rmfgp: rm,
                            baseline: (b, high.x().clone()),
                        });
                    }
                }
            }
            if plot_cell {
                predictions.sort_by_key(|(m, _)| *m);
                report.plot = Some(PlotData {
                    seed,
                    n_high,
                    exact: test_y.iter().copied().collect(),
                    predictions,
                    projected,
                });
            }
            let seconds = start.elapsed().as_secs_f64();
            log::info!("{}: seed {seed}, N_H {n_high} done in {seconds:.1} s", problem.name);
            report.timing.push(Timing { seed, n_high, seconds });
        }
    }
    if let Some(up) = &config.up {
        report.up = Some(uncertainty_study(problem, up, &up_inputs)?);
    }
    Ok(())
}

/// Pipeline settings for one seed of `config`.
pub fn rmfgp_config(config: &ExperimentConfig, seed: u64) -> RmfgpConfig {
    let mut c = RmfgpConfig::default().with_batches(config.batch_sizes.clone());
    c.s = config.s;
    c.slices = config.slices;
    c.mf.n_mc = config.n_mc;
    c.sdr_samples = config.sdr_samples;
    c.with_seed(seed)
}

/// SAVE on the high-fidelity points alone, leading `d` directions, then a GP
/// on the reduced inputs. Returns the record (distance to `truth`, test
/// errors), the test predictions and the reduction matrix. With `N_H ≤ p` the
/// SAVE is underdetermined; it still runs and the record is marked degenerate.
pub fn baseline_gp_save(
    high: &Dataset<f64>,
    test: &Dataset<f64>,
    truth: &DMatrix<f64>,
    d: usize,
    seed: u64,
    slices: usize,
) -> rmfgp::Result<(CellRecord, DVector<f64>, DMatrix<f64>)> {
    let n_high = high.len();
    let degenerate = n_high <= high.dim();
    if degenerate {
        log::warn!("GP-SAVE: N_H = {n_high} does not exceed p = {}; SAVE is underdetermined", high.dim());
    }
    let opts = SdrOptions {
        slices,
        allow_underdetermined: true,
        ..SdrOptions::default()
    };
    let sdr = save_with(high.x(), high.y(), &opts)?;
    let b = sdr.leading(d);
    let gp = fit_gp(&(high.x() * &b), high.y(), &baseline_gp(seed, n_high, 2))?;
    let pred = gp.predict_mean(&(test.x() * &b))?;
    let record = CellRecord {
        method: Method::GpSave,
        seed,
        n_high,
        m: Some(subspace_distance(truth, &b)?),
        relative_error: Some(relative_error(test.y(), &pred)?),
        mse: Some(mse(test.y(), &pred)),
        d_hat: Some(d),
        degenerate: degenerate || sdr.degenerate_response,
    };
    Ok((record, pred, b))
}

/// GP settings of the baselines for one cell.
pub fn baseline_gp(seed: u64, n_high: usize, salt: u64) -> GpConfig {
    RmfgpConfig::default().final_gp.with_seed(cell_seed(seed, n_high, salt))
}

fn uncertainty_study(
    problem: &BenchmarkProblem,
    up: &crate::config::UpSettings,
    inputs: &[UpInputs],
) -> Result<UpReport, BenchError> {
    let grid = unit_grid(up.grid_points);
    let start = Instant::now();
    let truth = monte_carlo_truth(problem, &grid, up.n_truth, UP_SEED.wrapping_add(1))
        .map_err(BenchError::run("uncertainty propagation truth"))?;
    let xi: DMatrix<f64> =
        sample_uniform(up.n_xi, problem.p, UP_SEED.wrapping_add(2)).map_err(BenchError::run("uncertainty draws"))?;
    let mut per_seed = Vec::new();
    for input in inputs {
        let gp = GpConfig::default().with_restarts(3).with_seed(cell_seed(input.seed, up.n_high, 3));
        let profile = |(m, x): &(DMatrix<f64>, DMatrix<f64>)| surrogate_profile(problem, m, x, &xi, &grid, &gp);
        per_seed.push(UpSeed {
            seed: input.seed,
            rmfgp: profile(&input.rmfgp).map_err(BenchError::run(format!("RMFGP profile, seed {}", input.seed)))?,
            baseline: profile(&input.baseline)
                .map_err(BenchError::run(format!("GP-SAVE profile, seed {}", input.seed)))?,
        });
    }
    log::info!("{}: uncertainty propagation done in {:.1} s", problem.name, start.elapsed().as_secs_f64());
    Ok(UpReport {
        n_high: up.n_high,
        grid,
        truth,
        per_seed,
    })
}
