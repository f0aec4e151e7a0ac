//! Two-level multi-fidelity fusion: the linear auto-regressive baseline and
//! the nonlinear NARGP stack.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{stream_rng, Dataset};
use crate::error::{Error, Result};
use crate::gp::{fit_gp, fit_gp_with, GpConfig, GpModel, Kernel, NargpKernel};
use crate::scalar::Scalar;

/// Default number of Monte Carlo samples through the level-1 posterior.
pub const DEFAULT_N_MC: usize = 100;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiFidelityConfig {
    pub low: GpConfig,
    pub high: GpConfig,
    pub n_mc: usize,
    /// Seed for prediction-time sampling.
    pub mc_seed: u64,
}

impl Default for MultiFidelityConfig {
    fn default() -> Self {
        Self {
            low: GpConfig::default().with_restarts(3),
            high: GpConfig::default().with_restarts(5),
            n_mc: DEFAULT_N_MC,
            mc_seed: 0,
        }
    }
}

impl MultiFidelityConfig {
    /// Derives distinct optimizer and sampling seeds from one base seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.low.seed = seed.wrapping_mul(3).wrapping_add(1);
        self.high.seed = seed.wrapping_mul(3).wrapping_add(2);
        self.mc_seed = seed.wrapping_mul(3).wrapping_add(3);
        self
    }
}

/// A fitted model giving predictive mean and variance at arbitrary inputs.
pub trait Surrogate<T: Scalar> {
    fn input_dim(&self) -> usize;
    fn predict(&self, x: &DMatrix<T>) -> Result<(DVector<T>, DVector<T>)>;
}

impl<T: Scalar, K: Kernel<T>> Surrogate<T> for GpModel<T, K> {
    fn input_dim(&self) -> usize {
        GpModel::input_dim(self)
    }

    fn predict(&self, x: &DMatrix<T>) -> Result<(DVector<T>, DVector<T>)> {
        GpModel::predict(self, x)
    }
}

fn check_pair<T: Scalar>(low: &Dataset<T>, high: &Dataset<T>) -> Result<()> {
    if low.dim() != high.dim() {
        return Err(Error::DimensionMismatch {
            expected: low.dim(),
            found: high.dim(),
        });
    }
    if high.len() < 3 {
        return Err(Error::TooFewPoints {
            n: high.len(),
            slices: 3,
        });
    }
    Ok(())
}

/// Index of the first high-fidelity row with no exact match among the low rows.
pub fn first_unnested<T: Scalar>(low: &DMatrix<T>, high: &DMatrix<T>) -> Option<usize> {
    (0..high.nrows()).find(|&i| !(0..low.nrows()).any(|j| low.row(j) == high.row(i)))
}

/// `y_H ≈ ρ·μ_L(x) + μ_δ + δ(x)` with `ρ, μ_δ` from least squares.
#[derive(Debug, Clone)]
pub struct LinearARModel<T: Scalar> {
    pub gp_low: GpModel<T>,
    pub rho: T,
    pub delta_mean: T,
    pub gp_delta: GpModel<T>,
}

pub fn fit_linear_ar<T: Scalar>(
    low: &Dataset<T>,
    high: &Dataset<T>,
    config: &MultiFidelityConfig,
) -> Result<LinearARModel<T>> {
    check_pair(low, high)?;
    if let Some(row) = first_unnested(low.x(), high.x()) {
        return Err(Error::NotNested { row });
    }
    let gp_low = fit_gp(low.x(), low.y(), &config.low)?;
    let mu = gp_low.predict_mean(high.x())?;
    let n = high.len();
    let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { mu[i] } else { T::one() });
    let (rho, delta_mean) = match design.clone().svd(true, true).solve(high.y(), T::lit(1e-12)) {
        Ok(coef) if coef.iter().all(|c| c.is_finite()) => (coef[0], coef[1]),
        _ => (T::zero(), high.y().mean()),
    };
    let residual = DVector::from_fn(n, |i, _| high.y()[i] - rho * mu[i] - delta_mean);
    let gp_delta = fit_gp(high.x(), &residual, &config.high)?;
    Ok(LinearARModel {
        gp_low,
        rho,
        delta_mean,
        gp_delta,
    })
}

impl<T: Scalar> Surrogate<T> for LinearARModel<T> {
    fn input_dim(&self) -> usize {
        self.gp_low.input_dim()
    }

    fn predict(&self, x: &DMatrix<T>) -> Result<(DVector<T>, DVector<T>)> {
        let (ml, vl) = self.gp_low.predict(x)?;
        let (md, vd) = self.gp_delta.predict(x)?;
        let rho2 = self.rho * self.rho;
        let mean = DVector::from_fn(x.nrows(), |i, _| self.rho * ml[i] + self.delta_mean + md[i]);
        let var = DVector::from_fn(x.nrows(), |i, _| rho2 * vl[i] + vd[i]);
        Ok((mean, var))
    }
}

/// Level-1 GP on low-fidelity data and a level-2 GP over `[x, μ_L(x)]`.
#[derive(Debug, Clone)]
pub struct NargpModel<T: Scalar> {
    pub gp_low: GpModel<T>,
    pub gp_high: GpModel<T, NargpKernel<T>>,
    pub n_mc: usize,
    pub mc_seed: u64,
}

impl<T: Scalar> NargpModel<T> {
    pub fn kernel_parts(&self) -> &NargpKernel<T> {
        self.gp_high.kernel()
    }

    /// Level-2 posterior with the level-1 mean plugged in, no sampling.
    pub fn predict_plugin(&self, x: &DMatrix<T>) -> Result<(DVector<T>, DVector<T>)> {
        let mu = self.gp_low.predict_mean(x)?;
        self.gp_high.predict(&augment(x, &mu))
    }
}

/// Appends `z` as a last column.
pub fn augment<T: Scalar>(x: &DMatrix<T>, z: &DVector<T>) -> DMatrix<T> {
    let p = x.ncols();
    let mut out = x.clone().insert_column(p, T::zero());
    out.set_column(p, z);
    out
}

pub fn fit_nargp<T: Scalar>(
    low: &Dataset<T>,
    high: &Dataset<T>,
    config: &MultiFidelityConfig,
) -> Result<NargpModel<T>> {
    check_pair(low, high)?;
    if config.n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    let gp_low = fit_gp(low.x(), low.y(), &config.low)?;
    let mu = gp_low.predict_mean(high.x())?;
    let xa = augment(high.x(), &mu);
    let gp_high = fit_gp_with(&xa, high.y(), &NargpKernel::new(low.dim()), &config.high)?;
    Ok(NargpModel {
        gp_low,
        gp_high,
        n_mc: config.n_mc,
        mc_seed: config.mc_seed,
    })
}

/// Monte Carlo prediction through the level-1 posterior.
///
/// Query `i` draws its `n_mc` samples from stream `i` of `seed`, so results
/// do not depend on how queries are batched. Mean and variance combine the
/// conditional moments by the law of total variance.
pub fn predict_nargp<T: Scalar>(
    model: &NargpModel<T>,
    xstar: &DMatrix<T>,
    n_mc: usize,
    seed: u64,
) -> Result<(DVector<T>, DVector<T>)> {
    let (mean, var) = propagate(model, xstar, n_mc, seed, true)?;
    Ok((mean, var.unwrap_or_default()))
}

/// The mean of [`predict_nargp`] alone, from the same samples.
pub fn predict_nargp_mean<T: Scalar>(model: &NargpModel<T>, xstar: &DMatrix<T>, n_mc: usize, seed: u64) -> Result<DVector<T>> {
    Ok(propagate(model, xstar, n_mc, seed, false)?.0)
}

fn propagate<T: Scalar>(
    model: &NargpModel<T>,
    xstar: &DMatrix<T>,
    n_mc: usize,
    seed: u64,
    with_variance: bool,
) -> Result<(DVector<T>, Option<DVector<T>>)> {
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    let p = model.gp_low.input_dim();
    if xstar.ncols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: xstar.ncols(),
        });
    }
    let (ml, vl) = model.gp_low.predict(xstar)?;
    let m = xstar.nrows();
    let mut mean = DVector::zeros(m);
    let mut var = DVector::zeros(if with_variance { m } else { 0 });
    let count = T::count(n_mc);
    let mut aug = DMatrix::zeros(n_mc, p + 1);
    for i in 0..m {
        let mut rng = stream_rng(seed, i as u64);
        let sd = vl[i].sqrt();
        for s in 0..n_mc {
            let eps: f64 = StandardNormal.sample(&mut rng);
            for j in 0..p {
                aug[(s, j)] = xstar[(i, j)];
            }
            aug[(s, p)] = ml[i] + sd * T::lit(eps);
        }
        if with_variance {
            let (cm, cv) = model.gp_high.predict(&aug)?;
            let mu = cm.sum() / count;
            let spread = cm.iter().map(|&c| (c - mu) * (c - mu)).fold(T::zero(), |a, b| a + b) / count;
            mean[i] = mu;
            var[i] = cv.sum() / count + spread;
        } else {
            mean[i] = model.gp_high.predict_mean(&aug)?.sum() / count;
        }
    }
    Ok((mean, with_variance.then_some(var)))
}

impl<T: Scalar> Surrogate<T> for NargpModel<T> {
    fn input_dim(&self) -> usize {
        self.gp_low.input_dim()
    }

    fn predict(&self, x: &DMatrix<T>) -> Result<(DVector<T>, DVector<T>)> {
        predict_nargp(self, x, self.n_mc, self.mc_seed)
    }
}
