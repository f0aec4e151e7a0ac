use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::kernel::{ArdKernelParams, Kernel};
use crate::data::seeded_rng;
use crate::error::{Error, Result};
use crate::linalg::jittered_cholesky;
use crate::optimize::{minimize_bounded, LbfgsOptions};
use crate::scalar::Scalar;

/// Kernel parameters plus the Gaussian observation-noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters<T: Scalar, K> {
    pub kernel: K,
    pub noise_variance: T,
}

/// How the observation noise is treated during fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseMode {
    /// Learned in log space, never below `floor`.
    Learned { floor: f64 },
    /// Held at the given value (0 for noise-free interpolation).
    Fixed(f64),
}

impl Default for NoiseMode {
    fn default() -> Self {
        NoiseMode::Learned { floor: 1e-8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpConfig {
    pub restarts: usize,
    pub seed: u64,
    /// Natural-scale bounds applied to every log-space parameter.
    pub bounds: (f64, f64),
    pub noise: NoiseMode,
    pub max_iters: usize,
    /// Subtract the training mean of `y` before fitting (zero-mean prior).
    pub center: bool,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            seed: 0,
            bounds: (1e-6, 1e6),
            noise: NoiseMode::default(),
            max_iters: 200,
            center: true,
        }
    }
}

impl GpConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn with_noise(mut self, noise: NoiseMode) -> Self {
        self.noise = noise;
        self
    }

    fn learns_noise(&self) -> bool {
        matches!(self.noise, NoiseMode::Learned { .. })
    }

    fn noise_bounds<T: Scalar>(&self) -> (T, T) {
        match self.noise {
            NoiseMode::Learned { floor } => (T::lit(floor.ln()), T::lit(self.bounds.1.ln())),
            NoiseMode::Fixed(v) => {
                let l = T::lit(v.max(1e-300).ln());
                (l, l)
            }
        }
    }
}

/// Marginal log-likelihood, its gradient over `[kernel params…, ln σ_n²]`,
/// and the jitter that the factorization needed.
#[derive(Debug, Clone)]
pub struct LmlEval<T: Scalar> {
    pub value: T,
    pub gradient: DVector<T>,
    pub jitter: T,
}

fn check_xy<T: Scalar>(x: &DMatrix<T>, y: &DVector<T>, dim: usize) -> Result<()> {
    if x.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: x.ncols(),
        });
    }
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    Ok(())
}

fn noisy_gram<T: Scalar, K: Kernel<T>>(hyper: &Hyperparameters<T, K>, x: &DMatrix<T>) -> DMatrix<T> {
    let mut k = hyper.kernel.gram(x);
    for i in 0..k.nrows() {
        k[(i, i)] += hyper.noise_variance;
    }
    k
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `−½ log|K̃| − ½ yᵀK̃⁻¹y − (n/2) log 2π` with `K̃ = K + σ_n²I + jitter·I`.
pub fn log_marginal_likelihood<T: Scalar, K: Kernel<T>>(
    x: &DMatrix<T>,
    y: &DVector<T>,
    hyper: &Hyperparameters<T, K>,
) -> Result<T> {
    check_xy(x, y, hyper.kernel.input_dim())?;
    let chol = jittered_cholesky(&noisy_gram(hyper, x))?;
    let alpha = chol.factor.solve(y);
    let logdet_half: T = chol.factor.l_dirty().diagonal().iter().map(|d| d.ln()).fold(T::zero(), |a, b| a + b);
    Ok(-T::lit(0.5) * y.dot(&alpha) - logdet_half - T::count(y.len()) * T::lit(HALF_LN_2PI))
}

/// Value and analytic gradient of the marginal log-likelihood.
pub fn lml_with_gradient<T: Scalar, K: Kernel<T>>(
    x: &DMatrix<T>,
    y: &DVector<T>,
    hyper: &Hyperparameters<T, K>,
) -> Result<LmlEval<T>> {
    check_xy(x, y, hyper.kernel.input_dim())?;
    let n = y.len();
    let chol = jittered_cholesky(&noisy_gram(hyper, x))?;
    let alpha = chol.factor.solve(y);
    let logdet_half: T = chol.factor.l_dirty().diagonal().iter().map(|d| d.ln()).fold(T::zero(), |a, b| a + b);
    let value = -T::lit(0.5) * y.dot(&alpha) - logdet_half - T::count(n) * T::lit(HALF_LN_2PI);

    // ∂L/∂θ = ½ tr((ααᵀ − K̃⁻¹) ∂K̃/∂θ)
    let mut q = chol.factor.inverse();
    q.neg_mut();
    q.ger(T::one(), &alpha, &alpha, T::one());
    let half = T::lit(0.5);
    let kg = hyper.kernel.grad_contract(x, &q) * half;
    let np = kg.len();
    let mut gradient = DVector::zeros(np + 1);
    gradient.rows_mut(0, np).copy_from(&kg);
    gradient[np] = half * hyper.noise_variance * q.trace();
    Ok(LmlEval {
        value,
        gradient,
        jitter: chol.jitter,
    })
}

/// Gradient of the marginal log-likelihood over `[kernel params…, ln σ_n²]`.
pub fn lml_gradient<T: Scalar, K: Kernel<T>>(
    x: &DMatrix<T>,
    y: &DVector<T>,
    hyper: &Hyperparameters<T, K>,
) -> Result<DVector<T>> {
    Ok(lml_with_gradient(x, y, hyper)?.gradient)
}

/// Fitted zero-mean GP; immutable once built.
#[derive(Debug, Clone)]
pub struct GpModel<T: Scalar, K = ArdKernelParams<T>> {
    train_x: DMatrix<T>,
    train_y: DVector<T>,
    hyper: Hyperparameters<T, K>,
    y_offset: T,
    jitter: T,
    chol_l: DMatrix<T>,
    alpha: DVector<T>,
    lml: T,
}

/// JSON-friendly summary of a fitted model for run manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpManifest<K> {
    pub kernel: K,
    pub noise_variance: f64,
    pub jitter: f64,
    pub y_offset: f64,
    pub n_train: usize,
    pub input_dim: usize,
    pub log_marginal_likelihood: f64,
}

impl<T: Scalar, K: Kernel<T>> GpModel<T, K> {
    /// Conditions the GP on `(x, y)` with fixed hyperparameters.
    pub fn condition(x: DMatrix<T>, y: DVector<T>, hyper: Hyperparameters<T, K>, center: bool) -> Result<Self> {
        check_xy(&x, &y, hyper.kernel.input_dim())?;
        if x.nrows() == 0 {
            return Err(Error::InvalidArgument("cannot condition on zero points".into()));
        }
        let y_offset = if center { y.mean() } else { T::zero() };
        let yc = y.add_scalar(-y_offset);
        let chol = jittered_cholesky(&noisy_gram(&hyper, &x))?;
        let alpha = chol.factor.solve(&yc);
        let chol_l = chol.factor.l();
        let logdet_half: T = chol_l.diagonal().iter().map(|d| d.ln()).fold(T::zero(), |a, b| a + b);
        let lml = -T::lit(0.5) * yc.dot(&alpha) - logdet_half - T::count(yc.len()) * T::lit(HALF_LN_2PI);
        Ok(Self {
            train_x: x,
            train_y: y,
            hyper,
            y_offset,
            jitter: chol.jitter,
            chol_l,
            alpha,
            lml,
        })
    }

    pub fn train_x(&self) -> &DMatrix<T> {
        &self.train_x
    }

    pub fn train_y(&self) -> &DVector<T> {
        &self.train_y
    }

    pub fn hyperparameters(&self) -> &Hyperparameters<T, K> {
        &self.hyper
    }

    pub fn kernel(&self) -> &K {
        &self.hyper.kernel
    }

    pub fn noise_variance(&self) -> T {
        self.hyper.noise_variance
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn y_offset(&self) -> T {
        self.y_offset
    }

    pub fn chol_l(&self) -> &DMatrix<T> {
        &self.chol_l
    }

    pub fn alpha(&self) -> &DVector<T> {
        &self.alpha
    }

    /// Marginal log-likelihood of the (centered) training data.
    pub fn log_marginal_likelihood(&self) -> T {
        self.lml
    }

    pub fn input_dim(&self) -> usize {
        self.train_x.ncols()
    }

    /// Posterior mean and variance of the latent function at each row of `xstar`.
    pub fn predict(&self, xstar: &DMatrix<T>) -> Result<(DVector<T>, DVector<T>)> {
        let (mean, var) = self.predict_unclamped(xstar)?;
        Ok((mean, var.map(|v| v.max(T::zero()))))
    }

    /// As [`GpModel::predict`] but without clamping the variance at zero.
    pub fn predict_unclamped(&self, xstar: &DMatrix<T>) -> Result<(DVector<T>, DVector<T>)> {
        if xstar.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: xstar.ncols(),
            });
        }
        let kstar = self.hyper.kernel.cross(xstar, &self.train_x);
        let mean = (&kstar * &self.alpha).add_scalar(self.y_offset);
        let mut v = kstar.transpose();
        self.chol_l.solve_lower_triangular_mut(&mut v);
        let prior = self.hyper.kernel.diag(xstar);
        let var = DVector::from_fn(xstar.nrows(), |i, _| prior[i] - v.column(i).norm_squared());
        Ok((mean, var))
    }

    pub fn predict_mean(&self, xstar: &DMatrix<T>) -> Result<DVector<T>> {
        if xstar.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: xstar.ncols(),
            });
        }
        let kstar = self.hyper.kernel.cross(xstar, &self.train_x);
        Ok((&kstar * &self.alpha).add_scalar(self.y_offset))
    }
}

impl<T: Scalar, K: Kernel<T> + Serialize> GpModel<T, K> {
    pub fn manifest(&self) -> GpManifest<K> {
        GpManifest {
            kernel: self.hyper.kernel.clone(),
            noise_variance: self.hyper.noise_variance.as_f64(),
            jitter: self.jitter.as_f64(),
            y_offset: self.y_offset.as_f64(),
            n_train: self.train_x.nrows(),
            input_dim: self.train_x.ncols(),
            log_marginal_likelihood: self.lml.as_f64(),
        }
    }
}

/// Result of one hyperparameter ascent.
#[derive(Debug, Clone)]
pub struct Ascent<T: Scalar, K> {
    pub hyper: Hyperparameters<T, K>,
    pub lml: T,
    pub start_lml: T,
}

/// Maximizes the marginal log-likelihood over the parameters flagged in
/// `free` (layout `[kernel params…, ln σ_n²]`), starting from `start`.
///
/// `y` is used as given (no centering). Returns `None` when the likelihood
/// cannot be evaluated at the start.
pub fn ascend_lml<T: Scalar, K: Kernel<T>>(
    x: &DMatrix<T>,
    y: &DVector<T>,
    start: &Hyperparameters<T, K>,
    free: &[bool],
    config: &GpConfig,
    max_iters: usize,
) -> Option<Ascent<T, K>> {
    let np = start.kernel.n_params();
    assert_eq!(free.len(), np + 1, "free mask covers kernel params and noise");
    let mut full = DVector::zeros(np + 1);
    full.rows_mut(0, np).copy_from(&start.kernel.params());
    let noise_floor = match config.noise {
        NoiseMode::Learned { floor } => floor,
        NoiseMode::Fixed(v) => v,
    };
    full[np] = if config.learns_noise() {
        T::lit(start.noise_variance.as_f64().max(noise_floor).ln())
    } else {
        T::zero()
    };
    let mut all_bounds = start.kernel.bounds(config.bounds);
    all_bounds.push(config.noise_bounds());
    let learn_noise = config.learns_noise();
    let free_idx: Vec<usize> = (0..=np).filter(|&i| free[i] && (i < np || learn_noise)).collect();
    let bounds: Vec<(T, T)> = free_idx.iter().map(|&i| all_bounds[i]).collect();
    let x0 = DVector::from_iterator(
        free_idx.len(),
        free_idx.iter().map(|&i| {
            let (lo, hi) = all_bounds[i];
            full[i].max(lo).min(hi)
        }),
    );

    let fixed_noise = match config.noise {
        NoiseMode::Fixed(v) => Some(T::lit(v)),
        NoiseMode::Learned { .. } => None,
    };
    let build = |z: &DVector<T>| {
        let mut theta = full.clone();
        for (k, &i) in free_idx.iter().enumerate() {
            theta[i] = z[k];
        }
        let mut kernel = start.kernel.clone();
        kernel.set_params(&theta.as_slice()[..np]);
        let noise_variance = fixed_noise.unwrap_or_else(|| theta[np].exp());
        Hyperparameters { kernel, noise_variance }
    };

    let start_hyper = build(&x0);
    let start_lml = lml_with_gradient(x, y, &start_hyper).ok()?.value;
    if free_idx.is_empty() {
        return Some(Ascent {
            hyper: start_hyper,
            lml: start_lml,
            start_lml,
        });
    }
    let objective = |z: &DVector<T>| {
        let hyper = build(z);
        let eval = lml_with_gradient(x, y, &hyper).ok()?;
        let g = DVector::from_iterator(free_idx.len(), free_idx.iter().map(|&i| -eval.gradient[i]));
        Some((-eval.value, g))
    };
    let opts = LbfgsOptions {
        max_iters,
        ..Default::default()
    };
    let min = minimize_bounded(objective, &x0, &bounds, &opts)?;
    Some(Ascent {
        hyper: build(&min.x),
        lml: -min.value,
        start_lml,
    })
}

/// Multistart maximum-likelihood fit with an arbitrary kernel family.
///
/// `template` fixes the kernel's structure (dimensions, projection shape);
/// its parameter values are replaced by the seeded restart points.
pub fn fit_gp_with<T: Scalar, K: Kernel<T>>(
    x: &DMatrix<T>,
    y: &DVector<T>,
    template: &K,
    config: &GpConfig,
) -> Result<GpModel<T, K>> {
    check_xy(x, y, template.input_dim())?;
    if x.nrows() < 2 {
        return Err(Error::InvalidArgument("fit_gp needs at least 2 points".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("GP training data"));
    }
    let offset = if config.center { y.mean() } else { T::zero() };
    let yc = y.add_scalar(-offset);
    let y_var = if yc.len() > 1 {
        yc.norm_squared() / T::count(yc.len())
    } else {
        T::one()
    };
    let y_var = if y_var > T::lit(1e-12) { y_var } else { T::lit(1e-6) };

    let mut rng = seeded_rng(config.seed);
    let np = template.n_params();
    let free = vec![true; np + 1];
    let mut best: Option<Ascent<T, K>> = None;
    for restart in 0..config.restarts.max(1) {
        let theta = template.initial_params(x, y_var, restart, &mut rng);
        let mut kernel = template.clone();
        kernel.set_params(theta.as_slice());
        let noise_variance = match config.noise {
            NoiseMode::Fixed(v) => T::lit(v),
            NoiseMode::Learned { floor } => {
                let base = if restart == 0 {
                    1e-4
                } else {
                    use rand::Rng;
                    10f64.powf(rng.random_range(-6.0..-1.0))
                };
                T::lit((base * y_var.as_f64()).max(floor))
            }
        };
        let start = Hyperparameters { kernel, noise_variance };
        let Some(ascent) = ascend_lml(x, &yc, &start, &free, config, config.max_iters) else {
            log::debug!("restart {restart} failed to evaluate");
            continue;
        };
        // lowest restart index wins ties
        let better = match &best {
            None => true,
            Some(b) => ascent.lml > b.lml + T::lit(1e-12),
        };
        if better && ascent.lml.is_finite() {
            best = Some(ascent);
        }
    }
    let best = best.ok_or_else(|| Error::OptimizerFailure("every restart failed".into()))?;
    GpModel::condition(x.clone(), y.clone(), best.hyper, config.center)
}

/// Multistart ARD squared-exponential GP fit.
pub fn fit_gp<T: Scalar>(x: &DMatrix<T>, y: &DVector<T>, config: &GpConfig) -> Result<GpModel<T>> {
    if x.ncols() == 0 {
        return Err(Error::InvalidArgument("inputs need at least one column".into()));
    }
    let template = ArdKernelParams::isotropic(x.ncols(), T::one(), T::one());
    fit_gp_with(x, y, &template, config)
}
