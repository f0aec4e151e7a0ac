//! GP dimension reduction with a learned linear projection inside the kernel.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{ascend_lml, fit_gp, ArdKernelParams, GpConfig, GpModel, Hyperparameters, Kernel, ProjectedKernel};
use crate::linalg::orthonormalize;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpdrConfig {
    /// Number of (φ, W) alternation rounds.
    pub alternations: usize,
    /// Iteration cap of the initial joint ascent.
    pub joint_iters: usize,
    /// Used for the initial fit, every phase, and the final refit.
    pub gp: GpConfig,
}

impl Default for GpdrConfig {
    fn default() -> Self {
        Self {
            alternations: 5,
            joint_iters: 50,
            gp: GpConfig::default().with_restarts(5),
        }
    }
}

/// Result of [`fit_projected_gp`].
#[derive(Debug, Clone)]
pub struct ProjectedFit<T: Scalar> {
    /// Optimized projection as found by the optimizer.
    pub w_raw: DMatrix<T>,
    /// Orthonormalized projection, `s × d`.
    pub w: DMatrix<T>,
    /// Kernel and noise at the end of the alternation.
    pub hyper: Hyperparameters<T, ProjectedKernel<T>>,
    /// GP refit on `X·w`.
    pub model: GpModel<T>,
    /// Marginal log-likelihood after initialization, the joint phase, and
    /// each φ and W phase in order.
    pub lml_trace: Vec<f64>,
}

/// `s × d` matrix holding the first `d` columns of the identity.
pub fn leading_identity<T: Scalar>(s: usize, d: usize) -> DMatrix<T> {
    DMatrix::identity(s, d)
}

/// Fits a GP whose kernel sees `Wᵀx`, learning `W` (`s × d`) by a short joint
/// ascent followed by alternating kernel-parameter and projection phases.
///
/// `a0` defaults to [`leading_identity`]; `theta0` (inner kernel parameters
/// and noise) defaults to a multistart fit on `X·a0`. A phase whose result
/// lowers the marginal likelihood is discarded.
pub fn fit_projected_gp<T: Scalar>(
    x: &DMatrix<T>,
    y: &DVector<T>,
    d: usize,
    a0: Option<&DMatrix<T>>,
    theta0: Option<Hyperparameters<T, ArdKernelParams<T>>>,
    config: &GpdrConfig,
) -> Result<ProjectedFit<T>> {
    let (n, s) = x.shape();
    if d == 0 || d > s {
        return Err(Error::InvalidArgument(format!("target dimension {d} must lie in 1..={s}")));
    }
    if n < s {
        return Err(Error::TooFewPoints { n, slices: s });
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if config.alternations == 0 {
        return Err(Error::InvalidArgument("at least one alternation is required".into()));
    }
    let a0 = match a0 {
        Some(a) if a.shape() != (s, d) => {
            return Err(Error::DimensionMismatch {
                expected: s * d,
                found: a.len(),
            })
        }
        Some(a) => a.clone(),
        None => leading_identity(s, d),
    };
    let theta0 = match theta0 {
        Some(t) => t,
        None => fit_gp(&(x * &a0), y, &config.gp)?.hyperparameters().clone(),
    };
    let offset = if config.gp.center { y.mean() } else { T::zero() };
    let yc = y.add_scalar(-offset);

    let kernel = ProjectedKernel::new(a0, theta0.kernel)?;
    let ni = kernel.n_inner();
    let np = kernel.n_params();
    let mut current = Hyperparameters {
        kernel,
        noise_variance: theta0.noise_variance,
    };
    let all = vec![true; np + 1];
    let phi: Vec<bool> = (0..=np).map(|i| i < ni || i == np).collect();
    let proj: Vec<bool> = (0..=np).map(|i| i >= ni && i < np).collect();

    let mut trace = Vec::with_capacity(2 + 2 * config.alternations);
    let mut best = ascend_lml(x, &yc, &current, &phi, &config.gp, 0)
        .ok_or_else(|| Error::OptimizerFailure("initial projected likelihood".into()))?
        .start_lml;
    trace.push(best.as_f64());

    let mut phase = |free: &[bool], iters: usize, current: &mut Hyperparameters<T, ProjectedKernel<T>>| {
        if let Some(a) = ascend_lml(x, &yc, current, free, &config.gp, iters) {
            if a.lml >= best && a.lml.is_finite() {
                best = a.lml;
                *current = a.hyper;
            } else {
                log::debug!("projected GP phase rejected: {} < {}", a.lml, best);
            }
        }
        best.as_f64()
    };
    trace.push(phase(&all, config.joint_iters, &mut current));
    for _ in 0..config.alternations {
        trace.push(phase(&phi, config.gp.max_iters, &mut current));
        trace.push(phase(&proj, config.gp.max_iters, &mut current));
    }

    let w_raw = current.kernel.projection.clone();
    let w = orthonormalize(&w_raw)?;
    let model = fit_gp(&(x * &w), y, &config.gp)?;
    Ok(ProjectedFit {
        w_raw,
        w,
        hyper: current,
        model,
        lml_trace: trace,
    })
}
