//! Benchmark problems, the elliptic quadrature solver, error metrics and the
//! uncertainty-propagation study.

use std::borrow::Cow;
use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{evaluate_rows, make_nested, sample_uniform, Dataset, Fidelity, NestedSplit};
use crate::error::{Error, Result};
use crate::gp::{fit_gp, GpConfig};
use crate::scalar::Scalar;
use crate::sdr::{save, Bic, DEFAULT_SLICES};

/// Samples used for reference subspaces and the pure-SAVE comparator.
pub const REFERENCE_SAMPLES: usize = 10_000;
/// Seed of the reference-subspace sample.
pub const REFERENCE_SEED: u64 = 0x5eed_0001;
/// Default composite Gauss–Legendre layout for the elliptic solver.
pub const ELLIPTIC_PANELS: usize = 64;
pub const ELLIPTIC_NODES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemKind {
    Linear,
    Nonlinear,
    Advection { a: f64, x: f64, t: f64 },
    Elliptic { x: f64 },
}

/// How the true central subspace is known.
#[derive(Debug, Clone, PartialEq)]
pub enum TrueSubspace {
    Known { basis: DMatrix<f64> },
    /// Estimated by SAVE and BIC on [`REFERENCE_SAMPLES`] exact evaluations.
    FromLargeSampleSave,
}

#[derive(Debug, Clone)]
pub struct BenchmarkProblem {
    pub name: &'static str,
    pub p: usize,
    pub kind: ProblemKind,
    pub true_subspace: TrueSubspace,
}

/// True subspace resolved to a basis.
#[derive(Debug, Clone)]
pub struct ReferenceSubspace {
    pub basis: DMatrix<f64>,
    pub d: usize,
    /// BIC of the large-sample SAVE, when one was run.
    pub bic: Option<Bic>,
}

pub fn linear_problem() -> BenchmarkProblem {
    BenchmarkProblem {
        name: "linear",
        p: 6,
        kind: ProblemKind::Linear,
        true_subspace: TrueSubspace::Known {
            basis: DMatrix::from_column_slice(6, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]),
        },
    }
}

pub fn nonlinear_problem() -> BenchmarkProblem {
    BenchmarkProblem {
        name: "nonlinear",
        p: 10,
        kind: ProblemKind::Nonlinear,
        true_subspace: TrueSubspace::Known {
            basis: DMatrix::from_element(10, 1, 1.0),
        },
    }
}

pub fn advection_problem(a: f64, x: f64, t: f64) -> BenchmarkProblem {
    BenchmarkProblem {
        name: "advection",
        p: 5,
        kind: ProblemKind::Advection { a, x, t },
        true_subspace: TrueSubspace::Known {
            basis: DMatrix::from_element(5, 1, 1.0),
        },
    }
}

pub fn elliptic_problem(x_query: f64) -> BenchmarkProblem {
    BenchmarkProblem {
        name: "elliptic",
        p: 6,
        kind: ProblemKind::Elliptic { x: x_query },
        true_subspace: TrueSubspace::FromLargeSampleSave,
    }
}

/// Looks a problem up by name with its default parameters.
pub fn problem_by_name(name: &str) -> Option<BenchmarkProblem> {
    match name {
        "linear" => Some(linear_problem()),
        "nonlinear" => Some(nonlinear_problem()),
        "advection" => Some(advection_problem(1.0, 0.5, 1.0)),
        "elliptic" => Some(elliptic_problem(0.7)),
        _ => None,
    }
}

pub fn linear_high(x: &[f64]) -> f64 {
    (PI * (x[0] + x[2])).sin() + (PI * (x[0] + x[1])).sin() + 2.0
}

pub fn linear_low(x: &[f64]) -> f64 {
    linear_high(x) + x[2] * x[3] * x[4] * x[5]
}

pub fn nonlinear_high(x: &[f64]) -> f64 {
    (0.2 * x.iter().sum::<f64>()).exp()
}

pub fn nonlinear_low(x: &[f64]) -> f64 {
    x[3] * nonlinear_high(x)
}

pub fn advection_high(xi: &[f64], a: f64, x: f64, t: f64) -> f64 {
    let s: f64 = xi[..5].iter().sum();
    (PI * (x - a / 4.0 * t * s + 1.0)).sin() + 1.0
}

pub fn advection_low(xi: &[f64], a: f64, x: f64, t: f64) -> f64 {
    let s: f64 = xi[2..5].iter().sum();
    (PI * (x - a / 4.0 * t * s + 1.0)).sin() + 1.0
}

/// `1/a_H(y; ξ) = ξ₁ + sin(y(ξ₁+ξ₂+ξ₃+ξ₄)) + 1`.
pub fn elliptic_coefficient_high(xi: &[f64]) -> impl Fn(f64) -> f64 + '_ {
    let s: f64 = xi[..4].iter().sum();
    move |y| 1.0 / (xi[0] + (y * s).sin() + 1.0)
}

/// `1/a_L(y; ξ) = 0.1 + sin(y(ξ₁+ξ₂+ξ₃+ξ₄)) + 1`.
pub fn elliptic_coefficient_low(xi: &[f64]) -> impl Fn(f64) -> f64 + '_ {
    let s: f64 = xi[..4].iter().sum();
    move |y| 1.0 / (0.1 + (y * s).sin() + 1.0)
}

impl BenchmarkProblem {
    pub fn high(&self, x: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::Linear => linear_high(x),
            ProblemKind::Nonlinear => nonlinear_high(x),
            ProblemKind::Advection { a, x: at, t } => advection_high(x, a, at, t),
            ProblemKind::Elliptic { x: at } => solve_elliptic(elliptic_coefficient_high(x), at).unwrap_or(f64::NAN),
        }
    }

    pub fn low(&self, x: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::Linear => linear_low(x),
            ProblemKind::Nonlinear => nonlinear_low(x),
            ProblemKind::Advection { a, x: at, t } => advection_low(x, a, at, t),
            ProblemKind::Elliptic { x: at } => solve_elliptic(elliptic_coefficient_low(x), at).unwrap_or(f64::NAN),
        }
    }

    /// High-fidelity response on a grid of the spatial variable, for the
    /// uncertainty-propagation study. `None` for problems without one.
    pub fn high_profile(&self, xi: &[f64], grid: &[f64]) -> Option<Vec<f64>> {
        match self.kind {
            ProblemKind::Advection { a, t, .. } => Some(grid.iter().map(|&x| advection_high(xi, a, x, t)).collect()),
            ProblemKind::Elliptic { .. } => elliptic_profile(elliptic_coefficient_high(xi), grid).ok(),
            _ => None,
        }
    }

    pub fn has_profile(&self) -> bool {
        matches!(self.kind, ProblemKind::Advection { .. } | ProblemKind::Elliptic { .. })
    }

    /// True subspace, running the large-sample SAVE if needed.
    pub fn reference_subspace(&self) -> Result<ReferenceSubspace> {
        match &self.true_subspace {
            TrueSubspace::Known { basis } => Ok(ReferenceSubspace {
                basis: basis.clone(),
                d: basis.ncols(),
                bic: None,
            }),
            TrueSubspace::FromLargeSampleSave => {
                if let ProblemKind::Elliptic { x } = self.kind {
                    if x == 0.7 {
                        static CACHE: OnceLock<ReferenceSubspace> = OnceLock::new();
                        if let Some(r) = CACHE.get() {
                            return Ok(r.clone());
                        }
                        let r = self.large_sample_reference()?;
                        return Ok(CACHE.get_or_init(|| r).clone());
                    }
                }
                self.large_sample_reference()
            }
        }
    }

    fn large_sample_reference(&self) -> Result<ReferenceSubspace> {
        let r = pure_save(self, REFERENCE_SAMPLES, REFERENCE_SEED)?;
        let bic = r.bic(REFERENCE_SAMPLES)?;
        Ok(ReferenceSubspace {
            basis: r.leading(bic.d_hat),
            d: bic.d_hat,
            bic: Some(bic),
        })
    }
}

/// Low-fidelity training set, nested initial high-fidelity subset and test set.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub low: Dataset<f64>,
    pub split: NestedSplit<f64>,
    pub test: Dataset<f64>,
}

/// Uniform inputs on the unit cube for every set, with independent streams
/// derived from `seed`.
pub fn generate_data(problem: &BenchmarkProblem, n_low: usize, n_high: usize, n_test: usize, seed: u64) -> Result<ProblemData> {
    let base = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let xl: DMatrix<f64> = sample_uniform(n_low, problem.p, base.wrapping_add(1))?;
    let low = Dataset::from_fn(xl, Fidelity::Low, |r| problem.low(r))?;
    let xt: DMatrix<f64> = sample_uniform(n_test, problem.p, base.wrapping_add(2))?;
    let test = Dataset::from_fn(xt, Fidelity::High, |r| problem.high(r))?;
    let split = make_nested(&low, n_high, |r| problem.high(r), base.wrapping_add(3))?;
    Ok(ProblemData { low, split, test })
}

/// SAVE on `n` exact high-fidelity samples.
pub fn pure_save(problem: &BenchmarkProblem, n: usize, seed: u64) -> Result<crate::sdr::SdrResult<f64>> {
    let x: DMatrix<f64> = sample_uniform(n, problem.p, seed)?;
    let y = evaluate_rows(&x, |r| problem.high(r));
    save(&x, &y, DEFAULT_SLICES)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let step = p1 / dp;
            z -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn gl_rule(nodes: usize) -> Cow<'static, (Vec<f64>, Vec<f64>)> {
    static DEFAULT_RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    if nodes == ELLIPTIC_NODES {
        Cow::Borrowed(DEFAULT_RULE.get_or_init(|| gauss_legendre(ELLIPTIC_NODES)))
    } else {
        Cow::Owned(gauss_legendre(nodes))
    }
}

/// Composite Gauss–Legendre integral of `f` over `[lo, hi]`.
pub fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize, nodes: usize) -> f64 {
    let rule = gl_rule(nodes);
    let (z, w) = (&rule.0, &rule.1);
    let h = (hi - lo) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let mid = lo + (k as f64 + 0.5) * h;
        for (zi, wi) in z.iter().zip(w) {
            total += wi * f(mid + 0.5 * h * zi);
        }
    }
    0.5 * h * total
}

/// Quadrature layout for [`solve_elliptic_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub panels: usize,
    pub nodes: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            panels: ELLIPTIC_PANELS,
            nodes: ELLIPTIC_NODES,
        }
    }
}

/// Solves `−(a u′)′ = 1` on `(0, 1)` with `u(0) = u(1) = 0` and returns
/// `u(x_query) = ∫₀^x (c − y)/a(y) dy`, `c = ∫₀¹ y/a / ∫₀¹ 1/a`.
pub fn solve_elliptic(a: impl Fn(f64) -> f64, x_query: f64) -> Result<f64> {
    solve_elliptic_with(a, x_query, Quadrature::default())
}

pub fn solve_elliptic_with(a: impl Fn(f64) -> f64, x_query: f64, q: Quadrature) -> Result<f64> {
    Ok(elliptic_profile_with(a, &[x_query], q)?[0])
}

/// `u` at every point of `grid` (each in `[0, 1]`) from one coefficient.
pub fn elliptic_profile(a: impl Fn(f64) -> f64, grid: &[f64]) -> Result<Vec<f64>> {
    elliptic_profile_with(a, grid, Quadrature::default())
}

fn elliptic_profile_with(a: impl Fn(f64) -> f64, grid: &[f64], q: Quadrature) -> Result<Vec<f64>> {
    if grid.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::InvalidArgument("query points must lie in [0, 1]".into()));
    }
    let rule = gl_rule(q.nodes);
    let (z, w) = (&rule.0, &rule.1);
    let h = 1.0 / q.panels as f64;
    // reciprocal coefficient at every node, checked once
    let mut recip = Vec::with_capacity(q.panels * q.nodes);
    for k in 0..q.panels {
        let mid = (k as f64 + 0.5) * h;
        for zi in z {
            let y = mid + 0.5 * h * zi;
            let av = a(y);
            if !(av > 0.0) || !av.is_finite() {
                return Err(Error::NonPositiveCoefficient { at: y });
            }
            recip.push(1.0 / av);
        }
    }
    let (mut i0, mut i1) = (0.0, 0.0);
    for k in 0..q.panels {
        let mid = (k as f64 + 0.5) * h;
        for (j, (zi, wi)) in z.iter().zip(w).enumerate() {
            let y = mid + 0.5 * h * zi;
            i0 += wi * recip[k * q.nodes + j];
            i1 += wi * y * recip[k * q.nodes + j];
        }
    }
    let c = i1 / i0;
    let integrand = |y: f64| (c - y) / a(y);
    let mut out = Vec::with_capacity(grid.len());
    for &x in grid {
        // whole panels reuse the cached reciprocals; the partial one is integrated afresh
        let full = ((x / h).floor() as usize).min(q.panels);
        let mut u = 0.0;
        for k in 0..full {
            let mid = (k as f64 + 0.5) * h;
            for (j, (zi, wi)) in z.iter().zip(w).enumerate() {
                let y = mid + 0.5 * h * zi;
                u += 0.5 * h * wi * (c - y) * recip[k * q.nodes + j];
            }
        }
        let start = full as f64 * h;
        if x > start {
            u += integrate(integrand, start, x, 1, q.nodes);
        }
        out.push(u);
    }
    Ok(out)
}

/// `‖u − û‖₂ / ‖u‖₂`.
pub fn relative_error<T: Scalar>(u: &DVector<T>, u_hat: &DVector<T>) -> Result<T> {
    if u.len() != u_hat.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: u_hat.len(),
        });
    }
    let norm = u.norm();
    if !(norm > T::zero()) {
        return Err(Error::ZeroNorm);
    }
    Ok((u - u_hat).norm() / norm)
}

/// `n` evenly spaced points covering `[0, 1]` inclusive.
pub fn unit_grid(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5];
    }
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Mean and sample standard deviation at each grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn column_stats(values: &DMatrix<f64>) -> ProfileStats {
    let n = values.nrows() as f64;
    let mut mean = Vec::with_capacity(values.ncols());
    let mut std = Vec::with_capacity(values.ncols());
    for col in values.column_iter() {
        let m = col.sum() / n;
        let v = col.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / (n - 1.0).max(1.0);
        mean.push(m);
        std.push(v.sqrt());
    }
    ProfileStats { mean, std }
}

/// Exact response statistics over `n` uniform draws of the random inputs.
pub fn monte_carlo_truth(problem: &BenchmarkProblem, grid: &[f64], n: usize, seed: u64) -> Result<ProfileStats> {
    if !problem.has_profile() {
        return Err(Error::InvalidArgument(format!("{} has no spatial profile", problem.name)));
    }
    let xi: DMatrix<f64> = sample_uniform(n, problem.p, seed)?;
    let mut values = DMatrix::zeros(n, grid.len());
    let mut row = vec![0.0; problem.p];
    for i in 0..n {
        for j in 0..problem.p {
            row[j] = xi[(i, j)];
        }
        let prof = problem
            .high_profile(&row, grid)
            .ok_or(Error::NonFinite("exact profile"))?;
        for (k, v) in prof.into_iter().enumerate() {
            values[(i, k)] = v;
        }
    }
    Ok(column_stats(&values))
}

/// Statistics of a reduced-input surrogate family over the grid.
///
/// For each grid point the GP on `(X_train·transform, u_H(x; X_train))` is
/// refit, evaluated at the common draws `xi·transform`, and summarized by the
/// mean and standard deviation of its predictive means.
pub fn surrogate_profile(
    problem: &BenchmarkProblem,
    transform: &DMatrix<f64>,
    x_train: &DMatrix<f64>,
    xi: &DMatrix<f64>,
    grid: &[f64],
    gp: &GpConfig,
) -> Result<ProfileStats> {
    let n_train = x_train.nrows();
    let mut responses = DMatrix::zeros(n_train, grid.len());
    let mut row = vec![0.0; problem.p];
    for i in 0..n_train {
        for j in 0..problem.p {
            row[j] = x_train[(i, j)];
        }
        let prof = problem
            .high_profile(&row, grid)
            .ok_or(Error::NonFinite("training profile"))?;
        for (k, v) in prof.into_iter().enumerate() {
            responses[(i, k)] = v;
        }
    }
    let reduced_train = x_train * transform;
    let reduced_xi = xi * transform;
    let mut values = DMatrix::zeros(xi.nrows(), grid.len());
    for k in 0..grid.len() {
        let y = responses.column(k).into_owned();
        let model = fit_gp(&reduced_train, &y, &gp.clone().with_seed(gp.seed.wrapping_add(k as u64)))?;
        values.set_column(k, &model.predict_mean(&reduced_xi)?);
    }
    Ok(column_stats(&values))
}

/// Output of [`uncertainty_propagation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpCurves {
    pub grid: Vec<f64>,
    pub truth: ProfileStats,
    pub rmfgp: ProfileStats,
    pub baseline: ProfileStats,
}

/// Settings of the uncertainty-propagation study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpConfig {
    pub grid_points: usize,
    pub n_xi: usize,
    pub n_truth: usize,
    pub seed: u64,
    pub gp: GpConfig,
}

impl Default for UpConfig {
    fn default() -> Self {
        Self {
            grid_points: 50,
            n_xi: 2000,
            n_truth: 100_000,
            seed: 0,
            gp: GpConfig::default().with_restarts(3),
        }
    }
}

/// Mean and standard-deviation curves over the spatial grid for the truth,
/// the RMFGP reduction and a baseline reduction, each surrogate trained on
/// its own high-fidelity inputs.
pub fn uncertainty_propagation(
    problem: &BenchmarkProblem,
    rmfgp: (&DMatrix<f64>, &DMatrix<f64>),
    baseline: (&DMatrix<f64>, &DMatrix<f64>),
    config: &UpConfig,
) -> Result<UpCurves> {
    let grid = unit_grid(config.grid_points);
    let truth = monte_carlo_truth(problem, &grid, config.n_truth, config.seed.wrapping_add(1))?;
    let xi: DMatrix<f64> = sample_uniform(config.n_xi, problem.p, config.seed.wrapping_add(2))?;
    let rm = surrogate_profile(problem, rmfgp.0, rmfgp.1, &xi, &grid, &config.gp)?;
    let bl = surrogate_profile(problem, baseline.0, baseline.1, &xi, &grid, &config.gp)?;
    Ok(UpCurves {
        grid,
        truth,
        rmfgp: rm,
        baseline: bl,
    })
}

/// Euclidean distance between two curves.
pub fn curve_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (z, w) = gauss_legendre(8);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
        // degree 15 is the highest exact degree for 8 nodes
        let m: f64 = z.iter().zip(&w).map(|(x, wi)| wi * x.powi(14)).sum();
        assert!((m - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn constant_coefficient_closed_form() {
        let u = solve_elliptic(|_| 1.0, 0.5).unwrap();
        assert!((u - 0.125).abs() < 1e-12);
        let u = solve_elliptic(|_| 2.5, 0.3).unwrap();
        assert!((u - 0.3 * 0.7 / 5.0).abs() < 1e-12);
        assert!(matches!(solve_elliptic(|y| y - 0.5, 0.5), Err(Error::NonPositiveCoefficient { .. })));
    }

    #[test]
    fn relative_error_examples() {
        let u = DVector::from_vec(vec![3.0f64, 4.0]);
        assert_eq!(relative_error(&u, &u).unwrap(), 0.0);
        assert_eq!(relative_error(&u, &DVector::zeros(2)).unwrap(), 1.0);
        assert!((relative_error(&u, &DVector::from_vec(vec![3.0f64, 0.0])).unwrap() - 0.8).abs() < 1e-15);
        assert!(matches!(relative_error(&DVector::zeros(2), &u), Err(Error::ZeroNorm)));
    }
}
