//! Covariance functions and their log-parameter gradients.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A covariance function with a flat, optimizer-facing parameter vector.
///
/// Positive parameters are exposed in log space; unconstrained ones (such as
/// projection weights) are exposed as-is.
pub trait Kernel<T: Scalar>: Clone + Debug + Send + Sync {
    fn input_dim(&self) -> usize;
    fn n_params(&self) -> usize;
    fn params(&self) -> DVector<T>;
    fn set_params(&mut self, theta: &[T]);
    /// Box bounds for each parameter; `positive` bounds the natural-scale
    /// value of log-space parameters.
    fn bounds(&self, positive: (f64, f64)) -> Vec<(T, T)>;

    fn eval(&self, a: &[T], b: &[T]) -> T;
    fn cross(&self, a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T>;
    fn diag(&self, a: &DMatrix<T>) -> DVector<T>;

    fn gram(&self, x: &DMatrix<T>) -> DMatrix<T> {
        self.cross(x, x)
    }

    /// For each parameter `m`, returns `Σ_ik q_ik ∂K_ik/∂θ_m` with `K` the
    /// Gram matrix on `x`. `q` must be symmetric.
    fn grad_contract(&self, x: &DMatrix<T>, q: &DMatrix<T>) -> DVector<T>;

    /// Starting parameters for optimizer restart `restart`; restart 0 is a
    /// data-driven heuristic, later restarts are randomized around it.
    fn initial_params(&self, x: &DMatrix<T>, y_var: T, restart: usize, rng: &mut dyn RngCore) -> DVector<T>;
}

/// Squared-exponential kernel with one lengthscale per input dimension:
/// `k(x, x') = σ_f² exp(−½ Σ_j (x_j − x'_j)² / ℓ_j²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArdKernelParams<T: Scalar> {
    pub signal_variance: T,
    pub lengthscales: DVector<T>,
}

impl<T: Scalar> ArdKernelParams<T> {
    pub fn new(signal_variance: T, lengthscales: DVector<T>) -> Result<Self> {
        if !(signal_variance > T::zero()) || !signal_variance.is_finite() {
            return Err(Error::InvalidArgument("signal variance must be positive".into()));
        }
        if lengthscales.is_empty() || lengthscales.iter().any(|l| !(*l > T::zero()) || !l.is_finite()) {
            return Err(Error::InvalidArgument("lengthscales must be positive".into()));
        }
        Ok(Self {
            signal_variance,
            lengthscales,
        })
    }

    pub fn isotropic(dim: usize, signal_variance: T, lengthscale: T) -> Self {
        Self {
            signal_variance,
            lengthscales: DVector::from_element(dim, lengthscale),
        }
    }
}

/// Evaluates the ARD squared-exponential kernel on two points.
pub fn kernel_eval<T: Scalar>(params: &ArdKernelParams<T>, x: &[T], x2: &[T]) -> Result<T> {
    let p = params.lengthscales.len();
    if x.len() != p || x2.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: if x.len() != p { x.len() } else { x2.len() },
        });
    }
    Ok(params.eval(x, x2))
}

/// SE factor evaluated on a contiguous block of input columns.
#[inline]
fn se_value<T: Scalar>(var: T, ls: &[T], a: &[T], b: &[T]) -> T {
    let mut r2 = T::zero();
    for ((ai, bi), l) in a.iter().zip(b).zip(ls) {
        let d = (*ai - *bi) / *l;
        r2 += d * d;
    }
    var * (-T::lit(0.5) * r2).exp()
}

/// Rows of `a` restricted to `cols`, each scaled by the lengthscales.
fn scaled_rows<T: Scalar>(a: &DMatrix<T>, start: usize, ls: &[T]) -> Vec<T> {
    let d = ls.len();
    let mut out = Vec::with_capacity(a.nrows() * d);
    for i in 0..a.nrows() {
        for (j, l) in ls.iter().enumerate() {
            out.push(a[(i, start + j)] / *l);
        }
    }
    out
}

/// SE cross-covariance on columns `start..start + ls.len()` of `a` and `b`.
pub(crate) fn se_cross<T: Scalar>(var: T, ls: &[T], a: &DMatrix<T>, b: &DMatrix<T>, start: usize) -> DMatrix<T> {
    let d = ls.len();
    let sa = scaled_rows(a, start, ls);
    let sb = scaled_rows(b, start, ls);
    let half = T::lit(0.5);
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, k| {
        let ra = &sa[i * d..(i + 1) * d];
        let rb = &sb[k * d..(k + 1) * d];
        let mut r2 = T::zero();
        for (u, v) in ra.iter().zip(rb) {
            let t = *u - *v;
            r2 += t * t;
        }
        var * (-half * r2).exp()
    })
}

/// Accumulates the SE log-parameter contractions into `out`:
/// `out[0] += Σ w_ik k_ik`, `out[1 + j] += Σ w_ik k_ik Δ_ikj² / ℓ_j²`.
/// Skips the variance slot when `with_variance` is false.
pub(crate) fn se_grad<T: Scalar>(
    var: T,
    ls: &[T],
    x: &DMatrix<T>,
    start: usize,
    w: &DMatrix<T>,
    with_variance: bool,
    out: &mut [T],
) {
    let n = x.nrows();
    let d = ls.len();
    let sx = scaled_rows(x, start, ls);
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let offset = usize::from(with_variance);
    let mut diff = vec![T::zero(); d];
    for i in 0..n {
        let ri = &sx[i * d..(i + 1) * d];
        // diagonal: Δ = 0, k = var
        if with_variance {
            out[0] += w[(i, i)] * var;
        }
        for k in 0..i {
            let rk = &sx[k * d..(k + 1) * d];
            let mut r2 = T::zero();
            for j in 0..d {
                let t = ri[j] - rk[j];
                diff[j] = t * t;
                r2 += diff[j];
            }
            let kv = var * (-half * r2).exp();
            let wk = two * w[(i, k)] * kv;
            if with_variance {
                out[0] += wk;
            }
            for j in 0..d {
                out[offset + j] += wk * diff[j];
            }
        }
    }
}

fn log_bounds<T: Scalar>(positive: (f64, f64)) -> (T, T) {
    (T::lit(positive.0.ln()), T::lit(positive.1.ln()))
}

pub(crate) fn column_range<T: Scalar>(x: &DMatrix<T>, j: usize) -> T {
    let col = x.column(j);
    let range = col.max() - col.min();
    if range > T::lit(1e-8) {
        range
    } else {
        T::one()
    }
}

fn jitter_log<T: Scalar>(rng: &mut dyn RngCore, half_width: f64) -> T {
    T::lit(rng.random_range(-half_width..half_width))
}

impl<T: Scalar> Kernel<T> for ArdKernelParams<T> {
    fn input_dim(&self) -> usize {
        self.lengthscales.len()
    }

    fn n_params(&self) -> usize {
        1 + self.lengthscales.len()
    }

    fn params(&self) -> DVector<T> {
        let mut v = DVector::zeros(self.n_params());
        v[0] = self.signal_variance.ln();
        for (j, l) in self.lengthscales.iter().enumerate() {
            v[1 + j] = l.ln();
        }
        v
    }

    fn set_params(&mut self, theta: &[T]) {
        self.signal_variance = theta[0].exp();
        for (j, l) in self.lengthscales.iter_mut().enumerate() {
            *l = theta[1 + j].exp();
        }
    }

    fn bounds(&self, positive: (f64, f64)) -> Vec<(T, T)> {
        vec![log_bounds(positive); self.n_params()]
    }

    fn eval(&self, a: &[T], b: &[T]) -> T {
        se_value(self.signal_variance, self.lengthscales.as_slice(), a, b)
    }

    fn cross(&self, a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
        se_cross(self.signal_variance, self.lengthscales.as_slice(), a, b, 0)
    }

    fn diag(&self, a: &DMatrix<T>) -> DVector<T> {
        DVector::from_element(a.nrows(), self.signal_variance)
    }

    fn grad_contract(&self, x: &DMatrix<T>, q: &DMatrix<T>) -> DVector<T> {
        let mut out = DVector::zeros(self.n_params());
        se_grad(
            self.signal_variance,
            self.lengthscales.as_slice(),
            x,
            0,
            q,
            true,
            out.as_mut_slice(),
        );
        out
    }

    fn initial_params(&self, x: &DMatrix<T>, y_var: T, restart: usize, rng: &mut dyn RngCore) -> DVector<T> {
        let mut v = DVector::zeros(self.n_params());
        v[0] = y_var.max(T::lit(1e-6)).ln();
        for j in 0..self.lengthscales.len() {
            v[1 + j] = column_range(x, j).ln();
        }
        if restart > 0 {
            v[0] += jitter_log(rng, 2.0);
            for j in 0..self.lengthscales.len() {
                v[1 + j] += jitter_log(rng, 1.5);
            }
        }
        v
    }
}

/// Composite kernel over augmented inputs `[x, z]` (last column is `z`):
/// `k = k_ρ(x, x') · k_z(z, z') + k_δ(x, x')`, each factor an ARD-SE.
///
/// The `z` factor has unit variance; its scale is absorbed by `k_ρ`.
/// Parameter layout: `[ln σ_ρ², ln ℓ_ρ (p), ln ℓ_z, ln σ_δ², ln ℓ_δ (p)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NargpKernel<T: Scalar> {
    pub rho: ArdKernelParams<T>,
    pub z_lengthscale: T,
    pub delta: ArdKernelParams<T>,
}

impl<T: Scalar> NargpKernel<T> {
    pub fn new(p: usize) -> Self {
        Self {
            rho: ArdKernelParams::isotropic(p, T::one(), T::one()),
            z_lengthscale: T::one(),
            delta: ArdKernelParams::isotropic(p, T::one(), T::one()),
        }
    }

    fn p(&self) -> usize {
        self.rho.lengthscales.len()
    }
}

impl<T: Scalar> Kernel<T> for NargpKernel<T> {
    fn input_dim(&self) -> usize {
        self.p() + 1
    }

    fn n_params(&self) -> usize {
        2 * self.p() + 3
    }

    fn params(&self) -> DVector<T> {
        let p = self.p();
        let mut v = DVector::zeros(self.n_params());
        v.rows_mut(0, p + 1).copy_from(&self.rho.params());
        v[p + 1] = self.z_lengthscale.ln();
        v.rows_mut(p + 2, p + 1).copy_from(&self.delta.params());
        v
    }

    fn set_params(&mut self, theta: &[T]) {
        let p = self.p();
        self.rho.set_params(&theta[0..p + 1]);
        self.z_lengthscale = theta[p + 1].exp();
        self.delta.set_params(&theta[p + 2..]);
    }

    fn bounds(&self, positive: (f64, f64)) -> Vec<(T, T)> {
        vec![log_bounds(positive); self.n_params()]
    }

    fn eval(&self, a: &[T], b: &[T]) -> T {
        let p = self.p();
        let kr = self.rho.eval(&a[..p], &b[..p]);
        let kz = se_value(T::one(), &[self.z_lengthscale], &a[p..], &b[p..]);
        let kd = self.delta.eval(&a[..p], &b[..p]);
        kr * kz + kd
    }

    fn cross(&self, a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
        let p = self.p();
        let kr = se_cross(self.rho.signal_variance, self.rho.lengthscales.as_slice(), a, b, 0);
        let kz = se_cross(T::one(), &[self.z_lengthscale], a, b, p);
        let kd = se_cross(self.delta.signal_variance, self.delta.lengthscales.as_slice(), a, b, 0);
        kr.component_mul(&kz) + kd
    }

    fn diag(&self, a: &DMatrix<T>) -> DVector<T> {
        DVector::from_element(a.nrows(), self.rho.signal_variance + self.delta.signal_variance)
    }

    fn grad_contract(&self, x: &DMatrix<T>, q: &DMatrix<T>) -> DVector<T> {
        let p = self.p();
        let mut out = DVector::zeros(self.n_params());
        let kr = se_cross(self.rho.signal_variance, self.rho.lengthscales.as_slice(), x, x, 0);
        let kz = se_cross(T::one(), &[self.z_lengthscale], x, x, p);
        // ∂(k_ρ k_z) = (∂k_ρ) k_z + k_ρ (∂k_z)
        let w_rho = q.component_mul(&kz);
        let w_z = q.component_mul(&kr);
        {
            let s = out.as_mut_slice();
            se_grad(
                self.rho.signal_variance,
                self.rho.lengthscales.as_slice(),
                x,
                0,
                &w_rho,
                true,
                &mut s[0..p + 1],
            );
            se_grad(T::one(), &[self.z_lengthscale], x, p, &w_z, false, &mut s[p + 1..p + 2]);
            se_grad(
                self.delta.signal_variance,
                self.delta.lengthscales.as_slice(),
                x,
                0,
                q,
                true,
                &mut s[p + 2..],
            );
        }
        out
    }

    fn initial_params(&self, x: &DMatrix<T>, y_var: T, restart: usize, rng: &mut dyn RngCore) -> DVector<T> {
        let p = self.p();
        let var = y_var.max(T::lit(1e-6));
        let mut v = DVector::zeros(self.n_params());
        v[0] = var.ln();
        for j in 0..p {
            v[1 + j] = (column_range(x, j) * T::lit(2.0)).ln();
            v[p + 2 + 1 + j] = column_range(x, j).ln();
        }
        v[p + 1] = column_range(x, p).ln();
        v[p + 2] = (var * T::lit(0.01)).ln();
        if restart > 0 {
            for i in 0..v.len() {
                let w = if i == 0 || i == p + 2 { 2.0 } else { 1.5 };
                v[i] += jitter_log(rng, w);
            }
        }
        v
    }
}

/// Kernel acting on projected inputs: `k_s(x, x') = k_d(Wᵀx, Wᵀx'; φ)`.
///
/// Parameter layout: `[ln σ_f², ln ℓ (d), vec(W) column-major (s·d)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedKernel<T: Scalar> {
    pub projection: DMatrix<T>,
    pub inner: ArdKernelParams<T>,
}

/// Bound on the magnitude of each projection entry during optimization.
pub const PROJECTION_BOUND: f64 = 1e3;

impl<T: Scalar> ProjectedKernel<T> {
    pub fn new(projection: DMatrix<T>, inner: ArdKernelParams<T>) -> Result<Self> {
        if projection.ncols() != inner.lengthscales.len() {
            return Err(Error::DimensionMismatch {
                expected: projection.ncols(),
                found: inner.lengthscales.len(),
            });
        }
        if projection.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("projection matrix"));
        }
        Ok(Self { projection, inner })
    }

    pub fn reduced_dim(&self) -> usize {
        self.projection.ncols()
    }

    /// Number of inner (φ) parameters; they come first in the layout.
    pub fn n_inner(&self) -> usize {
        1 + self.reduced_dim()
    }

    pub fn project(&self, x: &DMatrix<T>) -> DMatrix<T> {
        x * &self.projection
    }
}

/// Evaluates the projected kernel on two points.
pub fn projected_kernel_eval<T: Scalar>(params: &ProjectedKernel<T>, x: &[T], x2: &[T]) -> Result<T> {
    let s = params.projection.nrows();
    if x.len() != s || x2.len() != s {
        return Err(Error::DimensionMismatch {
            expected: s,
            found: if x.len() != s { x.len() } else { x2.len() },
        });
    }
    Ok(params.eval(x, x2))
}

impl<T: Scalar> Kernel<T> for ProjectedKernel<T> {
    fn input_dim(&self) -> usize {
        self.projection.nrows()
    }

    fn n_params(&self) -> usize {
        self.n_inner() + self.projection.len()
    }

    fn params(&self) -> DVector<T> {
        let mut v = DVector::zeros(self.n_params());
        let ni = self.n_inner();
        v.rows_mut(0, ni).copy_from(&self.inner.params());
        for (k, w) in self.projection.iter().enumerate() {
            v[ni + k] = *w;
        }
        v
    }

    fn set_params(&mut self, theta: &[T]) {
        let ni = self.n_inner();
        self.inner.set_params(&theta[..ni]);
        for (k, w) in self.projection.iter_mut().enumerate() {
            *w = theta[ni + k];
        }
    }

    fn bounds(&self, positive: (f64, f64)) -> Vec<(T, T)> {
        let mut b = vec![log_bounds(positive); self.n_inner()];
        let w = T::lit(PROJECTION_BOUND);
        b.extend(std::iter::repeat_n((-w, w), self.projection.len()));
        b
    }

    fn eval(&self, a: &[T], b: &[T]) -> T {
        let d = self.reduced_dim();
        let mut ua = vec![T::zero(); d];
        let mut ub = vec![T::zero(); d];
        for j in 0..d {
            for (i, (xa, xb)) in a.iter().zip(b).enumerate() {
                ua[j] += self.projection[(i, j)] * *xa;
                ub[j] += self.projection[(i, j)] * *xb;
            }
        }
        self.inner.eval(&ua, &ub)
    }

    fn cross(&self, a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
        self.inner.cross(&self.project(a), &self.project(b))
    }

    fn diag(&self, a: &DMatrix<T>) -> DVector<T> {
        DVector::from_element(a.nrows(), self.inner.signal_variance)
    }

    fn grad_contract(&self, x: &DMatrix<T>, q: &DMatrix<T>) -> DVector<T> {
        let u = self.project(x);
        let ni = self.n_inner();
        let d = self.reduced_dim();
        let mut out = DVector::zeros(self.n_params());
        let inner = self.inner.grad_contract(&u, q);
        out.rows_mut(0, ni).copy_from(&inner);

        // ∂K_ik/∂W_aj = −K_ik (u_ij − u_kj)(x_ia − x_ka) / ℓ_j².
        // With B = q ⊙ K symmetric and r its row sums,
        // Σ_ik B_ik Δu_j Δx_a = 2 [Xᵀ (diag(r) − B) U]_aj.
        let k = self.inner.gram(&u);
        let b = q.component_mul(&k);
        let mut lap = -b.clone();
        for i in 0..lap.nrows() {
            let r: T = b.row(i).sum();
            lap[(i, i)] += r;
        }
        let g = x.transpose() * lap * &u;
        let s = self.projection.nrows();
        for j in 0..d {
            let l2 = self.inner.lengthscales[j] * self.inner.lengthscales[j];
            for a in 0..s {
                out[ni + j * s + a] = -T::lit(2.0) * g[(a, j)] / l2;
            }
        }
        out
    }

    fn initial_params(&self, x: &DMatrix<T>, y_var: T, restart: usize, rng: &mut dyn RngCore) -> DVector<T> {
        let u = self.project(x);
        let inner = self.inner.initial_params(&u, y_var, restart, rng);
        let mut v = self.params();
        v.rows_mut(0, self.n_inner()).copy_from(&inner);
        v
    }
}
