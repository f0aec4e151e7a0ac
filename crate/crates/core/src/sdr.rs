//! Sufficient dimension reduction: SIR, SAVE, BIC order selection and the
//! subspace distance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{fit_standardizer, standardize, Standardizer};
use crate::error::{Error, Result};
use crate::linalg::{orthonormalize, sym_eigen_desc};
use crate::scalar::Scalar;

/// Default number of slices.
pub const DEFAULT_SLICES: usize = 10;
/// Ridge added to the input covariance before standardizing.
pub const DEFAULT_RIDGE: f64 = 1e-10;
/// Ridge used when the default one leaves the covariance singular.
pub const FALLBACK_RIDGE: f64 = 1e-6;
/// Eigenvalues of `V̂ + I` this far below 1 are clamped rather than rejected.
pub const EIGENVALUE_SLACK: f64 = 1e-10;

/// Partition of the responses into `h` slices, labelled `1..=h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub h: usize,
    /// Slice label of every point, in the original order.
    pub labels: Vec<usize>,
    /// `h + 1` response values: the minimum followed by each slice's maximum.
    pub boundaries: Vec<f64>,
}

impl SliceSpec {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.h];
        for &l in &self.labels {
            sizes[l - 1] += 1;
        }
        sizes
    }

    /// Indices of the points in slice `label` (1-based).
    pub fn members(&self, label: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == label).then_some(i))
            .collect()
    }
}

/// Slice count actually used for `n` points: at most `requested`, and small
/// enough that slices average five points, but never below two.
pub fn effective_slices(requested: usize, n: usize) -> usize {
    requested.min((n / 5).clamp(2, DEFAULT_SLICES))
}

/// Equal-frequency slicing of `y`. A run of tied values never straddles a
/// boundary; it goes entirely to the lower slice.
pub fn slice_response<T: Scalar>(y: &DVector<T>, h: usize) -> Result<SliceSpec> {
    let n = y.len();
    if h == 0 {
        return Err(Error::InvalidArgument("slice count must be at least 1".into()));
    }
    if n < h {
        return Err(Error::TooFewPoints { n, slices: h });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("slice response"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].partial_cmp(&y[b]).unwrap_or(std::cmp::Ordering::Equal));

    // runs of equal values as (start, end) in sorted order
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=n {
        if i == n || y[order[i]] != y[order[start]] {
            runs.push((start, i));
            start = i;
        }
    }
    if runs.len() < h {
        return Err(Error::TooFewDistinct {
            distinct: runs.len(),
            slices: h,
        });
    }

    let mut labels = vec![0; n];
    let mut boundaries = vec![y[order[0]].as_f64()];
    let mut run = 0;
    for slice in 0..h {
        let remaining_slices = h - slice;
        let first = runs[run].0;
        let target = (n - first).div_ceil(remaining_slices);
        let mut end = run;
        // take at least one run, and leave one run for every later slice
        loop {
            end += 1;
            let taken = runs[end - 1].1 - first;
            if taken >= target || runs.len() - end < remaining_slices {
                break;
            }
        }
        if slice == h - 1 {
            end = runs.len();
        }
        let last = runs[end - 1].1;
        for &i in &order[first..last] {
            labels[i] = slice + 1;
        }
        boundaries.push(y[order[last - 1]].as_f64());
        run = end;
    }
    Ok(SliceSpec { h, labels, boundaries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdrMethod {
    Sir,
    Save,
}

/// Tuning for [`sir_with`] and [`save_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdrOptions {
    /// Requested slice count; reduced by [`effective_slices`].
    pub slices: usize,
    /// Initial covariance ridge; retried at [`FALLBACK_RIDGE`] if singular.
    pub ridge: f64,
    /// Permit `n ≤ p`, where only the ridge keeps the covariance invertible.
    pub allow_underdetermined: bool,
    /// Per-slice moment used by SAVE.
    pub moment: SliceMoment,
}

/// Within-slice matrix `V_h` compared against the identity in SAVE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SliceMoment {
    /// `E_n[(Z − m_h)(Z − m_h)ᵀ | slice]`.
    #[default]
    Covariance,
    /// `E_n[ZZᵀ | slice]`, which also carries the slice-mean shift.
    Second,
}

impl Default for SdrOptions {
    fn default() -> Self {
        Self {
            slices: DEFAULT_SLICES,
            ridge: DEFAULT_RIDGE,
            allow_underdetermined: false,
            moment: SliceMoment::default(),
        }
    }
}

/// Output of SIR or SAVE.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdrResult<T: Scalar> {
    pub method: SdrMethod,
    /// Candidate matrix in standardized coordinates.
    pub m: DMatrix<T>,
    /// Eigenvalues of `m`, descending.
    pub eigenvalues: DVector<T>,
    /// Columns `Σ̂^{-1/2} v̂_k` in original coordinates.
    pub directions: DMatrix<T>,
    /// Orthonormalized `directions`, column order preserved.
    pub rotation: DMatrix<T>,
    pub standardizer: Standardizer<T>,
    pub slices: usize,
    pub n: usize,
    /// True when the response was constant and no directions were estimated.
    pub degenerate_response: bool,
}

impl<T: Scalar> SdrResult<T> {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// First `k` columns of the rotation.
    pub fn leading(&self, k: usize) -> DMatrix<T> {
        self.rotation.columns(0, k).into_owned()
    }

    /// BIC order selection on this result's eigenvalues with `c_n = ln n`.
    pub fn bic(&self, n: usize) -> Result<Bic> {
        let shifted: Vec<f64> = self.eigenvalues.iter().map(|v| v.as_f64() + 1.0).collect();
        bic_dimension(&shifted, n, self.dim(), (n as f64).ln())
    }
}

pub fn sir<T: Scalar>(x: &DMatrix<T>, y: &DVector<T>, h: usize) -> Result<SdrResult<T>> {
    sir_with(x, y, &SdrOptions { slices: h, ..Default::default() })
}

pub fn save<T: Scalar>(x: &DMatrix<T>, y: &DVector<T>, h: usize) -> Result<SdrResult<T>> {
    save_with(x, y, &SdrOptions { slices: h, ..Default::default() })
}

pub fn sir_with<T: Scalar>(x: &DMatrix<T>, y: &DVector<T>, opts: &SdrOptions) -> Result<SdrResult<T>> {
    estimate(x, y, opts, SdrMethod::Sir)
}

pub fn save_with<T: Scalar>(x: &DMatrix<T>, y: &DVector<T>, opts: &SdrOptions) -> Result<SdrResult<T>> {
    estimate(x, y, opts, SdrMethod::Save)
}

fn fit_with_fallback<T: Scalar>(x: &DMatrix<T>, ridge: f64) -> Result<Standardizer<T>> {
    match fit_standardizer(x, T::lit(ridge)) {
        Err(Error::SingularCovariance { smallest }) if ridge < FALLBACK_RIDGE => {
            log::warn!("input covariance singular (smallest eigenvalue {smallest:e}); retrying with ridge {FALLBACK_RIDGE:e}");
            fit_standardizer(x, T::lit(FALLBACK_RIDGE))
        }
        other => other,
    }
}

fn estimate<T: Scalar>(x: &DMatrix<T>, y: &DVector<T>, opts: &SdrOptions, method: SdrMethod) -> Result<SdrResult<T>> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if p == 0 {
        return Err(Error::InvalidArgument("inputs need at least one column".into()));
    }
    if opts.slices < 2 {
        return Err(Error::InvalidArgument("SIR and SAVE need at least 2 slices".into()));
    }
    if n <= p && !opts.allow_underdetermined {
        return Err(Error::TooFewPoints { n, slices: p + 1 });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SDR inputs"));
    }
    let standardizer = fit_with_fallback(x, opts.ridge)?;
    let z = standardize(&standardizer, x)?;
    let h = effective_slices(opts.slices, n);

    if y.iter().all(|&v| v == y[0]) {
        log::warn!("constant response: returning identity rotation");
        return Ok(SdrResult {
            method,
            m: DMatrix::zeros(p, p),
            eigenvalues: DVector::zeros(p),
            directions: DMatrix::identity(p, p),
            rotation: DMatrix::identity(p, p),
            standardizer,
            slices: h,
            n,
            degenerate_response: true,
        });
    }

    let spec = slice_response(y, h)?;
    let nt = T::count(n);
    let mut m = DMatrix::zeros(p, p);
    for label in 1..=h {
        let idx = spec.members(label);
        let nh = idx.len();
        let weight = T::count(nh) / nt;
        let zh = z.select_rows(&idx);
        let mean = DVector::from_iterator(p, zh.column_iter().map(|c| c.sum() / T::count(nh)));
        match method {
            SdrMethod::Sir => m.ger(weight, &mean, &mean, T::one()),
            SdrMethod::Save => {
                if nh < 2 {
                    return Err(Error::SliceTooSmall { slice: label, size: nh });
                }
                let mut centered = zh;
                if opts.moment == SliceMoment::Covariance {
                    for mut row in centered.row_iter_mut() {
                        row -= mean.transpose();
                    }
                }
                let cov = (centered.transpose() * &centered) / T::count(nh);
                let gap = DMatrix::identity(p, p) - cov;
                m += (&gap * &gap) * weight;
            }
        }
    }
    m = (&m + m.transpose()) * T::lit(0.5);
    let (eigenvalues, vectors) = sym_eigen_desc(&m);
    let eigenvalues = eigenvalues.map(|v| v.max(T::zero()));
    let directions = &standardizer.sigma_inv_sqrt * vectors;
    let rotation = orthonormalize(&directions)?;
    Ok(SdrResult {
        method,
        m,
        eigenvalues,
        directions,
        rotation,
        standardizer,
        slices: h,
        n,
        degenerate_response: false,
    })
}

/// BIC order-selection result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bic {
    pub d_hat: usize,
    /// `G(k)` for `k = 1..p−1`.
    pub g: Vec<f64>,
    /// `G` affinely mapped onto `[0, 1]`; for display only.
    pub g_normalized: Vec<f64>,
}

/// Chooses the structural dimension from the descending eigenvalues of
/// `V̂ + I`.
///
/// `G(k) = n/2 Σ_{l>k} (ln λ_l + 1 − λ_l) − c_n k(2p − k + 1)/2`, maximized
/// over `k = 1..p−1` with the lowest `k` winning ties.
pub fn bic_dimension(eigenvalues: &[f64], n: usize, p: usize, c_n: f64) -> Result<Bic> {
    if eigenvalues.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: eigenvalues.len(),
        });
    }
    if p < 2 {
        return Err(Error::InvalidArgument("BIC needs p ≥ 2".into()));
    }
    let mut lambda = Vec::with_capacity(p);
    for (index, &v) in eigenvalues.iter().enumerate() {
        if !v.is_finite() || v < 1.0 - EIGENVALUE_SLACK {
            return Err(Error::InvalidEigenvalue { index, value: v });
        }
        lambda.push(v.max(1.0));
    }
    let nf = n as f64;
    let g: Vec<f64> = (1..p)
        .map(|k| {
            let fit: f64 = lambda[k..].iter().map(|&l| l.ln() + 1.0 - l).sum();
            let penalty = c_n * (k * (2 * p - k + 1)) as f64 / 2.0;
            nf / 2.0 * fit - penalty
        })
        .collect();
    let mut d_hat = 1;
    for (i, &v) in g.iter().enumerate() {
        if v > g[d_hat - 1] {
            d_hat = i + 1;
        }
    }
    let (lo, hi) = g.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let g_normalized = g
        .iter()
        .map(|&v| if hi > lo { (v - lo) / (hi - lo) } else { 1.0 })
        .collect();
    Ok(Bic { d_hat, g, g_normalized })
}

/// `‖QQᵀ − Q̂Q̂ᵀ‖_F` between the column spans of `a` and `a_hat`.
pub fn subspace_distance<T: Scalar>(a: &DMatrix<T>, a_hat: &DMatrix<T>) -> Result<T> {
    if a.nrows() != a_hat.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            found: a_hat.nrows(),
        });
    }
    let q = orthonormalize(a)?;
    let qh = orthonormalize(a_hat)?;
    Ok((&q * q.transpose() - &qh * qh.transpose()).norm())
}
