//! Small dense linear-algebra helpers shared by the GP and SDR modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Diagonal jitter values tried in order until a Cholesky factorization succeeds.
pub const JITTER_LADDER: [f64; 4] = [1e-10, 1e-8, 1e-6, 1e-4];

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
///
/// The input is symmetrized as `(A + Aᵀ)/2` before decomposition. Eigenvector
/// columns follow the eigenvalue order.
pub fn sym_eigen_desc<T: Scalar>(a: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let sym = (a + a.transpose()) * T::lit(0.5);
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps deterministic order on exact ties
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Orthonormalizes the columns of `a` with a thin QR, preserving column order.
///
/// Signs are fixed so that `R` has a positive diagonal, hence the k-th output
/// column lies in the span of the first k input columns and points the same
/// way as the k-th input column's component orthogonal to the previous ones.
pub fn orthonormalize<T: Scalar>(a: &DMatrix<T>) -> Result<DMatrix<T>> {
    let (n, d) = a.shape();
    if d == 0 || n < d {
        return Err(Error::RankDeficient);
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("orthonormalize input"));
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let mut q = qr.q();
    let scale = a
        .column_iter()
        .map(|c| c.norm())
        .fold(T::zero(), |m, v| if v > m { v } else { m });
    let tol = T::lit(1e-12) * scale.max(T::one());
    for k in 0..d {
        let rk = r[(k, k)];
        if rk.abs() <= tol {
            return Err(Error::RankDeficient);
        }
        if rk < T::zero() {
            let mut col = q.column_mut(k);
            col.neg_mut();
        }
    }
    Ok(q)
}

/// Frobenius norm of `QᵀQ − I`.
pub fn orthogonality_defect<T: Scalar>(q: &DMatrix<T>) -> T {
    let gram = q.transpose() * q;
    (gram - DMatrix::identity(q.ncols(), q.ncols())).norm()
}

/// Result of a Cholesky factorization that needed a diagonal shift.
pub struct JitteredCholesky<T: Scalar> {
    pub factor: Cholesky<T, Dyn>,
    pub jitter: T,
}

/// Factorizes `k + jitter·I`, walking [`JITTER_LADDER`] until success.
pub fn jittered_cholesky<T: Scalar>(k: &DMatrix<T>) -> Result<JitteredCholesky<T>> {
    let n = k.nrows();
    let mut last = 0.0;
    for &j in JITTER_LADDER.iter() {
        let jitter = T::lit(j);
        let mut shifted = k.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        if let Some(factor) = Cholesky::new(shifted) {
            if factor.l_dirty().diagonal().iter().all(|v| v.is_finite() && *v > T::zero()) {
                return Ok(JitteredCholesky { factor, jitter });
            }
        }
        last = j;
    }
    Err(Error::NotPositiveDefinite { jitter: last })
}

/// Matrix inverse square root of a symmetric positive definite matrix.
///
/// Returns `(A^{-1/2}, smallest eigenvalue)`; fails with
/// [`Error::SingularCovariance`] when an eigenvalue is at or below `tol`.
pub fn inv_sqrt_spd<T: Scalar>(a: &DMatrix<T>, tol: T) -> Result<(DMatrix<T>, T)> {
    let (values, vectors) = sym_eigen_desc(a);
    let n = values.len();
    let smallest = values[n - 1];
    if !(smallest > tol) {
        return Err(Error::SingularCovariance {
            smallest: smallest.as_f64(),
        });
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| vectors[(i, j)] / values[j].sqrt());
    Ok((&scaled * vectors.transpose(), smallest))
}

/// Sample mean of each column.
pub fn column_means<T: Scalar>(x: &DMatrix<T>) -> DVector<T> {
    let n = T::count(x.nrows());
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Sample covariance with divisor `n − 1`.
pub fn sample_covariance<T: Scalar>(x: &DMatrix<T>) -> DMatrix<T> {
    let mu = column_means(x);
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let denom = T::count(x.nrows().saturating_sub(1).max(1));
    (centered.transpose() * &centered) / denom
}
