//! Datasets, seeded sampling, standardization and nested fidelity splits.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{column_means, inv_sqrt_spd, sample_covariance};
use crate::scalar::Scalar;

/// Identifier of the random generator used for every seeded draw in the crate.
pub const RNG_ALGORITHM: &str = "ChaCha8Rng (rand_chacha 0.9)";

/// Seeded generator used throughout the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seeded generator on an independent stream, e.g. one per query point.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fidelity {
    Low,
    High,
    Test,
}

/// Inputs, responses and the fidelity tier they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Scalar> {
    x: DMatrix<T>,
    y: DVector<T>,
    fidelity: Fidelity,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(x: DMatrix<T>, y: DVector<T>, fidelity: Fidelity) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidArgument("dataset needs n >= 1 and p >= 1".into()));
        }
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: y.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset inputs"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset responses"));
        }
        Ok(Self { x, y, fidelity })
    }

    /// Builds a dataset by evaluating `f` on every row of `x`.
    pub fn from_fn(x: DMatrix<T>, fidelity: Fidelity, f: impl Fn(&[T]) -> T) -> Result<Self> {
        let y = evaluate_rows(&x, f);
        Self::new(x, y, fidelity)
    }

    pub fn x(&self) -> &DMatrix<T> {
        &self.x
    }

    pub fn y(&self) -> &DVector<T> {
        &self.y
    }

    pub fn fidelity(&self) -> Fidelity {
        self.fidelity
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn into_parts(self) -> (DMatrix<T>, DVector<T>, Fidelity) {
        (self.x, self.y, self.fidelity)
    }

    /// Returns a copy holding only the listed rows, in the listed order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
            fidelity: self.fidelity,
        }
    }

    pub fn with_fidelity(mut self, fidelity: Fidelity) -> Self {
        self.fidelity = fidelity;
        self
    }

    /// Writes `x1,...,xp,y` CSV with 17 significant digits per value.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.dim()).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.x.row(i).iter().map(|v| format_f64(v.as_f64())).collect();
            rec.push(format_f64(self.y[i].as_f64()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, fidelity: Fidelity) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let p = headers.len().checked_sub(1).filter(|&p| p > 0).ok_or_else(|| {
            Error::InvalidArgument("CSV needs at least one input column and y".into())
        })?;
        if headers.get(p) != Some("y") {
            return Err(Error::InvalidArgument("last CSV column must be `y`".into()));
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != p + 1 {
                return Err(Error::DimensionMismatch {
                    expected: p + 1,
                    found: rec.len(),
                });
            }
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad number `{field}`")))?;
                if j < p {
                    xs.push(T::lit(v));
                } else {
                    ys.push(T::lit(v));
                }
            }
        }
        let n = ys.len();
        Self::new(DMatrix::from_row_slice(n, p, &xs), DVector::from_vec(ys), fidelity)
    }
}

/// Formats a float with 17 significant digits (lossless for `f64`).
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Applies `f` to each row of `x`.
pub fn evaluate_rows<T: Scalar>(x: &DMatrix<T>, f: impl Fn(&[T]) -> T) -> DVector<T> {
    let mut buf = vec![T::zero(); x.ncols()];
    DVector::from_iterator(
        x.nrows(),
        (0..x.nrows()).map(|i| {
            for (b, v) in buf.iter_mut().zip(x.row(i).iter()) {
                *b = *v;
            }
            f(&buf)
        }),
    )
}

/// `n × p` matrix of i.i.d. uniform draws on `[0, 1)`.
pub fn sample_uniform<T: Scalar>(n: usize, p: usize, seed: u64) -> Result<DMatrix<T>> {
    if n == 0 || p == 0 {
        return Err(Error::InvalidArgument("sample_uniform needs n >= 1 and p >= 1".into()));
    }
    let mut rng = seeded_rng(seed);
    // row-major fill so that (n, p, seed) prefixes agree across n
    let mut values = Vec::with_capacity(n * p);
    for _ in 0..n * p {
        let u: f64 = rng.random();
        values.push(T::lit(u));
    }
    Ok(DMatrix::from_row_slice(n, p, &values))
}

/// Affine map taking inputs to zero mean and (approximately) identity covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer<T: Scalar> {
    pub mu: DVector<T>,
    pub sigma_inv_sqrt: DMatrix<T>,
    pub ridge: T,
}

/// Fits `μ̂` and `(Σ̂ + ridge·I)^{-1/2}` with the `n − 1` covariance divisor.
pub fn fit_standardizer<T: Scalar>(x: &DMatrix<T>, ridge: T) -> Result<Standardizer<T>> {
    if x.nrows() < 2 {
        return Err(Error::TooFewPoints {
            n: x.nrows(),
            slices: 1,
        });
    }
    if ridge < T::zero() {
        return Err(Error::InvalidArgument("ridge must be non-negative".into()));
    }
    let mu = column_means(x);
    let mut cov = sample_covariance(x);
    for i in 0..cov.nrows() {
        cov[(i, i)] += ridge;
    }
    let scale = cov.diagonal().amax().max(T::one());
    let tol = T::machine_epsilon() * T::count(100 * x.ncols()) * scale;
    let (sigma_inv_sqrt, _) = inv_sqrt_spd(&cov, tol)?;
    Ok(Standardizer {
        mu,
        sigma_inv_sqrt,
        ridge,
    })
}

impl<T: Scalar> Standardizer<T> {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Row-wise `Σ^{-1/2}(x − μ)`.
    pub fn apply(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        standardize(self, x)
    }
}

pub fn standardize<T: Scalar>(std: &Standardizer<T>, x: &DMatrix<T>) -> Result<DMatrix<T>> {
    if x.ncols() != std.dim() {
        return Err(Error::DimensionMismatch {
            expected: std.dim(),
            found: x.ncols(),
        });
    }
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= std.mu.transpose();
    }
    // sigma_inv_sqrt is symmetric, so right-multiplying rows applies it
    Ok(centered * &std.sigma_inv_sqrt)
}

/// A high-fidelity set drawn as a subset of low-fidelity inputs.
#[derive(Debug, Clone)]
pub struct NestedSplit<T: Scalar> {
    pub high: Dataset<T>,
    /// Row indices into the low-fidelity dataset, in selection order.
    pub indices: Vec<usize>,
    low_len: usize,
}

impl<T: Scalar> NestedSplit<T> {
    /// Low-fidelity rows not (yet) labelled at high fidelity, ascending.
    pub fn pool(&self) -> Vec<usize> {
        let mut taken = vec![false; self.low_len];
        for &i in &self.indices {
            taken[i] = true;
        }
        (0..self.low_len).filter(|&i| !taken[i]).collect()
    }

    pub fn low_len(&self) -> usize {
        self.low_len
    }
}

/// Picks `n_high` low-fidelity rows uniformly without replacement and labels
/// them with `high_eval`.
pub fn make_nested<T: Scalar>(
    low: &Dataset<T>,
    n_high: usize,
    high_eval: impl Fn(&[T]) -> T,
    seed: u64,
) -> Result<NestedSplit<T>> {
    if n_high == 0 {
        return Err(Error::InvalidArgument("n_high must be at least 1".into()));
    }
    if n_high > low.len() {
        return Err(Error::InvalidArgument(format!(
            "n_high ({n_high}) exceeds the low-fidelity size ({})",
            low.len()
        )));
    }
    let mut rng = seeded_rng(seed);
    let indices = rand::seq::index::sample(&mut rng, low.len(), n_high).into_vec();
    let x = low.x().select_rows(&indices);
    let high = Dataset::from_fn(x, Fidelity::High, high_eval)?;
    Ok(NestedSplit {
        high,
        indices,
        low_len: low.len(),
    })
}

impl<T: Scalar> NestedSplit<T> {
    /// Assembles a split from explicit indices (used when resuming acquisition).
    pub fn from_indices(
        low: &Dataset<T>,
        indices: Vec<usize>,
        high_eval: impl Fn(&[T]) -> T,
    ) -> Result<Self> {
        if indices.iter().any(|&i| i >= low.len()) {
            return Err(Error::InvalidArgument("index out of range".into()));
        }
        let high = Dataset::from_fn(low.x().select_rows(&indices), Fidelity::High, high_eval)?;
        Ok(Self {
            high,
            indices,
            low_len: low.len(),
        })
    }
}
