//! Variance-maximizing acquisition over the low-fidelity candidate pool.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multifidelity::{predict_nargp, NargpModel};
use crate::scalar::Scalar;

/// One pass of the acquisition loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Low-fidelity row indices labelled after this iteration (empty on the last).
    pub chosen: Vec<usize>,
    pub relative_error: f64,
    pub n_high: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionState {
    /// Low-fidelity rows not yet labelled, ascending.
    pub pool_indices: Vec<usize>,
    /// Low-fidelity rows labelled at high fidelity, in labelling order.
    pub high_indices: Vec<usize>,
    /// Relative-error threshold; `0` disables the error criterion.
    pub eta: f64,
    pub max_iters: usize,
    pub batch_sizes: Vec<usize>,
    pub history: Vec<IterationRecord>,
}

impl AcquisitionState {
    pub fn new(high_indices: Vec<usize>, low_len: usize, eta: f64, max_iters: usize, batch_sizes: Vec<usize>) -> Result<Self> {
        let mut taken = vec![false; low_len];
        for &i in &high_indices {
            if i >= low_len || taken[i] {
                return Err(Error::InvalidArgument(format!("invalid or repeated high-fidelity index {i}")));
            }
            taken[i] = true;
        }
        Ok(Self {
            pool_indices: (0..low_len).filter(|&i| !taken[i]).collect(),
            high_indices,
            eta,
            max_iters,
            batch_sizes,
            history: Vec::new(),
        })
    }

    /// Batch size for `iteration`; the last entry repeats when the list is short.
    pub fn batch_size(&self, iteration: usize) -> usize {
        self.batch_sizes
            .get(iteration)
            .or(self.batch_sizes.last())
            .copied()
            .unwrap_or(0)
    }

    /// Moves the pool entries at `positions` into the high-fidelity set and
    /// returns their low-fidelity row indices.
    pub fn commit(&mut self, positions: &[usize]) -> Result<Vec<usize>> {
        let mut sorted = positions.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != positions.len() || sorted.last().is_some_and(|&p| p >= self.pool_indices.len()) {
            return Err(Error::InvalidArgument("pool positions must be distinct and in range".into()));
        }
        let chosen: Vec<usize> = positions.iter().map(|&p| self.pool_indices[p]).collect();
        for &p in sorted.iter().rev() {
            self.pool_indices.remove(p);
        }
        self.high_indices.extend_from_slice(&chosen);
        Ok(chosen)
    }
}

/// True iff `relative_error < eta` or the iteration budget is spent.
pub fn should_stop(relative_error: f64, state: &AcquisitionState, iteration: usize) -> bool {
    relative_error < state.eta || iteration >= state.max_iters
}

/// Positions of the `k` largest values, largest first; ties go to the lower position.
pub fn top_k<T: Scalar>(values: &DVector<T>, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Rows of `pool_x` with the `k` largest NARGP predictive variances, from a
/// single variance pass.
pub fn acquire<T: Scalar>(model: &NargpModel<T>, pool_x: &DMatrix<T>, k: usize, n_mc: usize, seed: u64) -> Result<Vec<usize>> {
    if pool_x.nrows() == 0 {
        return Err(Error::EmptyPool);
    }
    if k > pool_x.nrows() {
        return Err(Error::InvalidArgument(format!(
            "batch of {k} exceeds pool of {}",
            pool_x.nrows()
        )));
    }
    let (_, var) = predict_nargp(model, pool_x, n_mc, seed)?;
    Ok(top_k(&var, k))
}
