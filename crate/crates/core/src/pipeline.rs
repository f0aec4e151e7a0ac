//! The rotated multi-fidelity pipeline: SAVE rotation of the low-fidelity
//! inputs, NARGP fits with prediction-driven re-rotation and active
//! acquisition, then a full-rotation or reduced-dimension final surrogate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::benchmarks::relative_error;
use crate::active::{acquire, should_stop, AcquisitionState, IterationRecord};
use crate::data::{sample_uniform, Dataset, Fidelity, NestedSplit};
use crate::error::{Error, Result};
use crate::gp::{fit_gp, GpConfig, GpModel};
use crate::gpdr::{fit_projected_gp, GpdrConfig};
use crate::linalg::{orthogonality_defect, orthonormalize};
use crate::multifidelity::{fit_nargp, predict_nargp, predict_nargp_mean, MultiFidelityConfig, Surrogate};
use crate::scalar::Scalar;
use crate::sdr::{save, sir, Bic, SdrMethod, SdrResult, DEFAULT_SLICES};

/// Tolerance on `‖RᵀR − I‖_F` for a matrix accepted as a rotation.
pub const ORTHOGONALITY_TOL: f64 = 1e-8;
/// Default size of the generated sample behind each re-rotation SAVE.
pub const DEFAULT_SDR_SAMPLES: usize = 40_000;

/// Terminal surrogate of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Flag {
    /// GP on the fully rotated high-fidelity inputs.
    Rotate,
    /// GP on `d̂` learned directions inside the leading `s` rotated ones.
    Reduce,
}

impl Flag {
    pub fn code(self) -> u8 {
        match self {
            Flag::Rotate => 0,
            Flag::Reduce => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Flag::Rotate),
            1 => Some(Flag::Reduce),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmfgpConfig {
    pub flag: Flag,
    /// Intermediate dimension kept before the projected GP (`flag = Reduce`).
    pub s: usize,
    pub slices: usize,
    /// Points acquired per iteration; the last entry repeats.
    pub batch_sizes: Vec<usize>,
    pub max_iters: usize,
    /// Relative-error stop threshold; `0` disables it.
    pub eta: f64,
    pub mf: MultiFidelityConfig,
    pub gpdr: GpdrConfig,
    pub final_gp: GpConfig,
    pub seed: u64,
    pub estimator: SdrMethod,
    /// When nonzero, the re-rotation SAVE runs on NARGP predictions at this
    /// many inputs drawn uniformly over the bounding box of the low-fidelity
    /// and test inputs, instead of at the test inputs.
    pub sdr_samples: usize,
    /// Forces every rotation to the identity. Testing only.
    #[serde(default)]
    pub identity_rotations: bool,
}

impl Default for RmfgpConfig {
    fn default() -> Self {
        Self {
            flag: Flag::Reduce,
            s: 3,
            slices: DEFAULT_SLICES,
            batch_sizes: vec![5, 5],
            max_iters: 2,
            eta: 0.0,
            mf: MultiFidelityConfig::default(),
            gpdr: GpdrConfig::default(),
            final_gp: GpConfig::default().with_restarts(5),
            seed: 0,
            estimator: SdrMethod::Save,
            sdr_samples: DEFAULT_SDR_SAMPLES,
            identity_rotations: false,
        }
    }
}

impl RmfgpConfig {
    /// Sets the batch schedule and a matching iteration budget.
    pub fn with_batches(mut self, batch_sizes: Vec<usize>) -> Self {
        self.max_iters = batch_sizes.len();
        self.batch_sizes = batch_sizes;
        self
    }

    /// Sets the run seed and derives the final-surrogate and projection seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.final_gp.seed = self.iteration_seed(usize::MAX);
        self.gpdr.gp.seed = self.iteration_seed(usize::MAX - 1);
        self
    }

    pub fn with_flag(mut self, flag: Flag) -> Self {
        self.flag = flag;
        self
    }

    fn iteration_seed(&self, iteration: usize) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(iteration as u64)
    }
}

/// `X·R` after checking that `R` is orthogonal.
pub fn rotate_inputs<T: Scalar>(x: &DMatrix<T>, r: &DMatrix<T>) -> Result<DMatrix<T>> {
    if !r.is_square() || r.nrows() != x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            found: r.nrows(),
        });
    }
    let defect = orthogonality_defect(r).as_f64();
    if !(defect <= ORTHOGONALITY_TOL) {
        return Err(Error::NotOrthogonal { deviation: defect });
    }
    Ok(x * r)
}

/// `n` points uniform over the per-column range of the stacked `sources`.
pub fn bounding_box_sample<T: Scalar>(sources: &[&DMatrix<T>], n: usize, seed: u64) -> Result<DMatrix<T>> {
    let p = sources.first().map_or(0, |x| x.ncols());
    let mut lo = vec![T::lit(f64::INFINITY); p];
    let mut hi = vec![T::lit(f64::NEG_INFINITY); p];
    for x in sources {
        if x.ncols() != p {
            return Err(Error::DimensionMismatch { expected: p, found: x.ncols() });
        }
        for (j, col) in x.column_iter().enumerate() {
            lo[j] = col.iter().copied().fold(lo[j], T::min);
            hi[j] = col.iter().copied().fold(hi[j], T::max);
        }
    }
    if lo.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("bounding box needs at least one row".into()));
    }
    let mut u: DMatrix<T> = sample_uniform(n, p, seed)?;
    for (j, mut col) in u.column_iter_mut().enumerate() {
        col.apply(|v| *v = lo[j] + (hi[j] - lo[j]) * *v);
    }
    Ok(u)
}

/// Everything the acquisition loop produced, shared by both terminal flags.
#[derive(Debug, Clone)]
pub struct LoopOutcome<T: Scalar> {
    pub a_t: DMatrix<T>,
    pub a_hats: Vec<DMatrix<T>>,
    pub m1: DMatrix<T>,
    /// Prediction-SAVE of the last iteration, in the coordinates it ran in.
    pub final_sdr: SdrResult<T>,
    /// Inputs of the re-rotation SAVE in original coordinates, when they
    /// differ from the test inputs.
    pub sdr_inputs: Option<DMatrix<T>>,
    /// Last NARGP mean on the test inputs.
    pub final_prediction: DVector<T>,
    /// High-fidelity data in original coordinates, in labelling order.
    pub final_high: Dataset<T>,
    pub high_indices: Vec<usize>,
    pub history: Vec<IterationRecord>,
}

/// GP applied to `x·transform` for original `p`-dimensional queries.
#[derive(Debug, Clone)]
pub struct FinalSurrogate<T: Scalar> {
    pub transform: DMatrix<T>,
    pub model: GpModel<T>,
}

impl<T: Scalar> FinalSurrogate<T> {
    pub fn predict_mean(&self, x: &DMatrix<T>) -> Result<DVector<T>> {
        self.check(x)?;
        self.model.predict_mean(&(x * &self.transform))
    }

    fn check(&self, x: &DMatrix<T>) -> Result<()> {
        if x.ncols() != self.transform.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.transform.nrows(),
                found: x.ncols(),
            });
        }
        Ok(())
    }
}

impl<T: Scalar> Surrogate<T> for FinalSurrogate<T> {
    fn input_dim(&self) -> usize {
        self.transform.nrows()
    }

    fn predict(&self, x: &DMatrix<T>) -> Result<(DVector<T>, DVector<T>)> {
        self.check(x)?;
        self.model.predict(&(x * &self.transform))
    }
}

#[derive(Debug, Clone)]
pub struct RmfgpResult<T: Scalar> {
    pub flag: Flag,
    pub a_t: DMatrix<T>,
    pub a_hats: Vec<DMatrix<T>>,
    pub m1: DMatrix<T>,
    /// Leading `s` columns of `m1` (`Reduce` only).
    pub m1_hat: Option<DMatrix<T>>,
    /// Projection learned on the `s` rotated inputs (`Reduce` only).
    pub m2: Option<DMatrix<T>>,
    /// `m1` under `Rotate`, the orthonormalized `M̂1·M2` under `Reduce`.
    pub m: DMatrix<T>,
    pub d_hat: Option<usize>,
    pub bic: Bic,
    pub final_eigenvalues: Vec<f64>,
    pub surrogate: FinalSurrogate<T>,
    pub final_high: Dataset<T>,
    pub high_indices: Vec<usize>,
    pub history: Vec<IterationRecord>,
    pub gpdr_lml_trace: Vec<f64>,
}

fn rotation_of<T: Scalar>(x: &DMatrix<T>, y: &DVector<T>, config: &RmfgpConfig) -> Result<SdrResult<T>> {
    match config.estimator {
        SdrMethod::Save => save(x, y, config.slices),
        SdrMethod::Sir => sir(x, y, config.slices),
    }
}

/// Runs the acquisition loop from `split` until the error threshold or the
/// iteration budget is reached. New points are labelled with `high_eval` on
/// their original coordinates.
pub fn run_loop<T: Scalar>(
    low: &Dataset<T>,
    split: &NestedSplit<T>,
    test: &Dataset<T>,
    high_eval: impl Fn(&[T]) -> T,
    config: &RmfgpConfig,
) -> Result<LoopOutcome<T>> {
    let p = low.dim();
    for d in [split.high.dim(), test.dim()] {
        if d != p {
            return Err(Error::DimensionMismatch { expected: p, found: d });
        }
    }
    if split.high.len() < 3 {
        return Err(Error::TooFewPoints {
            n: split.high.len(),
            slices: 3,
        });
    }
    let mut state = AcquisitionState::new(
        split.indices.clone(),
        low.len(),
        config.eta,
        config.max_iters,
        config.batch_sizes.clone(),
    )?;
    let mut high_y: Vec<T> = split.high.y().iter().copied().collect();
    let identity = DMatrix::<T>::identity(p, p);

    let a_t = if config.identity_rotations {
        identity.clone()
    } else {
        rotation_of(low.x(), low.y(), config)?.rotation
    };
    let sdr_inputs = (config.sdr_samples > 0)
        .then(|| bounding_box_sample(&[low.x(), test.x()], config.sdr_samples, config.seed ^ 0x5a5a_5a5a))
        .transpose()?;
    let mut r = a_t.clone();
    let mut a_hats = Vec::new();
    let mut iteration = 0;
    loop {
        let it_seed = config.iteration_seed(iteration);
        let mf = config.mf.clone().with_seed(it_seed);
        let xl = rotate_inputs(low.x(), &r)?;
        let xt = rotate_inputs(test.x(), &r)?;
        let rot_low = Dataset::new(xl.clone(), low.y().clone(), Fidelity::Low)?;
        let rot_high = Dataset::new(
            xl.select_rows(&state.high_indices),
            DVector::from_vec(high_y.clone()),
            Fidelity::High,
        )?;
        let model = fit_nargp(&rot_low, &rot_high, &mf)?;
        let (pred, _) = predict_nargp(&model, &xt, mf.n_mc, mf.mc_seed)?;
        let err = relative_error(test.y(), &pred)?;
        let sdr = match &sdr_inputs {
            Some(xs) => {
                let xs = rotate_inputs(xs, &r)?;
                let ys = predict_nargp_mean(&model, &xs, mf.n_mc, mf.mc_seed.wrapping_add(1))?;
                rotation_of(&xs, &ys, config)?
            }
            None => rotation_of(&xt, &pred, config)?,
        };
        let a_hat = if config.identity_rotations {
            identity.clone()
        } else {
            sdr.rotation.clone()
        };
        let stop = should_stop(err.as_f64(), &state, iteration);
        let mut chosen = Vec::new();
        if !stop {
            let k = state.batch_size(iteration);
            let pool_x = xl.select_rows(&state.pool_indices);
            let positions = acquire(&model, &pool_x, k, mf.n_mc, it_seed ^ 0xacc0)?;
            chosen = state.commit(&positions)?;
            for &i in &chosen {
                let row: Vec<T> = low.x().row(i).iter().copied().collect();
                high_y.push(high_eval(&row));
            }
        }
        log::info!(
            "iteration {iteration}: relative error {:.6e}, n_high {}",
            err.as_f64(),
            state.high_indices.len()
        );
        state.history.push(IterationRecord {
            iteration,
            chosen,
            relative_error: err.as_f64(),
            n_high: state.high_indices.len(),
        });
        r = &r * &a_hat;
        a_hats.push(a_hat);
        if stop {
            let final_high = Dataset::new(
                low.x().select_rows(&state.high_indices),
                DVector::from_vec(high_y),
                Fidelity::High,
            )?;
            return Ok(LoopOutcome {
                a_t,
                a_hats,
                m1: r,
                final_sdr: sdr,
                sdr_inputs,
                final_prediction: pred,
                final_high,
                high_indices: state.high_indices,
                history: state.history,
            });
        }
        iteration += 1;
    }
}

/// Terminal step for `flag`, applied to a finished loop.
pub fn build_final_surrogate<T: Scalar>(
    outcome: &LoopOutcome<T>,
    flag: Flag,
    config: &RmfgpConfig,
) -> Result<RmfgpResult<T>> {
    let p = outcome.m1.nrows();
    let bic = outcome.final_sdr.bic(outcome.final_sdr.n)?;
    let final_eigenvalues: Vec<f64> = outcome.final_sdr.eigenvalues.iter().map(|v| v.as_f64()).collect();
    let x = outcome.final_high.x();
    let y = outcome.final_high.y();
    if flag == Flag::Rotate {
        return Ok(RmfgpResult {
        flag,
        a_t: outcome.a_t.clone(),
        a_hats: outcome.a_hats.clone(),
        m1: outcome.m1.clone(),
        m1_hat: None,
        m2: None,
        m: outcome.m1.clone(),
        d_hat: None,
        bic,
        final_eigenvalues,
        surrogate: FinalSurrogate {
            transform: outcome.m1.clone(),
            model: fit_gp(&rotate_inputs(x, &outcome.m1)?, y, &config.final_gp)?,
        },
        final_high: outcome.final_high.clone(),
        high_indices: outcome.high_indices.clone(),
        history: outcome.history.clone(),
        gpdr_lml_trace: Vec::new(),
        });
    }
    let (d_hat, s) = (bic.d_hat, config.s);
    if !(d_hat < s && s < p) {
        return Err(Error::DimensionOrder { d_hat, s, p });
    }
    let m1_hat = outcome.m1.columns(0, s).into_owned();
    let gpdr = &config.gpdr;
    let fit = fit_projected_gp(&(x * &m1_hat), y, d_hat, None, None, gpdr)?;
    let m = orthonormalize(&(&m1_hat * &fit.w))?;
    // refit on the orthonormal transform so predictions use exactly `m`
    let model = fit_gp(&(x * &m), y, &gpdr.gp)?;
    Ok(RmfgpResult {
        flag,
        a_t: outcome.a_t.clone(),
        a_hats: outcome.a_hats.clone(),
        m1: outcome.m1.clone(),
        m1_hat: Some(m1_hat),
        m2: Some(fit.w),
        m: m.clone(),
        d_hat: Some(d_hat),
        bic,
        final_eigenvalues,
        surrogate: FinalSurrogate { transform: m, model },
        final_high: outcome.final_high.clone(),
        high_indices: outcome.high_indices.clone(),
        history: outcome.history.clone(),
        gpdr_lml_trace: fit.lml_trace,
    })
}

/// Loop plus the terminal step selected by `config.flag`.
pub fn run_rmfgp<T: Scalar>(
    low: &Dataset<T>,
    split: &NestedSplit<T>,
    test: &Dataset<T>,
    high_eval: impl Fn(&[T]) -> T,
    config: &RmfgpConfig,
) -> Result<RmfgpResult<T>> {
    let outcome = run_loop(low, split, test, high_eval, config)?;
    build_final_surrogate(&outcome, config.flag, config)
}
