//! Box-constrained limited-memory quasi-Newton minimizer.
//!
//! A projected L-BFGS: the two-loop recursion runs on the free variables,
//! variables pinned at a bound with the gradient pushing outward are frozen
//! for the step, and a backtracking Armijo search walks the projected path.

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub max_iters: usize,
    pub memory: usize,
    /// Stop when the projected gradient's max-norm drops below this.
    pub gtol: f64,
    /// Stop when the relative decrease of the objective drops below this.
    pub ftol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            memory: 8,
            gtol: 1e-6,
            ftol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum<T: Scalar> {
    pub x: DVector<T>,
    pub value: T,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn project<T: Scalar>(x: &mut DVector<T>, bounds: &[(T, T)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        if *v < lo {
            *v = lo;
        } else if *v > hi {
            *v = hi;
        }
    }
}

/// Zeroes gradient components that point out of the feasible box.
fn projected_gradient<T: Scalar>(x: &DVector<T>, g: &DVector<T>, bounds: &[(T, T)]) -> DVector<T> {
    DVector::from_fn(x.len(), |i, _| {
        let (lo, hi) = bounds[i];
        let gi = g[i];
        if (x[i] <= lo && gi > T::zero()) || (x[i] >= hi && gi < T::zero()) {
            T::zero()
        } else {
            gi
        }
    })
}

/// Minimizes `f` over the box `bounds`, starting from `x0`.
///
/// `f` returns `None` when the objective cannot be evaluated at a point; such
/// points are treated as infinitely bad by the line search. Returns `None` if
/// `f` fails at the (projected) starting point.
pub fn minimize_bounded<T, F>(
    mut f: F,
    x0: &DVector<T>,
    bounds: &[(T, T)],
    opts: &LbfgsOptions,
) -> Option<Minimum<T>>
where
    T: Scalar,
    F: FnMut(&DVector<T>) -> Option<(T, DVector<T>)>,
{
    assert_eq!(x0.len(), bounds.len(), "bounds length must match x0");
    let mut x = x0.clone();
    project(&mut x, bounds);
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut evals = 1;
    let mut history: VecDeque<(DVector<T>, DVector<T>, T)> = VecDeque::new();
    let gtol = T::lit(opts.gtol);
    let ftol = T::lit(opts.ftol);
    let c1 = T::lit(1e-4);
    let mut converged = false;
    let mut iterations = 0;
    let mut stalled = 0;

    for iter in 0..opts.max_iters {
        iterations = iter + 1;
        let pg = projected_gradient(&x, &g, bounds);
        if pg.amax() < gtol {
            converged = true;
            break;
        }
        let free: Vec<bool> = pg
            .iter()
            .zip(g.iter())
            .map(|(p, gi)| *p != T::zero() || *gi == T::zero())
            .collect();
        let masked = |v: &DVector<T>| DVector::from_fn(v.len(), |i, _| if free[i] { v[i] } else { T::zero() });

        // two-loop recursion on the free subspace
        let mut q = masked(&g);
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = *rho * masked(s).dot(&q);
            q -= masked(y) * a;
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let ys = masked(y).dot(&masked(s));
            let yy = masked(y).norm_squared();
            if ys > T::zero() && yy > T::zero() {
                q *= ys / yy;
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let b = *rho * masked(y).dot(&q);
            q += masked(s) * (a - b);
        }
        let mut dir = -masked(&q);
        let mut slope = dir.dot(&g);
        if !(slope < T::zero()) {
            history.clear();
            dir = -pg.clone();
            slope = dir.dot(&g);
        }
        let mut step = if history.is_empty() {
            (T::one() / dir.amax()).min(T::one())
        } else {
            T::one()
        };

        let mut accepted = None;
        for _ in 0..40 {
            let mut trial = &x + &dir * step;
            project(&mut trial, bounds);
            let actual = &trial - &x;
            if actual.amax() == T::zero() {
                break;
            }
            evals += 1;
            if let Some((ft, gt)) = f(&trial) {
                if ft.is_finite()
                    && gt.iter().all(|v| v.is_finite())
                    && ft <= fx + c1 * g.dot(&actual).min(T::zero())
                {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= T::lit(0.5);
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            if history.is_empty() {
                break;
            }
            history.clear();
            continue;
        };
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        let decrease = fx - f_new;
        x = x_new;
        g = g_new;
        let f_prev = fx;
        fx = f_new;
        if sy > T::lit(1e-12) * y.norm() * s.norm() && sy > T::zero() {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, T::one() / sy));
        }
        if decrease.abs() <= ftol * (T::one() + f_prev.abs()) {
            stalled += 1;
            if stalled >= 3 {
                converged = true;
                break;
            }
        } else {
            stalled = 0;
        }
    }

    Some(Minimum {
        x,
        value: fx,
        iterations,
        evaluations: evals,
        converged,
    })
}
