//! Slow reference solver for small problems: accelerated projected gradient
//! on the dual, run until the projected-gradient step vanishes.

use ndarray::ArrayView2;

use super::smo::finish;
use super::{check_training_data, SvrModel, SvrTrainConfig};
use crate::error::{Result, SrrmError};
use crate::kernels::kernel_matrix;
use crate::scalar::Scalar;

/// Largest training set the reference solver accepts.
pub const ORACLE_MAX_SAMPLES: usize = 10;

const STATIONARITY: f64 = 1e-10;
const MAX_ITERS: usize = 5_000_000;

/// Projection onto `{a : 0 ≤ a ≤ C, Σ_{t<n} a_t = Σ_{t≥n} a_t}`.
///
/// The solution is `a_t = clip(v_t − λ s_t, 0, C)` with `s_t = ±1`; the
/// balance `g(λ)` is piecewise linear and non-increasing, so `λ` is found
/// exactly by locating the sign change among the breakpoints.
fn project(v: &[f64], c: f64) -> Vec<f64> {
    let n = v.len() / 2;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let at = |lambda: f64| -> Vec<f64> { (0..v.len()).map(|t| (v[t] - lambda * sign(t)).clamp(0.0, c)).collect() };
    let balance = |lambda: f64| -> f64 { at(lambda).iter().enumerate().map(|(t, a)| sign(t) * a).sum() };

    let mut points: Vec<f64> = (0..v.len())
        .flat_map(|t| [v[t] * sign(t), (v[t] - c) * sign(t)])
        .collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    // g ≥ 0 left of the root, ≤ 0 right of it.
    let values: Vec<f64> = points.iter().map(|&l| balance(l)).collect();
    if let Some(k) = values.iter().position(|&g| g == 0.0) {
        return at(points[k]);
    }
    let k = values.iter().position(|&g| g < 0.0).unwrap_or(points.len());
    let lambda = if k == 0 || k == points.len() {
        // Unreachable for a feasible box: g(−∞) > 0 > g(+∞) and the extreme
        // breakpoints already saturate every coordinate.
        points[k.min(points.len() - 1)]
    } else {
        let (l0, l1) = (points[k - 1], points[k]);
        let (g0, g1) = (values[k - 1], values[k]);
        l0 + (l1 - l0) * g0 / (g0 - g1)
    };
    at(lambda)
}

/// Trains an ε-SVR on at most [`ORACLE_MAX_SAMPLES`] points with an
/// independent solver, for cross-checking [`super::svr_train`].
///
/// Works in `f64` regardless of `T`. The bias is read off the final
/// gradient: the mean over free coefficients, else the midpoint of the
/// interval allowed by the bounded ones.
pub fn svr_train_bruteforce<T: Scalar>(x: ArrayView2<'_, T>, y: &[T], cfg: &SvrTrainConfig<T>) -> Result<SvrModel<T>> {
    cfg.validate()?;
    check_training_data(x, y)?;
    let n = x.nrows();
    if n > ORACLE_MAX_SAMPLES {
        return Err(SrrmError::InvalidArgument(format!(
            "brute-force solver limited to {ORACLE_MAX_SAMPLES} samples, got {n}"
        )));
    }
    let xf = x.mapv(|v| v.as_f64());
    let k = kernel_matrix(xf.view(), cfg.sigma.as_f64())?;
    let c = cfg.c.as_f64();
    let eps = cfg.epsilon.as_f64();
    let yf: Vec<f64> = y.iter().map(|v| v.as_f64()).collect();
    let m = 2 * n;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let q = |s: usize, t: usize| sign(s) * sign(t) * k[[s % n, t % n]];
    let p: Vec<f64> = (0..m).map(|t| eps - sign(t) * yf[t % n]).collect();
    let grad = |a: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|s| p[s] + (0..m).map(|t| q(s, t) * a[t]).sum::<f64>())
            .collect()
    };
    let objective = |a: &[f64]| -> f64 {
        let g = grad(a);
        (0..m).map(|t| 0.5 * a[t] * (g[t] + p[t])).sum()
    };
    // ‖Q‖ ≤ 2·max row sum of |K|.
    let lipschitz = (0..n)
        .map(|i| (0..n).map(|j| k[[i, j]].abs()).sum::<f64>())
        .fold(0.0, f64::max)
        * 2.0;
    let step = 1.0 / lipschitz;

    let mut a = vec![0.0; m];
    let mut z = a.clone();
    let mut momentum = 1.0_f64;
    let mut f_prev = objective(&a);
    let mut iterations = 0;
    loop {
        let g = grad(&z);
        let trial: Vec<f64> = (0..m).map(|t| z[t] - step * g[t]).collect();
        let next = project(&trial, c);
        let f_next = objective(&next);
        if f_next > f_prev && momentum > 1.0 {
            // restart momentum from the last accepted point; a plain
            // projected step from there is always taken, so rounding-level
            // increases near the optimum cannot stall the loop
            z = a.clone();
            momentum = 1.0;
        } else {
            let m_next = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
            let w = (momentum - 1.0) / m_next;
            z = (0..m).map(|t| next[t] + w * (next[t] - a[t])).collect();
            momentum = m_next;
            a = next;
            f_prev = f_next;
        }
        iterations += 1;

        if iterations % 16 == 0 {
            let ga = grad(&a);
            let moved = project(&(0..m).map(|t| a[t] - step * ga[t]).collect::<Vec<_>>(), c);
            let mapping = (0..m).map(|t| (a[t] - moved[t]).powi(2)).sum::<f64>().sqrt() / step;
            if mapping < STATIONARITY {
                break;
            }
        }
        if iterations >= MAX_ITERS {
            return Err(SrrmError::NonConvergence {
                iterations,
                violation: f64::NAN,
            });
        }
    }

    let g = grad(&a);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut n_free) = (0.0, 0usize);
    let slack = 1e-12 * c;
    for t in 0..m {
        let yg = sign(t) * g[t];
        // With y_t = +1 a variable at its lower bound caps ρ from above,
        // at its upper bound from below; reversed for y_t = −1.
        let upper = a[t] >= c - slack;
        let lower = a[t] <= slack;
        match (upper, lower, t < n) {
            (true, _, true) | (false, true, false) => lb = lb.max(yg),
            (true, _, false) | (false, true, true) => ub = ub.min(yg),
            _ => {
                free_sum += yg;
                n_free += 1;
            }
        }
    }
    let rho = if n_free > 0 {
        free_sum / n_free as f64
    } else {
        (ub + lb) / 2.0
    };

    let beta: Vec<T> = (0..n).map(|i| T::of(a[i] - a[i + n])).collect();
    finish(x, y, &beta, T::of(-rho), cfg)
}
