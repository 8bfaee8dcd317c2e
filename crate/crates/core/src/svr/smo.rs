//! Sequential minimal optimization on the 2n-variable form of the dual.
//!
//! Variables `a_t` for `t < n` are the `αᵢ` (label `+1`), for `t ≥ n` the
//! `αᵢ*` (label `−1`). The solver minimizes `½ aᵀQa + pᵀa` subject to
//! `Σ y_t a_t = 0`, `0 ≤ a_t ≤ C`, picking the maximal violating pair each
//! step.

use ndarray::{Array2, ArrayView2};

use super::{check_training_data, kkt_violation, SvrModel, SvrTrainConfig, SUPPORT_THRESHOLD};
use crate::error::{Result, SrrmError};
use crate::kernels::{kernel_matrix, KernelSpec};
use crate::scalar::Scalar;

/// Curvature substituted for non-positive pair curvature.
const TAU: f64 = 1e-12;

struct Problem<T: Scalar> {
    n: usize,
    k: Array2<T>,
    c: T,
    a: Vec<T>,
    grad: Vec<T>,
}

impl<T: Scalar> Problem<T> {
    fn label(&self, t: usize) -> T {
        if t < self.n {
            T::one()
        } else {
            -T::one()
        }
    }

    fn q(&self, s: usize, t: usize) -> T {
        self.label(s) * self.label(t) * self.k[[s % self.n, t % self.n]]
    }

    fn in_up(&self, t: usize) -> bool {
        if t < self.n {
            self.a[t] < self.c
        } else {
            self.a[t] > T::zero()
        }
    }

    fn in_low(&self, t: usize) -> bool {
        if t < self.n {
            self.a[t] > T::zero()
        } else {
            self.a[t] < self.c
        }
    }

    /// Maximal violating pair and its gap `m − M`.
    fn select(&self) -> Option<(usize, usize, T)> {
        let mut i = None;
        let mut gmax = T::neg_infinity();
        let mut j = None;
        let mut gmin = T::infinity();
        for t in 0..2 * self.n {
            let v = -self.label(t) * self.grad[t];
            if self.in_up(t) && v > gmax {
                gmax = v;
                i = Some(t);
            }
            if self.in_low(t) && v < gmin {
                gmin = v;
                j = Some(t);
            }
        }
        Some((i?, j?, gmax - gmin))
    }

    fn step(&mut self, i: usize, j: usize) {
        let c = self.c;
        let (old_i, old_j) = (self.a[i], self.a[j]);
        let qij = self.q(i, j);
        let (ai, aj) = if self.label(i) != self.label(j) {
            let mut quad = T::of(2.0) + T::of(2.0) * qij;
            if quad <= T::zero() {
                quad = T::of(TAU);
            }
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = old_i - old_j;
            let (mut ai, mut aj) = (old_i + delta, old_j + delta);
            if diff > T::zero() {
                if aj < T::zero() {
                    aj = T::zero();
                    ai = diff;
                }
            } else if ai < T::zero() {
                ai = T::zero();
                aj = -diff;
            }
            if diff > T::zero() {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
            (ai, aj)
        } else {
            let mut quad = T::of(2.0) - T::of(2.0) * qij;
            if quad <= T::zero() {
                quad = T::of(TAU);
            }
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = old_i + old_j;
            let (mut ai, mut aj) = (old_i - delta, old_j + delta);
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < T::zero() {
                aj = T::zero();
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < T::zero() {
                ai = T::zero();
                aj = sum;
            }
            (ai, aj)
        };
        self.a[i] = ai;
        self.a[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for t in 0..2 * self.n {
            let g = self.q(t, i) * di + self.q(t, j) * dj;
            self.grad[t] += g;
        }
    }

    /// Bias from the free variables, or the midpoint of the feasible
    /// interval when every variable sits at a bound.
    fn bias(&self) -> T {
        let mut ub = T::infinity();
        let mut lb = T::neg_infinity();
        let mut free_sum = T::zero();
        let mut n_free = 0usize;
        for t in 0..2 * self.n {
            let yg = self.label(t) * self.grad[t];
            let positive = t < self.n;
            if self.a[t] >= self.c {
                if positive {
                    lb = lb.max(yg);
                } else {
                    ub = ub.min(yg);
                }
            } else if self.a[t] <= T::zero() {
                if positive {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                free_sum += yg;
            }
        }
        let rho = if n_free > 0 {
            free_sum / T::of_usize(n_free)
        } else {
            (ub + lb) / T::of(2.0)
        };
        -rho
    }
}

fn build_model<T: Scalar>(x: ArrayView2<'_, T>, beta: &[T], bias: T, cfg: &SvrTrainConfig<T>) -> Result<SvrModel<T>> {
    let support_indices: Vec<usize> = (0..beta.len())
        .filter(|&i| beta[i].abs() > T::of(SUPPORT_THRESHOLD))
        .collect();
    let d = x.ncols();
    let support_vectors = Array2::from_shape_fn((support_indices.len(), d), |(s, j)| x[[support_indices[s], j]]);
    Ok(SvrModel {
        support_vectors,
        dual_coeffs: support_indices.iter().map(|&i| beta[i]).collect(),
        support_indices,
        bias,
        kernel: KernelSpec::new(cfg.sigma)?,
        c: cfg.c,
        epsilon: cfg.epsilon,
        kkt_violation: T::zero(),
    })
}

/// Finalizes a dual solution: assembles the model and records its KKT
/// violation measured on the training data.
pub(super) fn finish<T: Scalar>(
    x: ArrayView2<'_, T>,
    y: &[T],
    beta: &[T],
    bias: T,
    cfg: &SvrTrainConfig<T>,
) -> Result<SvrModel<T>> {
    let mut model = build_model(x, beta, bias, cfg)?;
    model.kkt_violation = kkt_violation(&model, x, y)?;
    Ok(model)
}

/// Trains an ε-SVR. Deterministic for a given input order.
///
/// The stopping gap is tightened until the trained model passes the KKT
/// audit at `cfg.tol`; exhausting the iteration budget first is reported as
/// [`SrrmError::NonConvergence`].
pub fn svr_train<T: Scalar>(x: ArrayView2<'_, T>, y: &[T], cfg: &SvrTrainConfig<T>) -> Result<SvrModel<T>> {
    cfg.validate()?;
    check_training_data(x, y)?;
    let n = x.nrows();
    let k = kernel_matrix(x, cfg.sigma)?;
    let mut grad = Vec::with_capacity(2 * n);
    grad.extend(y.iter().map(|&yi| cfg.epsilon - yi));
    grad.extend(y.iter().map(|&yi| cfg.epsilon + yi));
    let mut p = Problem {
        n,
        k,
        c: cfg.c,
        a: vec![T::zero(); 2 * n],
        grad,
    };

    let budget = cfg.max_passes.saturating_mul(n.max(2));
    let mut stop = cfg.tol * T::of(0.1);
    let scale = y.iter().fold(T::one(), |m, v| m.max(v.abs()));
    let floor = T::epsilon() * T::of(16.0) * scale;
    let mut iterations = 0usize;
    loop {
        while let Some((i, j, gap)) = p.select() {
            if gap <= stop {
                break;
            }
            if iterations >= budget {
                let beta: Vec<T> = (0..n).map(|i| p.a[i] - p.a[i + n]).collect();
                let model = finish(x, y, &beta, p.bias(), cfg)?;
                return Err(SrrmError::NonConvergence {
                    iterations,
                    violation: model.kkt_violation.as_f64(),
                });
            }
            p.step(i, j);
            iterations += 1;
        }
        let beta: Vec<T> = (0..n).map(|i| p.a[i] - p.a[i + n]).collect();
        let model = finish(x, y, &beta, p.bias(), cfg)?;
        if model.kkt_violation <= cfg.tol {
            return Ok(model);
        }
        if stop <= floor {
            return Err(SrrmError::NonConvergence {
                iterations,
                violation: model.kkt_violation.as_f64(),
            });
        }
        stop = (stop * T::of(0.1)).max(floor);
    }
}
