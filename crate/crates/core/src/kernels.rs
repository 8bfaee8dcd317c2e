//! Gaussian kernels and kernel density estimation.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::error::{Result, SrrmError};
use crate::scalar::Scalar;

/// Width of a Gaussian kernel in feature-space units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec<T: Scalar> {
    sigma: T,
}

impl<T: Scalar> KernelSpec<T> {
    pub fn new(sigma: T) -> Result<Self> {
        if sigma > T::zero() && sigma.is_finite() {
            Ok(KernelSpec { sigma })
        } else {
            Err(SrrmError::InvalidArgument(format!(
                "kernel width must be positive, got {sigma}"
            )))
        }
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    /// Kernel value for a precomputed squared distance.
    #[inline]
    pub fn from_sq_dist(&self, d2: T) -> T {
        (-d2 / (T::of(2.0) * self.sigma * self.sigma)).exp()
    }

    #[inline]
    pub fn eval(&self, x: ArrayView1<'_, T>, y: ArrayView1<'_, T>) -> T {
        self.from_sq_dist(sq_dist(x, y))
    }
}

#[inline]
pub(crate) fn sq_dist<T: Scalar>(x: ArrayView1<'_, T>, y: ArrayView1<'_, T>) -> T {
    x.iter().zip(y.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum()
}

/// `exp(−‖x − y‖² / (2σ²))`.
pub fn gaussian_kernel<T: Scalar>(x: &[T], y: &[T], sigma: T) -> Result<T> {
    if x.len() != y.len() {
        return Err(SrrmError::DimensionMismatch(format!(
            "kernel arguments of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    let k = KernelSpec::new(sigma)?;
    Ok(k.eval(ArrayView1::from(x), ArrayView1::from(y)))
}

/// Gram matrix of the rows of `data`. Rows are evaluated in parallel; each
/// entry is computed independently, so the result does not depend on
/// scheduling.
pub fn kernel_matrix<T: Scalar>(data: ArrayView2<'_, T>, sigma: T) -> Result<Array2<T>> {
    let k = KernelSpec::new(sigma)?;
    let n = data.nrows();
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        T::one()
                    } else {
                        k.eval(data.row(i), data.row(j))
                    }
                })
                .collect()
        })
        .collect();
    let mut out = Array2::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}

/// Median of the pairwise Euclidean distances between rows; 0 for fewer than
/// two rows.
pub fn median_pairwise_distance<T: Scalar>(data: ArrayView2<'_, T>) -> T {
    let n = data.nrows();
    let mut d: Vec<T> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(sq_dist(data.row(i), data.row(j)).sqrt());
        }
    }
    if d.is_empty() {
        return T::zero();
    }
    d.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let m = d.len() / 2;
    if d.len() % 2 == 1 {
        d[m]
    } else {
        (d[m - 1] + d[m]) / T::of(2.0)
    }
}

/// Gaussian kernel density estimate of `samples` evaluated at `eval_points`.
pub fn kde_pdf<T: Scalar>(samples: &[T], bandwidth: T, eval_points: &[T]) -> Result<Vec<T>> {
    if samples.is_empty() {
        return Err(SrrmError::NoValidData("kernel density estimate needs samples".into()));
    }
    if !(bandwidth > T::zero() && bandwidth.is_finite()) {
        return Err(SrrmError::InvalidArgument(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    let norm = T::one() / (T::of_usize(samples.len()) * bandwidth * T::of(std::f64::consts::TAU).sqrt());
    let two_h2 = T::of(2.0) * bandwidth * bandwidth;
    Ok(eval_points
        .iter()
        .map(|&t| norm * samples.iter().map(|&s| (-(t - s) * (t - s) / two_h2).exp()).sum::<T>())
        .collect())
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted<T: Scalar>(sorted: &[T], q: f64) -> T {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = T::of(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Silverman's rule of thumb, `0.9·min(std, IQR/1.34)·n^(−1/5)`.
///
/// `std` is the sample (n−1) standard deviation and the IQR uses linearly
/// interpolated quartiles. When the IQR is zero but the spread is not, the
/// standard deviation alone is used.
pub fn silverman_bandwidth<T: Scalar>(samples: &[T]) -> Result<T> {
    let n = samples.len();
    if n < 2 {
        return Err(SrrmError::InvalidArgument(
            "bandwidth needs at least two samples".into(),
        ));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(SrrmError::InvalidArgument("bandwidth samples must be finite".into()));
    }
    let nf = T::of_usize(n);
    let mean = samples.iter().copied().sum::<T>() / nf;
    let var = samples.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / (nf - T::one());
    let std = var.sqrt();
    if !(std > T::zero()) {
        return Err(SrrmError::InvalidArgument("samples have zero spread".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > T::zero() {
        std.min(iqr / T::of(1.34))
    } else {
        std
    };
    Ok(T::of(0.9) * spread * nf.powf(T::of(-0.2)))
}
