//! Cauchy–Schwarz segmentation of coarse pixels.
//!
//! Pixels are softly assigned to `K` segments by minimizing
//!
//! ```text
//!            ½ Σᵢ Σⱼ (1 − mᵢᵀmⱼ) G(xᵢ, xⱼ)
//! J(m) = ───────────────────────────────────────
//!         sqrt( Πₖ Σᵢ Σⱼ mᵢₖ mⱼₖ G(xᵢ, xⱼ) )
//! ```
//!
//! over row-stochastic membership matrices, where `G` is a Gaussian kernel of
//! width `σ√2`.

mod mdl;
mod optimize;

pub use mdl::{description_length, select_num_clusters, ModelSelection};
pub use optimize::{initial_logits, optimize_from_logits, optimize_memberships, softmax_rows, Segmentation};

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Result, SrrmError};
use crate::kernels::{kernel_matrix, median_pairwise_distance};
use crate::raster::{cell_coordinates, FeatureTable, Grid};
use crate::scalar::Scalar;

/// Within-segment kernel mass below which a segment counts as empty.
pub const DEGENERATE_MASS: f64 = 1e-300;

/// Row-stochastic soft assignment of pixels to segments.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipMatrix<T: Scalar> {
    m: Array2<T>,
}

impl<T: Scalar> MembershipMatrix<T> {
    /// Validates entries in [0, 1] and rows summing to one within 1e-9
    /// (scaled to the precision of `T`).
    pub fn new(m: Array2<T>) -> Result<Self> {
        if m.ncols() == 0 {
            return Err(SrrmError::InvalidArgument(
                "membership matrix needs at least one segment".into(),
            ));
        }
        let tol = T::of(1e-9).max(T::epsilon() * T::of_usize(4 * m.ncols()));
        for (i, row) in m.axis_iter(Axis(0)).enumerate() {
            if row.iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
                return Err(SrrmError::InvalidArgument(format!("membership row {i} leaves [0, 1]")));
            }
            let s: T = row.sum();
            if (s - T::one()).abs() > tol {
                return Err(SrrmError::InvalidArgument(format!("membership row {i} sums to {s}")));
            }
        }
        Ok(MembershipMatrix { m })
    }

    /// Every row equal to `1/K`.
    pub fn uniform(n_pixels: usize, k: usize) -> Self {
        MembershipMatrix {
            m: Array2::from_elem((n_pixels, k), T::one() / T::of_usize(k)),
        }
    }

    /// Hard (one-hot) memberships from labels.
    pub fn from_labels(labels: &[usize], k: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(SrrmError::InvalidArgument(format!(
                "label {bad} out of range for {k} segments"
            )));
        }
        let mut m = Array2::zeros((labels.len(), k));
        for (i, &l) in labels.iter().enumerate() {
            m[[i, l]] = T::one();
        }
        Ok(MembershipMatrix { m })
    }

    pub(crate) fn from_softmax(m: Array2<T>) -> Self {
        MembershipMatrix { m }
    }

    /// Wraps arbitrary entries without validation, e.g. to probe the cost
    /// off the simplex.
    pub fn from_raw_unchecked(m: Array2<T>) -> Self {
        MembershipMatrix { m }
    }

    pub fn n_pixels(&self) -> usize {
        self.m.nrows()
    }

    pub fn n_segments(&self) -> usize {
        self.m.ncols()
    }

    pub fn matrix(&self) -> &Array2<T> {
        &self.m
    }

    pub fn into_matrix(self) -> Array2<T> {
        self.m
    }
}

/// Settings of the membership optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationConfig<T: Scalar> {
    /// Fixed segment count, or `None` to select it by description length.
    pub k: Option<usize>,
    pub k_min: usize,
    pub k_max: usize,
    /// Base kernel width; `None` uses the median pairwise distance over √2.
    pub sigma: Option<T>,
    pub max_iters: usize,
    pub step_size: T,
    pub batch_size: usize,
    pub tol: T,
    pub seed: u64,
}

impl<T: Scalar> Default for SegmentationConfig<T> {
    fn default() -> Self {
        SegmentationConfig {
            k: None,
            k_min: 1,
            k_max: 6,
            sigma: None,
            max_iters: 2000,
            step_size: T::one(),
            batch_size: 64,
            tol: T::of(1e-5),
            seed: 42,
        }
    }
}

impl<T: Scalar> SegmentationConfig<T> {
    pub fn with_k(mut self, k: usize) -> Self {
        self.k = Some(k);
        self
    }

    pub fn with_sigma(mut self, sigma: T) -> Self {
        self.sigma = Some(sigma);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == Some(0) {
            return Err(SrrmError::InvalidArgument("segment count must be >= 1".into()));
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return Err(SrrmError::InvalidArgument(format!(
                "invalid segment range {}..={}",
                self.k_min, self.k_max
            )));
        }
        if !(self.tol > T::zero()) || !(self.step_size > T::zero()) {
            return Err(SrrmError::InvalidArgument("tol and step_size must be positive".into()));
        }
        if let Some(s) = self.sigma {
            if !(s > T::zero() && s.is_finite()) {
                return Err(SrrmError::InvalidArgument(format!("sigma must be positive, got {s}")));
            }
        }
        if self.batch_size == 0 {
            return Err(SrrmError::InvalidArgument("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Kernel width to use on `x`: the configured one, or the median
    /// heuristic (falling back to 1 when every point coincides).
    pub fn resolve_sigma(&self, x: ArrayView2<'_, T>) -> T {
        self.sigma.unwrap_or_else(|| {
            let med = median_pairwise_distance(x) / T::of(2.0).sqrt();
            if med > T::zero() {
                med
            } else {
                T::one()
            }
        })
    }
}

/// `[T_B, lat, lon]` for every valid coarse pixel, z-scored per column.
pub fn build_cluster_features<T: Scalar>(tb_coarse: &Grid<T>) -> Result<FeatureTable<T>> {
    let n = tb_coarse.valid_count();
    if n == 0 {
        return Err(SrrmError::NoValidData(
            "brightness-temperature grid has no valid pixel".into(),
        ));
    }
    let mut values = Array2::zeros((n, 3));
    let mut index = Vec::with_capacity(n);
    for (i, (r, c, tb)) in tb_coarse.valid_cells().enumerate() {
        let (lat, lon) = cell_coordinates(tb_coarse, r, c)?;
        values[[i, 0]] = tb;
        values[[i, 1]] = T::of(lat);
        values[[i, 2]] = T::of(lon);
        index.push((r, c));
    }
    FeatureTable::new(values, vec!["tb".into(), "lat".into(), "lon".into()], index)?.standardized()
}

/// Precomputed kernel of width `σ√2` over a fixed pixel set.
#[derive(Debug, Clone)]
pub struct CsObjective<T: Scalar> {
    gram: Array2<T>,
    gram_total: T,
}

/// Cost together with the intermediate sums the gradient needs.
#[derive(Debug, Clone)]
pub(crate) struct CostTerms<T: Scalar> {
    pub cost: T,
    /// `G·m`, pixels × segments.
    pub kernel_mass: Array2<T>,
    /// Within-segment masses `mₖᵀ G mₖ`.
    pub segment_mass: Vec<T>,
    pub denominator: T,
}

impl<T: Scalar> CsObjective<T> {
    pub fn new(x: ArrayView2<'_, T>, sigma: T) -> Result<Self> {
        let gram = kernel_matrix(x, sigma * T::of(2.0).sqrt())?;
        let gram_total = gram.sum();
        Ok(CsObjective { gram, gram_total })
    }

    pub fn n_pixels(&self) -> usize {
        self.gram.nrows()
    }

    pub fn gram(&self) -> &Array2<T> {
        &self.gram
    }

    fn check(&self, m: &Array2<T>) -> Result<()> {
        if m.nrows() != self.n_pixels() {
            return Err(SrrmError::DimensionMismatch(format!(
                "{} membership rows for {} pixels",
                m.nrows(),
                self.n_pixels()
            )));
        }
        Ok(())
    }

    pub(crate) fn terms(&self, m: &Array2<T>) -> Result<CostTerms<T>> {
        self.check(m)?;
        let kernel_mass = self.gram.dot(m);
        let segment_mass: Vec<T> = m
            .axis_iter(Axis(1))
            .zip(kernel_mass.axis_iter(Axis(1)))
            .map(|(mk, pk)| mk.dot(&pk))
            .collect();
        for (k, &s) in segment_mass.iter().enumerate() {
            if !(s.as_f64() > DEGENERATE_MASS) {
                return Err(SrrmError::DegenerateSegment {
                    segment: k,
                    mass: s.as_f64(),
                });
            }
        }
        // Summed pair by pair so that hard assignments give exact zeros.
        let n = self.n_pixels();
        let mut numerator = T::zero();
        for i in 0..n {
            let mi = m.row(i);
            let mut acc = T::zero();
            for j in 0..n {
                let overlap = mi.dot(&m.row(j));
                acc += (T::one() - overlap) * self.gram[[i, j]];
            }
            numerator += acc;
        }
        numerator = (numerator / T::of(2.0)).max(T::zero());
        let log_den = segment_mass.iter().map(|s| s.ln()).sum::<T>() / T::of(2.0);
        let denominator = log_den.exp();
        let cost = numerator * (-log_den).exp();
        Ok(CostTerms {
            cost,
            kernel_mass,
            segment_mass,
            denominator,
        })
    }

    pub fn cost(&self, m: &MembershipMatrix<T>) -> Result<T> {
        Ok(self.terms(m.matrix())?.cost)
    }

    /// `∂J/∂mᵢₖ = −(G m)ᵢₖ · (1/D + J/Sₖ)`.
    pub fn gradient(&self, m: &MembershipMatrix<T>) -> Result<Array2<T>> {
        let t = self.terms(m.matrix())?;
        Ok(gradient_from_terms(&t))
    }

    /// Sum of all kernel entries, `Σᵢⱼ G(xᵢ, xⱼ)`.
    pub fn gram_total(&self) -> T {
        self.gram_total
    }
}

pub(crate) fn gradient_from_terms<T: Scalar>(t: &CostTerms<T>) -> Array2<T> {
    let inv_d = T::one() / t.denominator;
    let mut g = t.kernel_mass.clone();
    for (mut col, &s) in g.axis_iter_mut(Axis(1)).zip(&t.segment_mass) {
        let w = inv_d + t.cost / s;
        col.mapv_inplace(|p| -p * w);
    }
    g
}

/// Regularized Cauchy–Schwarz cost of memberships `m` on features `x`.
pub fn jcs_cost<T: Scalar>(x: ArrayView2<'_, T>, m: &MembershipMatrix<T>, sigma: T) -> Result<T> {
    CsObjective::new(x, sigma)?.cost(m)
}

/// Analytic gradient of [`jcs_cost`] with respect to every membership entry.
pub fn jcs_gradient<T: Scalar>(x: ArrayView2<'_, T>, m: &MembershipMatrix<T>, sigma: T) -> Result<Array2<T>> {
    CsObjective::new(x, sigma)?.gradient(m)
}

/// Index of the largest membership per row; ties go to the lowest index.
pub fn hard_assign<T: Scalar>(m: &MembershipMatrix<T>) -> Vec<usize> {
    m.matrix()
        .axis_iter(Axis(0))
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(
                    (0, T::neg_infinity()),
                    |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
                )
                .0
        })
        .collect()
}

/// Label grid for the pixels listed in `sample_index`; other cells invalid.
pub fn label_grid<T: Scalar>(template: &Grid<T>, sample_index: &[(usize, usize)], labels: &[usize]) -> Grid<T> {
    let mut g = Grid::empty(template.rows(), template.cols(), *template.geo());
    for (&(r, c), &l) in sample_index.iter().zip(labels) {
        g.set(r, c, T::of_usize(l));
    }
    g
}

/// Writes `row,col,m_0,…,m_{K−1}` per pixel.
pub fn write_membership_csv<T: Scalar>(
    path: impl AsRef<Path>,
    sample_index: &[(usize, usize)],
    m: &MembershipMatrix<T>,
) -> Result<()> {
    let path = path.as_ref();
    let io = |e| SrrmError::io(path, e);
    let mut out = Vec::new();
    let header: Vec<String> = (0..m.n_segments()).map(|k| format!("m_{k}")).collect();
    writeln!(out, "row,col,{}", header.join(",")).map_err(io)?;
    for (&(r, c), row) in sample_index.iter().zip(m.matrix().axis_iter(Axis(0))) {
        let vals: Vec<String> = row.iter().map(|v| format!("{:.9}", v.as_f64())).collect();
        writeln!(out, "{r},{c},{}", vals.join(",")).map_err(io)?;
    }
    std::fs::write(path, out).map_err(io)
}
