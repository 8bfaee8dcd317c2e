//! Single-band rasters on a nested resolution ladder.
//!
//! A [`Grid`] carries its values, a validity mask and a georeference. Invalid
//! cells always hold NaN in memory; the on-disk sentinel is handled by
//! [`io`].

mod features;
pub mod io;
mod landcover;

pub use features::{stack_features, stack_features_with_missing, FeatureTable, Standardization};
pub use landcover::{landcover_fractions, ClassMap, FractionStack, LandCoverGroup, LANDCOVER_CLASSES};

use ndarray::Array2;

use crate::error::{Result, SrrmError};
use crate::scalar::Scalar;

/// Kilometres per degree of latitude under the flat equirectangular convention.
pub const KM_PER_DEGREE: f64 = 111.2;

/// Default fraction of valid fine cells required for a valid coarse cell.
pub const DEFAULT_MIN_COVERAGE: f64 = 0.5;

/// Placement of a grid on the ground.
///
/// `origin_lat`/`origin_lon` locate the north-west corner of cell (0, 0).
/// Longitudes west of Greenwich are negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoRef {
    pub cell_size_km: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
}

impl GeoRef {
    pub fn new(cell_size_km: f64, origin_lat: f64, origin_lon: f64) -> Result<Self> {
        if !(cell_size_km > 0.0 && cell_size_km.is_finite()) {
            return Err(SrrmError::InvalidArgument(format!(
                "cell size must be positive and finite, got {cell_size_km}"
            )));
        }
        if !origin_lat.is_finite() || !origin_lon.is_finite() {
            return Err(SrrmError::InvalidArgument("grid origin must be finite".into()));
        }
        Ok(GeoRef {
            cell_size_km,
            origin_lat,
            origin_lon,
        })
    }

    /// Georeference of the grid obtained by merging `factor`×`factor` cells.
    pub fn coarsened(&self, factor: usize) -> GeoRef {
        GeoRef {
            cell_size_km: self.cell_size_km * factor as f64,
            ..*self
        }
    }

    /// Georeference of the grid obtained by splitting each cell `factor` ways per axis.
    pub fn refined(&self, factor: usize) -> GeoRef {
        GeoRef {
            cell_size_km: self.cell_size_km / factor as f64,
            ..*self
        }
    }
}

/// A single-band raster with a validity mask.
#[derive(Debug, Clone)]
pub struct Grid<T: Scalar> {
    values: Array2<T>,
    mask: Array2<bool>,
    geo: GeoRef,
}

/// Grids are equal when georeference, mask and valid values match exactly.
impl<T: Scalar> PartialEq for Grid<T> {
    fn eq(&self, other: &Self) -> bool {
        self.geo == other.geo
            && self.mask == other.mask
            && self
                .values
                .iter()
                .zip(other.values.iter())
                .zip(self.mask.iter())
                .all(|((a, b), &m)| !m || a == b)
    }
}

impl<T: Scalar> Grid<T> {
    /// Builds a grid from raw values; non-finite values become invalid cells.
    pub fn from_values(values: Array2<T>, geo: GeoRef) -> Self {
        let mask = values.mapv(|v| v.is_finite());
        let values = values.mapv(|v| if v.is_finite() { v } else { T::nan() });
        Grid { values, mask, geo }
    }

    /// Builds a grid from a row-major vector.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>, geo: GeoRef) -> Result<Self> {
        let values = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| SrrmError::DimensionMismatch(format!("{rows}x{cols} grid from vector: {e}")))?;
        Ok(Self::from_values(values, geo))
    }

    /// Grid of `rows`×`cols` cells all equal to `value`.
    pub fn filled(rows: usize, cols: usize, value: T, geo: GeoRef) -> Self {
        Self::from_values(Array2::from_elem((rows, cols), value), geo)
    }

    /// Grid of `rows`×`cols` invalid cells.
    pub fn empty(rows: usize, cols: usize, geo: GeoRef) -> Self {
        Grid {
            values: Array2::from_elem((rows, cols), T::nan()),
            mask: Array2::from_elem((rows, cols), false),
            geo,
        }
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn geo(&self) -> &GeoRef {
        &self.geo
    }

    pub fn cell_size(&self) -> f64 {
        self.geo.cell_size_km
    }

    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.mask[[row, col]]
    }

    /// Value at a cell, or `None` when the cell is invalid or out of range.
    pub fn get(&self, row: usize, col: usize) -> Option<T> {
        match self.mask.get([row, col]) {
            Some(true) => Some(self.values[[row, col]]),
            _ => None,
        }
    }

    /// Sets a cell; a non-finite value marks it invalid.
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        if value.is_finite() {
            self.values[[row, col]] = value;
            self.mask[[row, col]] = true;
        } else {
            self.invalidate(row, col);
        }
    }

    pub fn invalidate(&mut self, row: usize, col: usize) {
        self.values[[row, col]] = T::nan();
        self.mask[[row, col]] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Valid values in row-major order.
    pub fn valid_values(&self) -> Vec<T> {
        self.values
            .iter()
            .zip(self.mask.iter())
            .filter_map(|(&v, &m)| m.then_some(v))
            .collect()
    }

    /// Valid cells as `(row, col, value)` in row-major order.
    pub fn valid_cells(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        self.values
            .indexed_iter()
            .filter(|((r, c), _)| self.mask[[*r, *c]])
            .map(|((r, c), &v)| (r, c, v))
    }

    /// Applies `f` to every valid cell.
    pub fn map_valid(&self, f: impl Fn(T) -> T) -> Grid<T> {
        let mut out = self.clone();
        for ((r, c), v) in self.values.indexed_iter() {
            if self.mask[[r, c]] {
                out.set(r, c, f(*v));
            }
        }
        out
    }

    pub fn same_shape(&self, other: &Grid<T>) -> bool {
        self.shape() == other.shape()
    }

    /// Converts the grid to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Grid<U> {
        Grid {
            values: self.values.mapv(|v| U::of(v.as_f64())),
            mask: self.mask.clone(),
            geo: self.geo,
        }
    }

    /// Mean of the valid cells, `None` when there are none.
    pub fn valid_mean(&self) -> Option<T> {
        let vals = self.valid_values();
        if vals.is_empty() {
            return None;
        }
        let n = T::of_usize(vals.len());
        Some(vals.into_iter().sum::<T>() / n)
    }
}

/// Maps a fine cell onto the coarse cell that contains it.
pub fn parent_index(fine_row: usize, fine_col: usize, factor: usize) -> (usize, usize) {
    debug_assert!(factor >= 1);
    (fine_row / factor, fine_col / factor)
}

fn check_factor(rows: usize, cols: usize, factor: usize) -> Result<()> {
    if factor == 0 {
        return Err(SrrmError::InvalidArgument("aggregation factor must be >= 1".into()));
    }
    if !rows.is_multiple_of(factor) || !cols.is_multiple_of(factor) {
        return Err(SrrmError::DimensionMismatch(format!(
            "{rows}x{cols} grid is not divisible by factor {factor}"
        )));
    }
    Ok(())
}

/// Block-mean aggregation of a fine grid by an integer factor.
///
/// A coarse cell is valid when at least `min_coverage` of its fine cells are
/// valid; its value is the mean of those valid cells.
pub fn block_aggregate<T: Scalar>(fine: &Grid<T>, factor: usize, min_coverage: f64) -> Result<Grid<T>> {
    check_factor(fine.rows(), fine.cols(), factor)?;
    if !(0.0..=1.0).contains(&min_coverage) {
        return Err(SrrmError::InvalidArgument(format!(
            "min_coverage must lie in [0, 1], got {min_coverage}"
        )));
    }
    let (rows, cols) = (fine.rows() / factor, fine.cols() / factor);
    let block = (factor * factor) as f64;
    let mut out = Grid::empty(rows, cols, fine.geo.coarsened(factor));
    for cr in 0..rows {
        for cc in 0..cols {
            let mut sum = T::zero();
            let mut n = 0usize;
            for fr in cr * factor..(cr + 1) * factor {
                for fc in cc * factor..(cc + 1) * factor {
                    if let Some(v) = fine.get(fr, fc) {
                        sum += v;
                        n += 1;
                    }
                }
            }
            if n > 0 && n as f64 / block >= min_coverage {
                out.set(cr, cc, sum / T::of_usize(n));
            }
        }
    }
    Ok(out)
}

/// Cell-centre latitude and longitude of `(row, col)`.
///
/// Uses 111.2 km per degree of latitude and 111.2·cos(mid-latitude) km per
/// degree of longitude, with the mid-latitude taken at the grid's vertical
/// centre.
pub fn cell_coordinates<T: Scalar>(grid: &Grid<T>, row: usize, col: usize) -> Result<(f64, f64)> {
    if row >= grid.rows() || col >= grid.cols() {
        return Err(SrrmError::InvalidArgument(format!(
            "cell ({row}, {col}) outside {}x{} grid",
            grid.rows(),
            grid.cols()
        )));
    }
    let geo = grid.geo();
    let deg_lat = geo.cell_size_km / KM_PER_DEGREE;
    let mid_lat = geo.origin_lat - 0.5 * grid.rows() as f64 * deg_lat;
    let deg_lon = geo.cell_size_km / (KM_PER_DEGREE * mid_lat.to_radians().cos());
    let lat = geo.origin_lat - (row as f64 + 0.5) * deg_lat;
    let lon = geo.origin_lon + (col as f64 + 0.5) * deg_lon;
    Ok((lat, lon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn geo() -> GeoRef {
        GeoRef::new(9.0, 43.57, -96.68).unwrap()
    }

    #[test]
    fn aggregate_constant_block() {
        let g = Grid::filled(4, 4, 7.25_f64, geo());
        let c = block_aggregate(&g, 4, 0.5).unwrap();
        assert_eq!(c.shape(), (1, 1));
        assert_eq!(c.get(0, 0), Some(7.25));
        assert_eq!(c.cell_size(), 36.0);
    }

    #[test]
    fn aggregate_one_to_sixteen() {
        let g = Grid::from_vec(4, 4, (1..=16).map(|v| v as f64).collect(), geo()).unwrap();
        let c = block_aggregate(&g, 4, 0.5).unwrap();
        assert_eq!(c.get(0, 0), Some(8.5));
    }

    #[test]
    fn aggregate_coverage_threshold() {
        let data: Vec<f64> = (0..16).map(|i| if i % 2 == 0 { 2.0 } else { f64::NAN }).collect();
        let g = Grid::from_vec(4, 4, data, geo()).unwrap();
        assert_eq!(g.valid_count(), 8);
        assert_eq!(block_aggregate(&g, 4, 0.5).unwrap().get(0, 0), Some(2.0));
        let c = block_aggregate(&g, 4, 0.6).unwrap();
        assert_eq!(c.get(0, 0), None);
        assert!(c.values()[[0, 0]].is_nan());
    }

    #[test]
    fn aggregate_rejects_bad_factor() {
        let g = Grid::filled(6, 6, 1.0_f64, geo());
        assert!(matches!(
            block_aggregate(&g, 4, 0.5),
            Err(SrrmError::DimensionMismatch(_))
        ));
        assert!(matches!(
            block_aggregate(&g, 0, 0.5),
            Err(SrrmError::InvalidArgument(_))
        ));
    }

    #[test]
    fn aggregate_f32() {
        let g = Grid::from_vec(2, 2, vec![1.0_f32, 2.0, 3.0, 4.0], geo()).unwrap();
        assert_eq!(block_aggregate(&g, 2, 1.0).unwrap().get(0, 0), Some(2.5_f32));
    }

    #[test]
    fn parent_index_floor() {
        assert_eq!(parent_index(0, 0, 4), (0, 0));
        assert_eq!(parent_index(7, 4, 4), (1, 1));
        assert_eq!(parent_index(35, 0, 4), (8, 0));
    }

    #[test]
    fn coordinates_of_corners() {
        let g = Grid::filled(36, 72, 0.0_f64, geo());
        let (lat, lon) = cell_coordinates(&g, 0, 0).unwrap();
        let half_lat = 4.5 / KM_PER_DEGREE;
        assert_abs_diff_eq!(lat, 43.57 - half_lat, epsilon = 1e-12);
        let mid = 43.57 - 18.0 * 9.0 / KM_PER_DEGREE;
        let km_lon = KM_PER_DEGREE * mid.to_radians().cos();
        assert_abs_diff_eq!(lon, -96.68 + 4.5 / km_lon, epsilon = 1e-12);

        let (lat1, lon1) = cell_coordinates(&g, 0, 1).unwrap();
        assert_eq!(lat1, lat);
        assert_abs_diff_eq!(lon1 - lon, 9.0 / km_lon, epsilon = 1e-12);

        let (lat_se, lon_se) = cell_coordinates(&g, 35, 71).unwrap();
        assert_abs_diff_eq!(lat_se, 43.57 - 35.5 * 9.0 / KM_PER_DEGREE, epsilon = 1e-12);
        assert_abs_diff_eq!(lon_se, -96.68 + 71.5 * 9.0 / km_lon, epsilon = 1e-12);
        assert!(cell_coordinates(&g, 36, 0).is_err());
        assert!(cell_coordinates(&g, 0, 72).is_err());
    }

    #[test]
    fn non_finite_cells_are_invalid() {
        let g = Grid::from_vec(1, 3, vec![1.0, f64::INFINITY, f64::NAN], geo()).unwrap();
        assert_eq!(g.valid_count(), 1);
        assert!(g.values()[[0, 1]].is_nan());
    }

    fn grid_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64, f64)> {
        (
            prop::collection::vec(-300.0..300.0_f64, 144),
            prop::collection::vec(-300.0..300.0_f64, 144),
            -3.0..3.0_f64,
            -3.0..3.0_f64,
        )
    }

    proptest! {
        #[test]
        fn aggregation_preserves_mean_and_is_linear((a, b, wa, wb) in grid_strategy()) {
            let ga = Grid::from_vec(12, 12, a.clone(), geo()).unwrap();
            let gb = Grid::from_vec(12, 12, b.clone(), geo()).unwrap();
            let ca = block_aggregate(&ga, 3, 0.5).unwrap();
            prop_assert!((ca.valid_mean().unwrap() - ga.valid_mean().unwrap()).abs() <= 1e-9);

            let mixed: Vec<f64> = a.iter().zip(&b).map(|(x, y)| wa * x + wb * y).collect();
            let gm = Grid::from_vec(12, 12, mixed, geo()).unwrap();
            let cm = block_aggregate(&gm, 3, 0.5).unwrap();
            let cb = block_aggregate(&gb, 3, 0.5).unwrap();
            for r in 0..4 {
                for c in 0..4 {
                    let lhs = cm.get(r, c).unwrap();
                    let rhs = wa * ca.get(r, c).unwrap() + wb * cb.get(r, c).unwrap();
                    prop_assert!((lhs - rhs).abs() <= 1e-9);
                }
            }
        }

        #[test]
        fn aggregation_composes((a, _b, _wa, _wb) in grid_strategy()) {
            let g = Grid::from_vec(12, 12, a, geo()).unwrap();
            let two_step = block_aggregate(&block_aggregate(&g, 2, 0.5).unwrap(), 3, 0.5).unwrap();
            let direct = block_aggregate(&g, 6, 0.5).unwrap();
            for r in 0..2 {
                for c in 0..2 {
                    prop_assert!((two_step.get(r, c).unwrap() - direct.get(r, c).unwrap()).abs() <= 1e-9);
                }
            }
        }
    }
}
