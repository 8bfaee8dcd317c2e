use ndarray::{Array2, ArrayView1, Axis};

use super::Grid;
use crate::error::{Result, SrrmError};
use crate::scalar::Scalar;

/// z-score parameters of one feature column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardization<T: Scalar> {
    pub mean: T,
    pub std: T,
}

impl<T: Scalar> Standardization<T> {
    /// Columns whose spread is at rounding level are treated as constant.
    pub fn is_constant(&self) -> bool {
        self.std <= T::epsilon() * T::of(64.0) * self.mean.abs().max(T::one())
    }

    pub fn apply(&self, v: T) -> T {
        if v.is_nan() {
            v
        } else if self.is_constant() {
            T::zero()
        } else {
            (v - self.mean) / self.std
        }
    }
}

/// Samples × features matrix assembled from co-registered rasters.
///
/// Missing entries (only possible through [`stack_features_with_missing`])
/// are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable<T: Scalar> {
    pub values: Array2<T>,
    pub feature_names: Vec<String>,
    /// Parameters already applied to `values`, if the table is standardized.
    pub standardization: Option<Vec<Standardization<T>>>,
    /// Source cell of every row.
    pub sample_index: Vec<(usize, usize)>,
}

impl<T: Scalar> FeatureTable<T> {
    pub fn new(values: Array2<T>, feature_names: Vec<String>, sample_index: Vec<(usize, usize)>) -> Result<Self> {
        if values.ncols() != feature_names.len() || values.nrows() != sample_index.len() {
            return Err(SrrmError::DimensionMismatch(format!(
                "table {}x{} with {} names and {} sample indices",
                values.nrows(),
                values.ncols(),
                feature_names.len(),
                sample_index.len()
            )));
        }
        Ok(FeatureTable {
            values,
            feature_names,
            standardization: None,
            sample_index,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.values.row(i)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().any(|v| v.is_nan())
    }

    /// Population mean and standard deviation of each column over its
    /// non-missing entries.
    pub fn fit_standardization(&self) -> Result<Vec<Standardization<T>>> {
        self.values
            .axis_iter(Axis(1))
            .zip(&self.feature_names)
            .map(|(col, name)| {
                let vals: Vec<T> = col.iter().copied().filter(|v| !v.is_nan()).collect();
                if vals.is_empty() {
                    return Err(SrrmError::UnobservedFeature(name.clone()));
                }
                let n = T::of_usize(vals.len());
                let mean = vals.iter().copied().sum::<T>() / n;
                let var = vals.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
                Ok(Standardization { mean, std: var.sqrt() })
            })
            .collect()
    }

    /// Applies previously fitted parameters to this (raw) table.
    pub fn standardized_with(&self, params: &[Standardization<T>]) -> Result<FeatureTable<T>> {
        if self.standardization.is_some() {
            return Err(SrrmError::InvalidArgument("table is already standardized".into()));
        }
        if params.len() != self.n_features() {
            return Err(SrrmError::DimensionMismatch(format!(
                "{} standardization parameters for {} features",
                params.len(),
                self.n_features()
            )));
        }
        let mut values = self.values.clone();
        for (mut col, p) in values.axis_iter_mut(Axis(1)).zip(params) {
            col.mapv_inplace(|v| p.apply(v));
        }
        Ok(FeatureTable {
            values,
            feature_names: self.feature_names.clone(),
            standardization: Some(params.to_vec()),
            sample_index: self.sample_index.clone(),
        })
    }

    /// Fits parameters on this table and applies them.
    pub fn standardized(&self) -> Result<FeatureTable<T>> {
        let params = self.fit_standardization()?;
        self.standardized_with(&params)
    }

    /// Keeps the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureTable<T> {
        FeatureTable {
            values: self.values.select(Axis(0), rows),
            feature_names: self.feature_names.clone(),
            standardization: self.standardization.clone(),
            sample_index: rows.iter().map(|&r| self.sample_index[r]).collect(),
        }
    }

    /// Drops every row that has a missing entry.
    pub fn drop_incomplete(&self) -> FeatureTable<T> {
        let keep: Vec<usize> = (0..self.n_samples())
            .filter(|&i| self.values.row(i).iter().all(|v| !v.is_nan()))
            .collect();
        self.select_rows(&keep)
    }
}

fn check_layers<T: Scalar>(layers: &[(&str, &Grid<T>)]) -> Result<()> {
    let Some((_, first)) = layers.first() else {
        return Err(SrrmError::InvalidArgument("no feature layers given".into()));
    };
    for (name, g) in layers {
        if !g.same_shape(first) {
            return Err(SrrmError::DimensionMismatch(format!(
                "layer '{name}' is {}x{}, expected {}x{}",
                g.rows(),
                g.cols(),
                first.rows(),
                first.cols()
            )));
        }
        if (g.cell_size() - first.cell_size()).abs() > 1e-9 * first.cell_size() {
            return Err(SrrmError::DimensionMismatch(format!(
                "layer '{name}' has cell size {} km, expected {} km",
                g.cell_size(),
                first.cell_size()
            )));
        }
    }
    Ok(())
}

fn collect_rows<T: Scalar>(
    layers: &[(&str, &Grid<T>)],
    keep: impl Fn(usize, usize) -> bool,
) -> Result<FeatureTable<T>> {
    check_layers(layers)?;
    let (rows, cols) = layers[0].1.shape();
    let mut data = Vec::new();
    let mut index = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if keep(r, c) {
                data.extend(layers.iter().map(|(_, g)| g.values()[[r, c]]));
                index.push((r, c));
            }
        }
    }
    let values =
        Array2::from_shape_vec((index.len(), layers.len()), data).expect("row-major buffer matches table shape");
    FeatureTable::new(values, layers.iter().map(|(n, _)| n.to_string()).collect(), index)
}

/// One row per cell where every layer is valid, optionally z-scored.
pub fn stack_features<T: Scalar>(layers: &[(&str, &Grid<T>)], standardize: bool) -> Result<FeatureTable<T>> {
    let table = collect_rows(layers, |r, c| layers.iter().all(|(_, g)| g.is_valid(r, c)))?;
    if standardize {
        table.standardized()
    } else {
        Ok(table)
    }
}

/// One row per cell where every layer named in `required` is valid; other
/// layers may be missing (NaN). Never standardized.
pub fn stack_features_with_missing<T: Scalar>(
    layers: &[(&str, &Grid<T>)],
    required: &[&str],
) -> Result<FeatureTable<T>> {
    let req: Vec<&Grid<T>> = required
        .iter()
        .map(|name| {
            layers
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, g)| *g)
                .ok_or_else(|| SrrmError::InvalidArgument(format!("required layer '{name}' not supplied")))
        })
        .collect::<Result<_>>()?;
    collect_rows(layers, |r, c| req.iter().all(|g| g.is_valid(r, c)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoRef;
    use proptest::prelude::*;

    fn geo() -> GeoRef {
        GeoRef::new(36.0, 43.57, -96.68).unwrap()
    }

    #[test]
    fn constant_columns_standardize_to_zero() {
        let a = Grid::filled(3, 3, 0.1_f64, geo());
        let b = Grid::filled(3, 3, 290.0_f64, geo());
        let t = stack_features(&[("a", &a), ("b", &b)], true).unwrap();
        assert_eq!(t.n_samples(), 9);
        assert!(t.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_cells_are_dropped() {
        let mut a = Grid::filled(2, 2, 1.0_f64, geo());
        let b = Grid::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0], geo()).unwrap();
        a.invalidate(0, 1);
        let t = stack_features(&[("a", &a), ("b", &b)], false).unwrap();
        assert_eq!(t.n_samples(), 3);
        assert_eq!(t.sample_index, vec![(0, 0), (1, 0), (1, 1)]);
        assert_eq!(t.values.column(1).to_vec(), vec![1.0, 3.0, 4.0]);
    }

    #[test]
    fn stored_parameters_reproduce_table() {
        let a = Grid::from_vec(2, 3, vec![1.0, 5.0, 2.0, 8.0, 3.0, 3.5], geo()).unwrap();
        let b = Grid::from_vec(2, 3, vec![-1.0, 0.5, 2.0, 2.0, 7.0, 1.0], geo()).unwrap();
        let layers = [("a", &a), ("b", &b)];
        let std = stack_features(&layers, true).unwrap();
        let raw = stack_features(&layers, false).unwrap();
        let again = raw.standardized_with(std.standardization.as_ref().unwrap()).unwrap();
        assert_eq!(std, again);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Grid::filled(2, 2, 1.0_f64, geo());
        let b = Grid::filled(2, 3, 1.0_f64, geo());
        assert!(matches!(
            stack_features(&[("a", &a), ("b", &b)], false),
            Err(SrrmError::DimensionMismatch(_))
        ));
        let c = Grid::filled(2, 2, 1.0_f64, GeoRef::new(9.0, 43.57, -96.68).unwrap());
        assert!(stack_features(&[("a", &a), ("c", &c)], false).is_err());
    }

    #[test]
    fn partial_rows_keep_missing_entries() {
        let mut lst = Grid::filled(2, 2, 300.0_f64, geo());
        lst.invalidate(1, 1);
        let mut tb = Grid::filled(2, 2, 250.0_f64, geo());
        tb.invalidate(0, 0);
        let t = stack_features_with_missing(&[("lst", &lst), ("tb", &tb)], &["tb"]).unwrap();
        assert_eq!(t.n_samples(), 3);
        assert!(t.values[[2, 0]].is_nan());
        assert!(t.has_missing());
        assert_eq!(t.drop_incomplete().n_samples(), 2);
    }

    proptest! {
        #[test]
        fn standardized_columns_have_zero_mean_unit_std(
            data in prop::collection::vec(-1e3..1e3_f64, 40),
            scale in 1e-3..1e3_f64,
        ) {
            let a = Grid::from_vec(5, 4, data[..20].to_vec(), geo()).unwrap();
            let b = Grid::from_vec(5, 4, data[20..].iter().map(|v| v * scale).collect(), geo()).unwrap();
            let t = stack_features(&[("a", &a), ("b", &b)], true).unwrap();
            for col in t.values.axis_iter(Axis(1)) {
                let n = col.len() as f64;
                let mean = col.sum() / n;
                let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!(mean.abs() <= 1e-9);
                prop_assert!((std - 1.0).abs() <= 1e-6);
            }
        }
    }
}
