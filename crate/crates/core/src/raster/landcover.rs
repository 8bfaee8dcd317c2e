use std::collections::BTreeMap;

use super::{check_factor, Grid};
use crate::error::{Result, SrrmError};
use crate::scalar::Scalar;

/// Land-cover group labels, in fraction-stack order.
pub const LANDCOVER_CLASSES: [&str; 7] = [
    "corn",
    "soybean",
    "miscellaneous",
    "forest",
    "wetland",
    "developed",
    "others",
];

/// Aggregated land-cover group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LandCoverGroup {
    Corn = 0,
    Soybean = 1,
    Miscellaneous = 2,
    Forest = 3,
    Wetland = 4,
    Developed = 5,
    Others = 6,
}

impl LandCoverGroup {
    pub const ALL: [LandCoverGroup; 7] = [
        LandCoverGroup::Corn,
        LandCoverGroup::Soybean,
        LandCoverGroup::Miscellaneous,
        LandCoverGroup::Forest,
        LandCoverGroup::Wetland,
        LandCoverGroup::Developed,
        LandCoverGroup::Others,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        LANDCOVER_CLASSES[self.index()]
    }
}

/// Lookup from a categorical class code to its group. Codes absent from the
/// table fall into [`LandCoverGroup::Others`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassMap {
    codes: BTreeMap<i64, LandCoverGroup>,
}

impl ClassMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, code: i64, group: LandCoverGroup) -> Self {
        self.codes.insert(code, group);
        self
    }

    pub fn insert(&mut self, code: i64, group: LandCoverGroup) {
        self.codes.insert(code, group);
    }

    pub fn group(&self, code: i64) -> LandCoverGroup {
        self.codes.get(&code).copied().unwrap_or(LandCoverGroup::Others)
    }

    /// Identity table: code `i` maps to group `i` for the seven groups.
    pub fn identity() -> Self {
        LandCoverGroup::ALL
            .iter()
            .fold(Self::new(), |m, &g| m.with(g.index() as i64, g))
    }
}

/// Per-group area fractions, one grid per group in [`LANDCOVER_CLASSES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionStack<T: Scalar> {
    pub class_names: Vec<String>,
    pub fractions: Vec<Grid<T>>,
}

impl<T: Scalar> FractionStack<T> {
    pub fn new(fractions: Vec<Grid<T>>) -> Result<Self> {
        if fractions.len() != LANDCOVER_CLASSES.len() {
            return Err(SrrmError::DimensionMismatch(format!(
                "fraction stack needs {} groups, got {}",
                LANDCOVER_CLASSES.len(),
                fractions.len()
            )));
        }
        if fractions.iter().any(|g| !g.same_shape(&fractions[0])) {
            return Err(SrrmError::DimensionMismatch("fraction grids differ in shape".into()));
        }
        Ok(FractionStack {
            class_names: LANDCOVER_CLASSES.iter().map(|s| s.to_string()).collect(),
            fractions,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.fractions[0].shape()
    }

    pub fn group(&self, group: LandCoverGroup) -> &Grid<T> {
        &self.fractions[group.index()]
    }

    /// Named layers, for feature stacking.
    pub fn layers(&self) -> Vec<(&str, &Grid<T>)> {
        self.class_names
            .iter()
            .map(String::as_str)
            .zip(self.fractions.iter())
            .collect()
    }

    /// Fractions at one cell, `None` if any group is invalid there.
    pub fn at(&self, row: usize, col: usize) -> Option<Vec<T>> {
        self.fractions.iter().map(|g| g.get(row, col)).collect()
    }
}

/// Fraction of each land-cover group inside every `factor`×`factor` block.
///
/// Invalid fine cells are ignored; a block with no valid cell yields an
/// invalid output cell in every group.
pub fn landcover_fractions<T: Scalar>(
    categorical: &Grid<T>,
    class_map: &ClassMap,
    factor: usize,
) -> Result<FractionStack<T>> {
    check_factor(categorical.rows(), categorical.cols(), factor)?;
    let (rows, cols) = (categorical.rows() / factor, categorical.cols() / factor);
    let geo = categorical.geo().coarsened(factor);
    let mut out: Vec<Grid<T>> = (0..LANDCOVER_CLASSES.len())
        .map(|_| Grid::empty(rows, cols, geo))
        .collect();
    let mut counts = [0usize; 7];
    for cr in 0..rows {
        for cc in 0..cols {
            counts.fill(0);
            let mut valid = 0usize;
            for fr in cr * factor..(cr + 1) * factor {
                for fc in cc * factor..(cc + 1) * factor {
                    if let Some(code) = categorical.get(fr, fc) {
                        let code = code.round().to_i64().unwrap_or(i64::MIN);
                        counts[class_map.group(code).index()] += 1;
                        valid += 1;
                    }
                }
            }
            if valid == 0 {
                continue;
            }
            let n = T::of_usize(valid);
            for (grid, &count) in out.iter_mut().zip(counts.iter()) {
                grid.set(cr, cc, T::of_usize(count) / n);
            }
        }
    }
    FractionStack::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoRef;
    use proptest::prelude::*;

    fn geo() -> GeoRef {
        GeoRef::new(1.0, 43.57, -96.68).unwrap()
    }

    #[test]
    fn pure_corn_block() {
        let g = Grid::filled(3, 3, 0.0_f64, geo());
        let fs = landcover_fractions(&g, &ClassMap::identity(), 3).unwrap();
        assert_eq!(fs.at(0, 0).unwrap(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn mixed_block_counts() {
        let map = ClassMap::new()
            .with(1, LandCoverGroup::Corn)
            .with(5, LandCoverGroup::Soybean)
            .with(141, LandCoverGroup::Forest);
        let g = Grid::from_vec(2, 2, vec![1.0, 1.0, 5.0, 141.0], geo()).unwrap();
        let fs = landcover_fractions(&g, &map, 2).unwrap();
        assert_eq!(fs.at(0, 0).unwrap(), vec![0.5, 0.25, 0.0, 0.25, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn unmapped_codes_fall_into_others() {
        let map = ClassMap::new().with(1, LandCoverGroup::Corn);
        let g = Grid::from_vec(1, 2, vec![1.0, 999.0], geo()).unwrap();
        let fs = landcover_fractions(&g, &map, 1).unwrap();
        assert_eq!(fs.group(LandCoverGroup::Others).get(0, 1), Some(1.0));
        assert_eq!(fs.group(LandCoverGroup::Corn).get(0, 1), Some(0.0));
    }

    #[test]
    fn empty_block_is_invalid_in_every_group() {
        let g = Grid::from_vec(
            2,
            4,
            vec![f64::NAN, f64::NAN, 1.0, 2.0, f64::NAN, f64::NAN, 3.0, 4.0],
            geo(),
        )
        .unwrap();
        let fs = landcover_fractions(&g, &ClassMap::identity(), 2).unwrap();
        assert!(fs.at(0, 0).is_none());
        assert!(fs.fractions.iter().all(|f| f.get(0, 0).is_none()));
        assert!(fs.at(0, 1).is_some());
    }

    proptest! {
        #[test]
        fn fractions_sum_to_one(codes in prop::collection::vec(prop_oneof![Just(-1i64), 0i64..10], 36)) {
            let data: Vec<f64> = codes.iter().map(|&c| if c < 0 { f64::NAN } else { c as f64 }).collect();
            let g = Grid::from_vec(6, 6, data, geo()).unwrap();
            let fs = landcover_fractions(&g, &ClassMap::identity(), 3).unwrap();
            for r in 0..2 {
                for c in 0..2 {
                    if let Some(f) = fs.at(r, c) {
                        prop_assert!(f.iter().all(|&v| (0.0..=1.0).contains(&v)));
                        prop_assert!((f.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                    }
                }
            }
        }
    }
}
