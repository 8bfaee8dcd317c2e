use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Result, SrrmError};
use crate::raster::io::{read_fgrid, write_fgrid};
use crate::raster::{FractionStack, Grid, LandCoverGroup, LANDCOVER_CLASSES};
use crate::scalar::Scalar;

/// Dynamic covariates in their usual order.
pub const DEFAULT_COVARIATES: [&str; 4] = ["lst", "ndvi", "evi", "ppt"];

/// Soil-texture layer names.
pub const SOIL_LAYERS: [&str; 3] = ["sand", "clay", "silt"];

/// Name of the manifest inside a scene directory.
pub const MANIFEST: &str = "manifest.txt";

/// Allowed deviation of sand + clay + silt from one.
const TEXTURE_SUM_TOL: f64 = 1e-6;

/// Sand, clay and silt volume fractions on the fine grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SoilTexture<T: Scalar> {
    pub sand: Grid<T>,
    pub clay: Grid<T>,
    pub silt: Grid<T>,
}

impl<T: Scalar> SoilTexture<T> {
    pub fn layers(&self) -> [(&'static str, &Grid<T>); 3] {
        [("sand", &self.sand), ("clay", &self.clay), ("silt", &self.silt)]
    }
}

/// Inputs of one disaggregation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene<T: Scalar> {
    pub tb_coarse: Grid<T>,
    /// Named dynamic covariates at fine resolution, in feature order.
    pub covariates_fine: Vec<(String, Grid<T>)>,
    pub landcover_fine: FractionStack<T>,
    pub soil_fine: SoilTexture<T>,
    pub factor: usize,
}

impl<T: Scalar> Scene<T> {
    pub fn new(
        tb_coarse: Grid<T>,
        covariates_fine: Vec<(String, Grid<T>)>,
        landcover_fine: FractionStack<T>,
        soil_fine: SoilTexture<T>,
        factor: usize,
    ) -> Result<Self> {
        let scene = Scene {
            tb_coarse,
            covariates_fine,
            landcover_fine,
            soil_fine,
            factor,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn fine_shape(&self) -> (usize, usize) {
        (self.tb_coarse.rows() * self.factor, self.tb_coarse.cols() * self.factor)
    }

    /// Every fine layer (covariates, land cover, soil) with its feature name.
    pub fn fine_layers(&self) -> Vec<(String, &Grid<T>)> {
        let mut out: Vec<(String, &Grid<T>)> = self.covariates_fine.iter().map(|(n, g)| (n.clone(), g)).collect();
        out.extend(
            self.landcover_fine
                .layers()
                .into_iter()
                .map(|(n, g)| (format!("lc_{n}"), g)),
        );
        out.extend(self.soil_fine.layers().into_iter().map(|(n, g)| (n.to_string(), g)));
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.factor == 0 {
            return Err(SrrmError::InvalidArgument("scale factor must be >= 1".into()));
        }
        let shape = self.fine_shape();
        let mut names = BTreeSet::new();
        for (name, _) in &self.covariates_fine {
            let reserved = name == "tb" || SOIL_LAYERS.contains(&name.as_str()) || name.starts_with("lc_");
            if name.is_empty() || reserved || !names.insert(name.as_str()) {
                return Err(SrrmError::InvalidArgument(format!(
                    "invalid or duplicate covariate name '{name}'"
                )));
            }
        }
        for (name, grid) in self.fine_layers() {
            if grid.shape() != shape {
                return Err(SrrmError::DimensionMismatch(format!(
                    "fine layer '{name}' is {:?}, expected {:?} (coarse {:?} × {})",
                    grid.shape(),
                    shape,
                    self.tb_coarse.shape(),
                    self.factor
                )));
            }
        }
        let s = &self.soil_fine;
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                if let (Some(a), Some(b), Some(d)) = (s.sand.get(r, c), s.clay.get(r, c), s.silt.get(r, c)) {
                    let sum = (a + b + d).as_f64();
                    if (sum - 1.0).abs() > TEXTURE_SUM_TOL {
                        return Err(SrrmError::InvalidArgument(format!(
                            "soil fractions at ({r}, {c}) sum to {sum}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Writes the scene (and optionally its fine truth) as FGRID files plus a
/// manifest naming each layer.
pub fn write_scene_dir<T: Scalar>(scene: &Scene<T>, truth: Option<&Grid<T>>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| SrrmError::io(dir, e))?;
    let mut manifest = String::from("# srrm scene\n");
    let _ = writeln!(manifest, "factor = {}", scene.factor);
    let mut put = |key: String, file: String, grid: &Grid<T>| -> Result<()> {
        write_fgrid(grid, dir.join(&file))?;
        let _ = writeln!(manifest, "{key} = {file}");
        Ok(())
    };
    put("tb_coarse".into(), "tb_coarse.fgrd".into(), &scene.tb_coarse)?;
    for (name, g) in &scene.covariates_fine {
        put(format!("covariate.{name}"), format!("{name}.fgrd"), g)?;
    }
    for (name, g) in scene.landcover_fine.layers() {
        put(format!("landcover.{name}"), format!("lc_{name}.fgrd"), g)?;
    }
    for (name, g) in scene.soil_fine.layers() {
        put(format!("soil.{name}"), format!("{name}.fgrd"), g)?;
    }
    if let Some(t) = truth {
        put("truth".into(), "truth.fgrd".into(), t)?;
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| SrrmError::io(&path, e))
}

/// Reads a scene directory written by [`write_scene_dir`]; returns the truth
/// grid too when the manifest lists one.
pub fn read_scene_dir<T: Scalar>(dir: impl AsRef<Path>) -> Result<(Scene<T>, Option<Grid<T>>)> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| SrrmError::io(&path, e))?;
    let bad = |msg: String| SrrmError::format(&path, msg);

    let mut factor = None;
    let mut tb = None;
    let mut truth = None;
    let mut covariates = Vec::new();
    let mut lc: Vec<Option<Grid<T>>> = vec![None; LANDCOVER_CLASSES.len()];
    let mut soil: [Option<Grid<T>>; 3] = [None, None, None];
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| bad(format!("line {}: expected 'key = value'", lineno + 1)))?;
        if key == "factor" {
            factor = Some(
                value
                    .parse::<usize>()
                    .map_err(|_| bad(format!("bad factor '{value}'")))?,
            );
            continue;
        }
        let grid = || read_fgrid::<T>(dir.join(value));
        match key.split_once('.') {
            None if key == "tb_coarse" => tb = Some(grid()?),
            None if key == "truth" => truth = Some(grid()?),
            Some(("covariate", name)) => covariates.push((name.to_string(), grid()?)),
            Some(("landcover", name)) => {
                let g = LandCoverGroup::ALL
                    .iter()
                    .find(|g| g.name() == name)
                    .ok_or_else(|| bad(format!("unknown land-cover group '{name}'")))?;
                lc[g.index()] = Some(grid()?);
            }
            Some(("soil", name)) => {
                let i = SOIL_LAYERS
                    .iter()
                    .position(|s| *s == name)
                    .ok_or_else(|| bad(format!("unknown soil layer '{name}'")))?;
                soil[i] = Some(grid()?);
            }
            _ => return Err(bad(format!("unknown manifest key '{key}'"))),
        }
    }
    let factor = factor.ok_or_else(|| bad("missing 'factor'".into()))?;
    let tb = tb.ok_or_else(|| bad("missing 'tb_coarse'".into()))?;
    let lc = lc
        .into_iter()
        .zip(LANDCOVER_CLASSES)
        .map(|(g, name)| g.ok_or_else(|| bad(format!("missing land-cover layer '{name}'"))))
        .collect::<Result<Vec<_>>>()?;
    let [sand, clay, silt] = soil;
    let missing = |name: &str| bad(format!("missing soil layer '{name}'"));
    let soil = SoilTexture {
        sand: sand.ok_or_else(|| missing("sand"))?,
        clay: clay.ok_or_else(|| missing("clay"))?,
        silt: silt.ok_or_else(|| missing("silt"))?,
    };
    let scene = Scene::new(tb, covariates, FractionStack::new(lc)?, soil, factor)?;
    Ok((scene, truth))
}
