//! Seeded synthetic scenes with known fine-scale truth.
//!
//! Covariates are smooth cosine-mixture fields on the fine grid; the truth
//! is, inside each latent zone, an affine function of the emitted covariate
//! values (plus optional noise and a precipitation-driven depression). The
//! coarse field is the block mean of the truth.
//!
//! Truth values are multiples of 1/256 K and covariates are representable
//! in `f32`, so scenes survive an FGRID round trip bit-exactly and the
//! coarse block means are exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, SrrmError};
use crate::pipeline::{Scene, SoilTexture, DEFAULT_COVARIATES};
use crate::raster::{block_aggregate, landcover_fractions, ClassMap, GeoRef, Grid, LANDCOVER_CLASSES};

/// Sub-cells per fine cell along each axis in the categorical land-cover map.
const LANDCOVER_SUBCELLS: usize = 4;

/// Temperature quantum of the truth field, in kelvin.
const TB_QUANTUM: f64 = 1.0 / 256.0;

/// Nominal centre and spread of each dynamic covariate, in its own units.
const LST_CENTER: f64 = 300.0;
const LST_SPREAD: f64 = 8.0;
const NDVI_SPREAD: f64 = 0.12;
const PPT_CENTER: f64 = 3.0;
const PPT_SPREAD: f64 = 1.5;

/// Truth response, in kelvin, to a one-spread change of a covariate with
/// unit correlation.
const RESPONSE_K: f64 = 6.0;

/// A localized rain storm: more precipitation and lower `T_B` inside a
/// smooth bump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecipEvent {
    /// Centre as fractions of the scene height and width.
    pub center: (f64, f64),
    pub radius_km: f64,
    pub depression_k: f64,
    /// Extra precipitation at the centre, mm.
    pub peak_ppt: f64,
}

/// Everything that defines a synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub coarse_rows: usize,
    pub coarse_cols: usize,
    pub factor: usize,
    pub n_zones: usize,
    pub tb_range: (f64, f64),
    /// Truth sensitivity to LST, NDVI, EVI and PPT, each in `[−1, 1]`.
    pub covariate_correlations: [f64; 4],
    pub noise_sd: f64,
    /// Fraction of fine LST cells masked as missing, in clumps.
    pub missing_fraction: f64,
    pub precip_event: Option<PrecipEvent>,
    pub seed: u64,
    /// Step in mean `T_B` between neighbouring zones, kelvin.
    pub zone_contrast: f64,
    /// Scales every spatial pattern; 0 gives constant covariates.
    pub field_amplitude: f64,
    /// Mean NDVI.
    pub vegetation: f64,
    /// Truth shift, kelvin, for a cell fully covered by each land-cover group.
    pub landcover_effect: [f64; 7],
    /// Truth shift, kelvin, per unit sand fraction above one third.
    pub sand_effect: f64,
    pub fine_cell_km: f64,
    pub origin: (f64, f64),
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            coarse_rows: 9,
            coarse_cols: 18,
            factor: 4,
            n_zones: 2,
            tb_range: (240.0, 300.0),
            covariate_correlations: [0.7, 0.3, 0.2, -0.5],
            noise_sd: 0.3,
            missing_fraction: 0.0,
            precip_event: None,
            seed: 42,
            zone_contrast: 5.0,
            field_amplitude: 1.0,
            vegetation: 0.45,
            landcover_effect: [0.5, 0.5, 0.0, -1.5, -2.0, 1.0, 0.0],
            sand_effect: 3.0,
            fine_cell_km: 9.0,
            origin: (43.57, -96.68),
        }
    }
}

impl SynthParams {
    /// Single zone, no noise, truth affine in LST alone.
    pub fn affine(seed: u64) -> Self {
        SynthParams {
            n_zones: 1,
            covariate_correlations: [1.0, 0.0, 0.0, 0.0],
            noise_sd: 0.0,
            zone_contrast: 0.0,
            landcover_effect: [0.0; 7],
            sand_effect: 0.0,
            seed,
            ..SynthParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(SrrmError::InvalidArgument(format!("synthetic scene: {m}")));
        if self.coarse_rows == 0 || self.coarse_cols == 0 || self.factor == 0 {
            return fail("grid dimensions and factor must be >= 1");
        }
        if self.n_zones == 0 {
            return fail("n_zones must be >= 1");
        }
        let (lo, hi) = self.tb_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return fail("tb_range needs min < max");
        }
        if self.covariate_correlations.iter().any(|r| !(-1.0..=1.0).contains(r)) {
            return fail("covariate correlations must lie in [-1, 1]");
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return fail("noise_sd must be >= 0");
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return fail("missing_fraction must lie in [0, 1)");
        }
        if !(self.field_amplitude >= 0.0 && self.zone_contrast >= 0.0) {
            return fail("amplitudes must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.vegetation) {
            return fail("vegetation must lie in [0, 1]");
        }
        if !(self.fine_cell_km > 0.0) {
            return fail("fine_cell_km must be positive");
        }
        if let Some(ev) = &self.precip_event {
            if !(ev.radius_km > 0.0 && ev.depression_k >= 0.0 && ev.peak_ppt >= 0.0) {
                return fail("precipitation event needs positive radius and non-negative magnitudes");
            }
        }
        Ok(())
    }
}

/// A generated scene plus what generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub scene: Scene<f64>,
    pub truth: Grid<f64>,
    /// Latent zone id of every fine cell.
    pub zones: Grid<f64>,
}

/// Named scenarios used throughout the test suite, all seeded.
pub fn scene_catalog() -> Vec<(&'static str, SynthParams)> {
    let base = SynthParams::default();
    vec![
        (
            "uniform",
            SynthParams {
                n_zones: 1,
                noise_sd: 0.0,
                zone_contrast: 0.0,
                field_amplitude: 0.0,
                seed: 101,
                ..base.clone()
            },
        ),
        (
            "two-zone",
            SynthParams {
                seed: 102,
                ..base.clone()
            },
        ),
        (
            "precip-event",
            SynthParams {
                precip_event: Some(PrecipEvent {
                    center: (0.45, 0.35),
                    radius_km: 110.0,
                    depression_k: 12.0,
                    peak_ppt: 25.0,
                }),
                seed: 103,
                ..base.clone()
            },
        ),
        (
            "missing-lst",
            SynthParams {
                missing_fraction: 0.45,
                seed: 104,
                ..base.clone()
            },
        ),
        (
            "high-vegetation",
            SynthParams {
                vegetation: 0.82,
                seed: 105,
                ..base
            },
        ),
    ]
}

/// Parameters of a catalog scenario (or `"affine"`), reseeded.
pub fn scenario_params(name: &str, seed: u64) -> Result<SynthParams> {
    if name == "affine" {
        return Ok(SynthParams::affine(seed));
    }
    scene_catalog()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, p)| SynthParams { seed, ..p })
        .ok_or_else(|| {
            let names: Vec<&str> = scene_catalog().iter().map(|(n, _)| *n).chain(["affine"]).collect();
            SrrmError::InvalidArgument(format!("unknown scenario '{name}' (known: {})", names.join(", ")))
        })
}

/// Sum of a few random plane waves, normalized to zero mean and unit
/// standard deviation over the grid.
struct SmoothField {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl SmoothField {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..6)
            .map(|_| {
                let wavelength = rng.random_range(180.0..650.0);
                let angle = rng.random_range(0.0..std::f64::consts::PI);
                let k = std::f64::consts::TAU / wavelength;
                (
                    k * angle.cos(),
                    k * angle.sin(),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.5..1.0),
                )
            })
            .collect();
        SmoothField { waves }
    }

    fn at(&self, y_km: f64, x_km: f64) -> f64 {
        self.waves
            .iter()
            .map(|&(kx, ky, ph, a)| a * (kx * x_km + ky * y_km + ph).cos())
            .sum()
    }

    /// Samples at fine-cell centres, standardized.
    fn sample(&self, rows: usize, cols: usize, cell_km: f64) -> Vec<f64> {
        let mut v: Vec<f64> = (0..rows * cols)
            .map(|i| {
                self.at(
                    (i / cols) as f64 * cell_km + cell_km / 2.0,
                    (i % cols) as f64 * cell_km + cell_km / 2.0,
                )
            })
            .collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        for x in &mut v {
            *x = if sd > 0.0 { (*x - mean) / sd } else { 0.0 };
        }
        v
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn as_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Generates the scene described by `params`. Deterministic in the seed.
pub fn generate_scene(params: &SynthParams) -> Result<SyntheticScene> {
    params.validate()?;
    let p = params;
    let (rows, cols) = (p.coarse_rows * p.factor, p.coarse_cols * p.factor);
    let n = rows * cols;
    let km = p.fine_cell_km;
    let geo = GeoRef::new(km, p.origin.0, p.origin.1)?;
    let amp = p.field_amplitude;
    let field = |id: u64| -> Vec<f64> {
        let f = SmoothField::new(&mut stream(p.seed, id));
        f.sample(rows, cols, km).into_iter().map(|v| v * amp).collect()
    };

    // Zones: nearest of n_zones seeded centres, boundaries warped by a
    // smooth field so they are not straight lines.
    let mut zrng = stream(p.seed, 1);
    let centers: Vec<(f64, f64)> = (0..p.n_zones)
        .map(|_| (zrng.random_range(0.0..rows as f64), zrng.random_range(0.0..cols as f64)))
        .collect();
    let warp = field(2);
    let zone: Vec<usize> = (0..n)
        .map(|i| {
            let (r, c) = ((i / cols) as f64 + 0.5, (i % cols) as f64 + 0.5);
            let dist = |z: usize| {
                let (zr, zc) = centers[z];
                ((r - zr).powi(2) + (c - zc).powi(2)).sqrt() + 3.0 * warp[i] * z as f64
            };
            (0..p.n_zones).min_by(|&a, &b| dist(a).total_cmp(&dist(b))).unwrap_or(0)
        })
        .collect();
    let offsets: Vec<f64> = (0..p.n_zones)
        .map(|z| p.zone_contrast * (z as f64 - (p.n_zones as f64 - 1.0) / 2.0))
        .collect();
    let gains: Vec<f64> = (0..p.n_zones)
        .map(|_| {
            if p.n_zones == 1 {
                1.0
            } else {
                zrng.random_range(0.8..1.2)
            }
        })
        .collect();

    // Precipitation bump.
    let bump: Vec<f64> = match &p.precip_event {
        Some(ev) => (0..n)
            .map(|i| {
                let dy = ((i / cols) as f64 + 0.5 - ev.center.0 * rows as f64) * km;
                let dx = ((i % cols) as f64 + 0.5 - ev.center.1 * cols as f64) * km;
                let u = (dx * dx + dy * dy) / (ev.radius_km * ev.radius_km);
                if u < 1.0 {
                    (1.0 - u).powi(2)
                } else {
                    0.0
                }
            })
            .collect(),
        None => vec![0.0; n],
    };

    // Dynamic covariates, rounded to f32.
    let s_lst = field(10);
    let s_ndvi = field(11);
    let s_evi = field(12);
    let s_ppt = field(13);
    let lst: Vec<f64> = s_lst.iter().map(|s| as_f32(LST_CENTER + LST_SPREAD * s)).collect();
    let ndvi: Vec<f64> = s_ndvi
        .iter()
        .map(|s| as_f32((p.vegetation + NDVI_SPREAD * (1.0 - p.vegetation).min(0.5) * 2.0 * s).clamp(0.0, 0.99)))
        .collect();
    let evi: Vec<f64> = ndvi
        .iter()
        .zip(&s_evi)
        .map(|(v, s)| as_f32((0.85 * v - 0.02 + 0.02 * s).clamp(0.0, 0.99)))
        .collect();
    let ppt: Vec<f64> = s_ppt
        .iter()
        .zip(&bump)
        .map(|(s, b)| {
            let peak = p.precip_event.map_or(0.0, |e| e.peak_ppt);
            as_f32((PPT_CENTER + PPT_SPREAD * s).max(0.0) + peak * b)
        })
        .collect();

    // Land cover: categorical sub-cell map following smooth preference
    // fields, then block fractions.
    let lc_fields: Vec<SmoothField> = (0..LANDCOVER_CLASSES.len())
        .map(|g| SmoothField::new(&mut stream(p.seed, 20 + g as u64)))
        .collect();
    let mut lc_rng = stream(p.seed, 30);
    let lc_bias: Vec<Vec<f64>> = (0..p.n_zones)
        .map(|_| {
            (0..LANDCOVER_CLASSES.len())
                .map(|_| lc_rng.random_range(-0.5..0.5))
                .collect()
        })
        .collect();
    let sub = LANDCOVER_SUBCELLS;
    let sub_km = km / sub as f64;
    let mut categorical = Grid::filled(rows * sub, cols * sub, 0.0, geo.refined(sub));
    for r in 0..rows * sub {
        for c in 0..cols * sub {
            let (y, x) = (r as f64 * sub_km + sub_km / 2.0, c as f64 * sub_km + sub_km / 2.0);
            let z = zone[(r / sub) * cols + c / sub];
            let best = (0..LANDCOVER_CLASSES.len())
                .map(|g| {
                    (
                        g,
                        amp * lc_fields[g].at(y, x) + lc_bias[z][g] + amp * 0.3 * lc_rng.random_range(-1.0..1.0),
                    )
                })
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map_or(0, |(g, _)| g);
            categorical.set(r, c, best as f64);
        }
    }
    let landcover = landcover_fractions(&categorical, &ClassMap::identity(), sub)?;

    // Soil texture: softmax of three smooth fields.
    let soil_raw = [field(40), field(41), field(42)];
    let mut sand = Vec::with_capacity(n);
    let mut clay = Vec::with_capacity(n);
    let mut silt = Vec::with_capacity(n);
    for i in 0..n {
        let e: Vec<f64> = soil_raw.iter().map(|f| (0.6 * f[i]).exp()).collect();
        let total: f64 = e.iter().sum();
        let (a, b) = (as_f32(e[0] / total), as_f32(e[1] / total));
        sand.push(a);
        clay.push(b);
        silt.push(as_f32(1.0 - a - b));
    }

    // Truth.
    let rho = p.covariate_correlations;
    let ndvi_spread = NDVI_SPREAD * (1.0 - p.vegetation).min(0.5) * 2.0;
    let mut raw = Vec::with_capacity(n);
    for i in 0..n {
        let z = zone[i];
        let lc_shift: f64 = (0..LANDCOVER_CLASSES.len())
            .map(|g| p.landcover_effect[g] * landcover.fractions[g].get(i / cols, i % cols).unwrap_or(0.0))
            .sum();
        let signal = rho[0] * (lst[i] - LST_CENTER) / LST_SPREAD
            + if ndvi_spread > 0.0 {
                rho[1] * (ndvi[i] - p.vegetation) / ndvi_spread
            } else {
                0.0
            }
            + if ndvi_spread > 0.0 {
                rho[2] * (evi[i] - 0.85 * p.vegetation) / (0.85 * ndvi_spread)
            } else {
                0.0
            }
            + rho[3] * (ppt[i] - PPT_CENTER) / PPT_SPREAD;
        let depression = p.precip_event.map_or(0.0, |e| e.depression_k * bump[i]);
        raw.push(
            offsets[z] + gains[z] * RESPONSE_K * signal + lc_shift + p.sand_effect * (sand[i] - 1.0 / 3.0) - depression,
        );
    }
    // Centre in tb_range; shrink affinely only if the spread would not fit.
    let (lo, hi) = p.tb_range;
    let (rmin, rmax) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let room = 0.9 * (hi - lo);
    let scale = if rmax - rmin > room { room / (rmax - rmin) } else { 1.0 };
    let mid = (lo + hi) / 2.0;
    let noise = Normal::new(0.0, p.noise_sd.max(f64::MIN_POSITIVE)).expect("finite sd");
    let mut nrng = stream(p.seed, 50);
    let truth_vals: Vec<f64> = raw
        .iter()
        .map(|&v| {
            let e = if p.noise_sd > 0.0 { noise.sample(&mut nrng) } else { 0.0 };
            let t = (mid + (v - (rmin + rmax) / 2.0) * scale + e).clamp(lo, hi);
            (t / TB_QUANTUM).round() * TB_QUANTUM
        })
        .collect();

    // Clumped missing LST: lowest values of a smooth field.
    let mut lst_grid = Grid::from_vec(rows, cols, lst, geo)?;
    if p.missing_fraction > 0.0 {
        let m = SmoothField::new(&mut stream(p.seed, 60)).sample(rows, cols, km);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| m[a].total_cmp(&m[b]).then(a.cmp(&b)));
        let count = (p.missing_fraction * n as f64).round() as usize;
        for &i in &order[..count] {
            lst_grid.invalidate(i / cols, i % cols);
        }
    }

    let truth = Grid::from_vec(rows, cols, truth_vals, geo)?;
    let tb_coarse = block_aggregate(&truth, p.factor, 1.0)?;
    let covariates: Vec<(String, Grid<f64>)> = DEFAULT_COVARIATES
        .iter()
        .map(|s| s.to_string())
        .zip([
            lst_grid,
            Grid::from_vec(rows, cols, ndvi, geo)?,
            Grid::from_vec(rows, cols, evi, geo)?,
            Grid::from_vec(rows, cols, ppt, geo)?,
        ])
        .collect();
    let soil = SoilTexture {
        sand: Grid::from_vec(rows, cols, sand, geo)?,
        clay: Grid::from_vec(rows, cols, clay, geo)?,
        silt: Grid::from_vec(rows, cols, silt, geo)?,
    };
    let scene = Scene::new(tb_coarse, covariates, landcover, soil, p.factor)?;
    let zones = Grid::from_vec(rows, cols, zone.iter().map(|&z| z as f64).collect(), geo)?;
    Ok(SyntheticScene { scene, truth, zones })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_inputs_give_constant_truth() {
        let p = SynthParams {
            n_zones: 1,
            noise_sd: 0.0,
            field_amplitude: 0.0,
            zone_contrast: 0.0,
            ..SynthParams::default()
        };
        let s = generate_scene(&p).unwrap();
        let v = s.truth.valid_values();
        assert!(v.iter().all(|&x| x == v[0]));
        assert!(s.scene.tb_coarse.valid_values().iter().all(|&x| x == v[0]));
    }

    #[test]
    fn default_size_matches_study_region() {
        let s = generate_scene(&SynthParams::default()).unwrap();
        assert_eq!(s.scene.tb_coarse.shape(), (9, 18));
        assert_eq!(s.scene.tb_coarse.valid_count(), 162);
        assert_eq!(s.truth.shape(), (36, 72));
    }

    #[test]
    fn rejects_bad_params() {
        let bad = [
            SynthParams {
                tb_range: (300.0, 240.0),
                ..SynthParams::default()
            },
            SynthParams {
                noise_sd: -1.0,
                ..SynthParams::default()
            },
            SynthParams {
                missing_fraction: 1.0,
                ..SynthParams::default()
            },
            SynthParams {
                n_zones: 0,
                ..SynthParams::default()
            },
            SynthParams {
                covariate_correlations: [2.0, 0.0, 0.0, 0.0],
                ..SynthParams::default()
            },
        ];
        for p in bad {
            assert!(generate_scene(&p).is_err());
        }
        assert!(scenario_params("nope", 1).is_err());
    }

    #[test]
    fn truth_stays_in_range() {
        for (_, p) in scene_catalog() {
            let s = generate_scene(&p).unwrap();
            assert!(s.truth.valid_values().iter().all(|&t| (240.0..=300.0).contains(&t)));
        }
    }
}
