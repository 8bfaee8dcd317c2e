//! Segment → train per segment → predict at fine resolution.

mod config;
mod scene;

pub use config::{ImputePolicy, PipelineConfig, SvrGrid};
pub use scene::{read_scene_dir, write_scene_dir, Scene, SoilTexture, DEFAULT_COVARIATES, MANIFEST, SOIL_LAYERS};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{Result, SrrmError};
use crate::kernels::median_pairwise_distance;
use crate::raster::io::{read_fgrid, write_fgrid};
use crate::raster::{block_aggregate, parent_index, stack_features_with_missing, FeatureTable, Grid, Standardization};
use crate::scalar::Scalar;
use crate::segmentation::{
    build_cluster_features, label_grid, optimize_memberships, select_num_clusters, Segmentation,
};
use crate::svr::{cross_validate, default_grid, svr_train, HyperParams, SvrModel};

/// Name of the coarse brightness-temperature feature column.
pub const TB_FEATURE: &str = "tb";

/// Coarse-resolution versions of every fine layer, in feature order, with
/// the coarse `T_B` appended last.
pub fn aggregate_layers<T: Scalar>(scene: &Scene<T>, min_coverage: f64) -> Result<Vec<(String, Grid<T>)>> {
    scene.validate()?;
    let mut out = scene
        .fine_layers()
        .into_iter()
        .map(|(name, g)| Ok((name, block_aggregate(g, scene.factor, min_coverage)?)))
        .collect::<Result<Vec<_>>>()?;
    out.push((TB_FEATURE.to_string(), scene.tb_coarse.clone()));
    Ok(out)
}

/// Coarse training table: block-aggregated covariates plus coarse `T_B`,
/// one row per coarse cell where everything is valid, standardized. The
/// fitted parameters stay attached for reuse at fine scale.
pub fn aggregate_covariates<T: Scalar>(scene: &Scene<T>, min_coverage: f64) -> Result<FeatureTable<T>> {
    let layers = aggregate_layers(scene, min_coverage)?;
    let refs: Vec<(&str, &Grid<T>)> = layers.iter().map(|(n, g)| (n.as_str(), g)).collect();
    let table = stack_features_with_missing(&refs, &[TB_FEATURE])?.drop_incomplete();
    if table.n_samples() == 0 {
        return Err(SrrmError::NoValidData("no coarse cell has every covariate".into()));
    }
    table.standardized()
}

/// Per-segment means of each feature over observed coarse values, with the
/// all-segment mean as fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMeans<T: Scalar> {
    pub feature_names: Vec<String>,
    pub per_segment: Vec<Vec<Option<T>>>,
    pub global: Vec<Option<T>>,
}

impl<T: Scalar> SegmentMeans<T> {
    /// `segments[i]` is the segment of row `i` of the (raw) `table`.
    pub fn from_table(table: &FeatureTable<T>, segments: &[usize], n_segments: usize) -> Result<Self> {
        if segments.len() != table.n_samples() || segments.iter().any(|&s| s >= n_segments) {
            return Err(SrrmError::DimensionMismatch(
                "segment ids do not match the table".into(),
            ));
        }
        let mean = |rows: &mut dyn Iterator<Item = usize>, j: usize| -> Option<T> {
            let (sum, n) = rows
                .map(|i| table.values[[i, j]])
                .filter(|v| !v.is_nan())
                .fold((T::zero(), 0usize), |(s, n), v| (s + v, n + 1));
            (n > 0).then(|| sum / T::of_usize(n))
        };
        let d = table.n_features();
        let per_segment = (0..n_segments)
            .map(|s| {
                (0..d)
                    .map(|j| mean(&mut (0..segments.len()).filter(|&i| segments[i] == s), j))
                    .collect()
            })
            .collect();
        let global = (0..d).map(|j| mean(&mut (0..segments.len()), j)).collect();
        Ok(SegmentMeans {
            feature_names: table.feature_names.clone(),
            per_segment,
            global,
        })
    }

    /// Fill value for `feature` in `segment`.
    pub fn value(&self, segment: usize, feature: usize) -> Result<T> {
        self.per_segment
            .get(segment)
            .and_then(|m| m[feature])
            .or(self.global[feature])
            .ok_or_else(|| SrrmError::UnobservedFeature(self.feature_names[feature].clone()))
    }
}

/// A table after applying an [`ImputePolicy`].
#[derive(Debug, Clone, PartialEq)]
pub struct Imputed<T: Scalar> {
    pub table: FeatureTable<T>,
    /// Rows of the input that survive, in order.
    pub kept: Vec<usize>,
    /// Number of entries filled in each surviving row.
    pub filled: Vec<usize>,
}

/// Removes (`DropRow`) or fills (`SegmentMean`) missing entries of a raw
/// table whose row `i` belongs to `segments[i]`.
pub fn impute_missing<T: Scalar>(
    table: &FeatureTable<T>,
    policy: ImputePolicy,
    segments: &[usize],
    means: &SegmentMeans<T>,
) -> Result<Imputed<T>> {
    if segments.len() != table.n_samples() || means.feature_names != table.feature_names {
        return Err(SrrmError::DimensionMismatch(
            "imputation inputs do not match the table".into(),
        ));
    }
    match policy {
        ImputePolicy::DropRow => {
            let kept: Vec<usize> = (0..table.n_samples())
                .filter(|&i| table.row(i).iter().all(|v| !v.is_nan()))
                .collect();
            Ok(Imputed {
                table: table.select_rows(&kept),
                filled: vec![0; kept.len()],
                kept,
            })
        }
        ImputePolicy::SegmentMean => {
            let mut out = table.clone();
            let mut filled = vec![0; table.n_samples()];
            for (i, count) in filled.iter_mut().enumerate() {
                for j in 0..table.n_features() {
                    if out.values[[i, j]].is_nan() {
                        out.values[[i, j]] = means.value(segments[i], j)?;
                        *count += 1;
                    }
                }
            }
            Ok(Imputed {
                table: out,
                kept: (0..table.n_samples()).collect(),
                filled,
            })
        }
    }
}

/// Model fitted for one segment (or the all-pixel fallback), with the data
/// it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentModel<T: Scalar> {
    /// `None` for the all-pixel model.
    pub segment: Option<usize>,
    pub model: SvrModel<T>,
    pub standardization: Vec<Standardization<T>>,
    pub hyper: HyperParams<T>,
    pub cv_rmse: T,
    pub train_rmse: T,
    pub train_x: Array2<T>,
    pub train_y: Vec<T>,
}

/// Per-segment record for the diagnostics file.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDiagnostics<T: Scalar> {
    pub segment: usize,
    pub n_coarse: usize,
    pub n_train: usize,
    /// Index into [`DisaggregationResult::models`].
    pub model_index: usize,
    pub uses_global: bool,
    pub c: T,
    pub epsilon: T,
    pub sigma: T,
    pub cv_rmse: T,
    pub train_rmse: T,
    pub n_support: usize,
    pub kkt_violation: T,
    pub n_fine: usize,
    pub n_imputed: usize,
}

pub const DIAGNOSTICS_HEADER: &str = "segment,n_coarse,n_train,model,uses_global,C,epsilon,sigma,cv_rmse_K,train_rmse_K,n_support,kkt_violation,n_fine,n_imputed";

/// Output of [`disaggregate`].
#[derive(Debug, Clone, PartialEq)]
pub struct DisaggregationResult<T: Scalar> {
    pub tb_fine: Grid<T>,
    pub tb_coarse: Grid<T>,
    pub labels_coarse: Grid<T>,
    pub labels_fine: Grid<T>,
    pub n_segments: usize,
    pub segmentation_cost: T,
    pub models: Vec<SegmentModel<T>>,
    pub diagnostics: Vec<ClusterDiagnostics<T>>,
    pub warnings: Vec<String>,
    pub config_echo: String,
}

/// Segmentation of the coarse `T_B` field as used by [`disaggregate`].
#[derive(Debug, Clone)]
pub struct CoarseSegmentation<T: Scalar> {
    /// `[T_B, lat, lon]` rows that were clustered.
    pub features: FeatureTable<T>,
    pub segmentation: Segmentation<T>,
    /// Segment id per coarse cell; invalid where `T_B` is.
    pub labels: Grid<T>,
}

/// Clusters the valid coarse cells with the configured (or selected)
/// segment count. Seeded from `cfg.seed`.
pub fn segment_coarse<T: Scalar>(tb: &Grid<T>, cfg: &PipelineConfig<T>) -> Result<CoarseSegmentation<T>> {
    let x = build_cluster_features(tb)?;
    let n = x.n_samples();
    let seg_cfg = cfg.segmentation.clone().with_seed(cfg.seed);
    let seg = match seg_cfg.k {
        Some(k) => optimize_memberships(x.values.view(), &seg_cfg.with_k(k.min(n)))?,
        None => {
            let k_max = seg_cfg.k_max.min(n);
            select_num_clusters(x.values.view(), seg_cfg.k_min.min(k_max), k_max, &seg_cfg)?.segmentation
        }
    };
    let labels = label_grid(tb, &x.sample_index, &seg.labels);
    Ok(CoarseSegmentation {
        features: x,
        segmentation: seg,
        labels,
    })
}

/// Coarse labels repeated over each block, on a fine grid of `factor`× the
/// coarse shape.
pub fn inherit_labels<T: Scalar>(labels_coarse: &Grid<T>, factor: usize) -> Grid<T> {
    let like = Grid::<T>::empty(
        labels_coarse.rows() * factor,
        labels_coarse.cols() * factor,
        labels_coarse.geo().refined(factor),
    );
    expand(labels_coarse, factor, &like)
}

fn fit_model<T: Scalar>(
    raw: &FeatureTable<T>,
    rows: &[usize],
    segment: Option<usize>,
    cfg: &PipelineConfig<T>,
) -> Result<SegmentModel<T>> {
    let sub = raw.select_rows(rows);
    // fit on the segment alone so a model never depends on other segments
    let standardization = sub.fit_standardization()?;
    let x = sub.standardized_with(&standardization)?.values;
    let tb = raw.column_index(TB_FEATURE).expect("tb column present");
    let y: Vec<T> = rows.iter().map(|&i| raw.values[[i, tb]]).collect();
    let n = y.len();
    let mut scale = median_pairwise_distance(x.view());
    if !(scale > T::zero()) {
        scale = T::one();
    }
    let grid = default_grid(&cfg.grid.c, &cfg.grid.epsilon, &cfg.grid.sigma_factors, scale);
    let seed = cfg.seed.wrapping_add(segment.map_or(0, |s| s as u64 + 1));
    let cv = cross_validate(x.view(), &y, &grid, cfg.folds.min(n), seed, cfg.svr_tol)?;
    let model = svr_train(x.view(), &y, &cv.best.train_config(cfg.svr_tol))?;
    let fit = model.predict_batch(x.view())?;
    let sq: T = fit.iter().zip(&y).map(|(&f, &t)| (f - t) * (f - t)).sum();
    Ok(SegmentModel {
        segment,
        model,
        standardization,
        hyper: cv.best,
        cv_rmse: cv.best_rmse,
        train_rmse: (sq / T::of_usize(n)).sqrt(),
        train_x: x,
        train_y: y,
    })
}

/// Parent coarse `T_B` repeated over each block, on the fine grid.
fn expand<T: Scalar>(coarse: &Grid<T>, factor: usize, like: &Grid<T>) -> Grid<T> {
    let mut g = Grid::empty(like.rows(), like.cols(), *like.geo());
    for r in 0..like.rows() {
        for c in 0..like.cols() {
            let (pr, pc) = parent_index(r, c, factor);
            if let Some(v) = coarse.get(pr, pc) {
                g.set(r, c, v);
            }
        }
    }
    g
}

/// Full multiscale run on one scene. Deterministic for a fixed config.
pub fn disaggregate<T: Scalar>(scene: &Scene<T>, cfg: &PipelineConfig<T>) -> Result<DisaggregationResult<T>> {
    cfg.validate()?;
    scene.validate()?;
    let factor = scene.factor;
    let mut warnings = Vec::new();

    // 1. segmentation of the coarse field
    let CoarseSegmentation {
        segmentation: seg,
        labels: labels_coarse,
        ..
    } = segment_coarse(&scene.tb_coarse, cfg)?;
    let k = seg.membership.n_segments();
    let label_at = |r: usize, c: usize| labels_coarse.get(r, c).map(|v| v.to_usize().unwrap_or(0));

    // 2. coarse features, all cells with valid T_B (missing covariates NaN)
    let layers = aggregate_layers(scene, cfg.min_coverage)?;
    let refs: Vec<(&str, &Grid<T>)> = layers.iter().map(|(n, g)| (n.as_str(), g)).collect();
    let raw = stack_features_with_missing(&refs, &[TB_FEATURE])?;
    let row_segment: Vec<usize> = raw
        .sample_index
        .iter()
        .map(|&(r, c)| label_at(r, c).expect("every valid T_B pixel is labelled"))
        .collect();
    let complete: Vec<usize> = (0..raw.n_samples())
        .filter(|&i| raw.row(i).iter().all(|v| !v.is_nan()))
        .collect();
    let means = SegmentMeans::from_table(&raw, &row_segment, k)?;

    // 3. one model per segment, the all-pixel model for undersized ones
    let members: Vec<Vec<usize>> = (0..k)
        .map(|s| complete.iter().copied().filter(|&i| row_segment[i] == s).collect())
        .collect();
    let n_coarse: Vec<usize> = (0..k)
        .map(|s| row_segment.iter().filter(|&&x| x == s).count())
        .collect();
    let own: Vec<usize> = (0..k).filter(|&s| members[s].len() >= cfg.min_cluster_size).collect();
    let needs_global = (0..k).any(|s| n_coarse[s] > 0 && members[s].len() < cfg.min_cluster_size);
    if own.is_empty() {
        warnings.push("every segment is below min_cluster_size; using one all-pixel model".to_string());
    }
    if needs_global && complete.len() < 2 {
        return Err(SrrmError::NoValidData(format!(
            "only {} coarse cell(s) have every covariate",
            complete.len()
        )));
    }
    let mut jobs: Vec<(Option<usize>, &[usize])> = own.iter().map(|&s| (Some(s), members[s].as_slice())).collect();
    if needs_global {
        jobs.push((None, complete.as_slice()));
    }
    let models: Vec<SegmentModel<T>> = jobs
        .par_iter()
        .map(|(s, rows)| fit_model(&raw, rows, *s, cfg))
        .collect::<Result<_>>()?;
    let model_of: Vec<Option<usize>> = (0..k)
        .map(|s| {
            models
                .iter()
                .position(|m| m.segment == Some(s))
                .or_else(|| needs_global.then(|| models.len() - 1))
        })
        .collect();

    // 4. fine prediction
    let (rows, cols) = scene.fine_shape();
    let fine = scene.fine_layers();
    let tb_parent = expand(&scene.tb_coarse, factor, fine[0].1);
    let mut fine_refs: Vec<(&str, &Grid<T>)> = fine.iter().map(|(n, g)| (n.as_str(), *g)).collect();
    fine_refs.push((TB_FEATURE, &tb_parent));
    let fine_raw = stack_features_with_missing(&fine_refs, &[TB_FEATURE])?;
    let fine_segment: Vec<Option<usize>> = fine_raw
        .sample_index
        .iter()
        .map(|&(r, c)| {
            let (pr, pc) = parent_index(r, c, factor);
            label_at(pr, pc)
        })
        .collect();
    let seg_ids: Vec<usize> = fine_segment.iter().map(|s| s.unwrap_or(0)).collect();
    let imputed = impute_missing(&fine_raw, cfg.impute, &seg_ids, &means)?;

    let predictions: Vec<(usize, Option<T>)> = imputed
        .kept
        .par_iter()
        .enumerate()
        .map(|(j, &i)| -> Result<(usize, Option<T>)> {
            let Some(m) = fine_segment[i].and_then(|s| model_of[s]).map(|m| &models[m]) else {
                return Ok((i, None));
            };
            let z: Array1<T> = imputed
                .table
                .row(j)
                .iter()
                .zip(&m.standardization)
                .map(|(&v, p)| p.apply(v))
                .collect();
            Ok((i, Some(m.model.predict(z.view())?)))
        })
        .collect::<Result<_>>()?;

    let geo = *fine[0].1.geo();
    let mut tb_fine = Grid::empty(rows, cols, geo);
    let mut n_fine = vec![0usize; k];
    let mut n_imputed = vec![0usize; k];
    for (j, (i, pred)) in predictions.into_iter().enumerate() {
        if let (Some(v), Some(s)) = (pred, fine_segment[i]) {
            let (r, c) = fine_raw.sample_index[i];
            tb_fine.set(r, c, v);
            n_fine[s] += 1;
            if imputed.filled[j] > 0 {
                n_imputed[s] += 1;
            }
        }
    }
    let labels_fine = expand(&labels_coarse, factor, &tb_fine);

    let diagnostics = (0..k)
        .filter_map(|s| {
            let mi = model_of[s]?;
            let m = &models[mi];
            Some(ClusterDiagnostics {
                segment: s,
                n_coarse: n_coarse[s],
                n_train: members[s].len(),
                model_index: mi,
                uses_global: m.segment.is_none(),
                c: m.hyper.c,
                epsilon: m.hyper.epsilon,
                sigma: m.hyper.sigma,
                cv_rmse: m.cv_rmse,
                train_rmse: m.train_rmse,
                n_support: m.model.n_support(),
                kkt_violation: m.model.kkt_violation,
                n_fine: n_fine[s],
                n_imputed: n_imputed[s],
            })
        })
        .collect();

    Ok(DisaggregationResult {
        tb_fine,
        tb_coarse: scene.tb_coarse.clone(),
        labels_coarse,
        labels_fine,
        n_segments: k,
        segmentation_cost: seg.cost,
        models,
        diagnostics,
        warnings,
        config_echo: cfg.to_config_string(),
    })
}

impl<T: Scalar> DisaggregationResult<T> {
    pub fn diagnostics_csv(&self) -> String {
        let mut s = String::from(DIAGNOSTICS_HEADER);
        s.push('\n');
        for d in &self.diagnostics {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{:.6},{:.6},{},{:e},{},{}",
                d.segment,
                d.n_coarse,
                d.n_train,
                d.model_index,
                d.uses_global,
                d.c.as_f64(),
                d.epsilon.as_f64(),
                d.sigma.as_f64(),
                d.cv_rmse.as_f64(),
                d.train_rmse.as_f64(),
                d.n_support,
                d.kkt_violation.as_f64(),
                d.n_fine,
                d.n_imputed
            );
        }
        for w in &self.warnings {
            let _ = writeln!(s, "# warning: {w}");
        }
        s
    }

    /// Serialized form of every trained model, in `models` order.
    pub fn models_text(&self) -> String {
        let mut s = String::new();
        for (i, m) in self.models.iter().enumerate() {
            let who = m.segment.map_or("global".to_string(), |x| x.to_string());
            let _ = writeln!(s, "# model {i} segment {who}");
            s.push_str(&m.model.to_text());
        }
        s
    }
}

/// Files making up a result directory.
pub const RESULT_FILES: [&str; 7] = [
    "tb_fine.fgrd",
    "tb_coarse.fgrd",
    "labels_coarse.fgrd",
    "labels_fine.fgrd",
    "diagnostics.csv",
    "config.txt",
    "models.txt",
];

pub fn write_result_dir<T: Scalar>(result: &DisaggregationResult<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| SrrmError::io(dir, e))?;
    write_fgrid(&result.tb_fine, dir.join(RESULT_FILES[0]))?;
    write_fgrid(&result.tb_coarse, dir.join(RESULT_FILES[1]))?;
    write_fgrid(&result.labels_coarse, dir.join(RESULT_FILES[2]))?;
    write_fgrid(&result.labels_fine, dir.join(RESULT_FILES[3]))?;
    let text = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| SrrmError::io(&p, e))
    };
    text(RESULT_FILES[4], result.diagnostics_csv())?;
    text(RESULT_FILES[5], result.config_echo.clone())?;
    text(RESULT_FILES[6], result.models_text())
}

/// The grids of a result directory: fine `T_B`, coarse `T_B`, coarse and
/// fine labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultGrids<T: Scalar> {
    pub tb_fine: Grid<T>,
    pub tb_coarse: Grid<T>,
    pub labels_coarse: Grid<T>,
    pub labels_fine: Grid<T>,
}

pub fn read_result_dir<T: Scalar>(dir: impl AsRef<Path>) -> Result<ResultGrids<T>> {
    let dir = dir.as_ref();
    Ok(ResultGrids {
        tb_fine: read_fgrid(dir.join(RESULT_FILES[0]))?,
        tb_coarse: read_fgrid(dir.join(RESULT_FILES[1]))?,
        labels_coarse: read_fgrid(dir.join(RESULT_FILES[2]))?,
        labels_fine: read_fgrid(dir.join(RESULT_FILES[3]))?,
    })
}
