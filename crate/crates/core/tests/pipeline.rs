use ndarray::array;
use srrm_core::evaluation::{evaluate_run, rmse, RunFields};
use srrm_core::pipeline::*;
use srrm_core::raster::{parent_index, FeatureTable, Grid};
use srrm_core::synth::{generate_scene, scenario_params, SyntheticScene};
use srrm_core::SrrmError;

fn scene(name: &str, seed: u64) -> SyntheticScene {
    generate_scene(&scenario_params(name, seed).unwrap()).unwrap()
}

fn fixed_k(k: usize) -> PipelineConfig<f64> {
    let mut cfg = PipelineConfig::default();
    cfg.segmentation.k = Some(k);
    cfg
}

#[test]
fn coarse_table_has_fifteen_columns() {
    let s = scene("two-zone", 102);
    let t = aggregate_covariates(&s.scene, 0.5).unwrap();
    assert_eq!(t.n_features(), 15);
    assert_eq!(t.n_samples(), 162);
    assert_eq!(t.feature_names.last().unwrap(), TB_FEATURE);
    assert!(t.standardization.is_some());
}

#[test]
fn constant_covariates_standardize_to_zero() {
    let s = scene("uniform", 101);
    let t = aggregate_covariates(&s.scene, 0.5).unwrap();
    assert!(t.values.iter().all(|&v| v == 0.0));
}

#[test]
fn under_covered_block_drops_its_coarse_row() {
    let mut s = scene("two-zone", 102).scene;
    let ndvi = &mut s.covariates_fine[1].1;
    // 10 of the 16 fine cells of block (2, 3) missing
    for (i, (r, c)) in (8..12).flat_map(|r| (12..16).map(move |c| (r, c))).enumerate() {
        if i < 10 {
            ndvi.invalidate(r, c);
        }
    }
    let t = aggregate_covariates(&s, 0.5).unwrap();
    assert_eq!(t.n_samples(), 161);
    assert!(!t.sample_index.contains(&(2, 3)));
}

fn table(rows: Vec<[f64; 2]>) -> FeatureTable<f64> {
    let n = rows.len();
    let values = ndarray::Array2::from_shape_vec((n, 2), rows.into_iter().flatten().collect()).unwrap();
    FeatureTable::new(
        values,
        vec!["lst".into(), "tb".into()],
        (0..n).map(|i| (i, 0)).collect(),
    )
    .unwrap()
}

#[test]
fn imputation_examples() {
    let full = table(vec![[301.0, 270.0], [299.0, 271.0]]);
    let means = SegmentMeans::from_table(&full, &[0, 0], 1).unwrap();
    for policy in [ImputePolicy::DropRow, ImputePolicy::SegmentMean] {
        let out = impute_missing(&full, policy, &[0, 0], &means).unwrap();
        assert_eq!(out.table.values, full.values);
    }

    let holed = table(vec![[301.0, 270.0], [299.0, 271.0], [f64::NAN, 272.0], [310.0, 280.0]]);
    let segs = [0, 0, 0, 1];
    let means = SegmentMeans::from_table(&holed, &segs, 2).unwrap();
    let out = impute_missing(&holed, ImputePolicy::SegmentMean, &segs, &means).unwrap();
    assert_eq!(out.table.values.row(2), array![300.0, 272.0]);
    assert_eq!(out.filled, vec![0, 0, 1, 0]);
    let out = impute_missing(&holed, ImputePolicy::DropRow, &segs, &means).unwrap();
    assert_eq!(out.kept, vec![0, 1, 3]);

    // segment 1 has no observed LST: the all-segment mean is used
    let t = table(vec![[300.0, 270.0], [302.0, 271.0], [f64::NAN, 280.0]]);
    let m = SegmentMeans::from_table(&t, &[0, 0, 1], 2).unwrap();
    let out = impute_missing(&t, ImputePolicy::SegmentMean, &[0, 0, 1], &m).unwrap();
    assert_eq!(out.table.values[[2, 0]], 301.0);

    let blind = table(vec![[f64::NAN, 270.0], [f64::NAN, 271.0]]);
    let m = SegmentMeans::from_table(&blind, &[0, 0], 1).unwrap();
    let e = impute_missing(&blind, ImputePolicy::SegmentMean, &[0, 0], &m).unwrap_err();
    assert!(matches!(e, SrrmError::UnobservedFeature(ref f) if f == "lst"));
}

#[test]
fn fully_missing_lst_is_an_error() {
    let mut s = scene("two-zone", 102).scene;
    let lst = &mut s.covariates_fine[0].1;
    *lst = Grid::empty(lst.rows(), lst.cols(), *lst.geo());
    assert!(disaggregate(&s, &PipelineConfig::default()).is_err());
}

#[test]
fn labels_are_inherited_and_run_is_deterministic() {
    let s = scene("two-zone", 102);
    let cfg = PipelineConfig::default();
    let a = disaggregate(&s.scene, &cfg).unwrap();
    let (rows, cols) = a.tb_fine.shape();
    for r in 0..rows {
        for c in 0..cols {
            let (pr, pc) = parent_index(r, c, s.scene.factor);
            assert_eq!(a.labels_fine.get(r, c), a.labels_coarse.get(pr, pc));
        }
    }
    assert_eq!(a.tb_fine.valid_count(), rows * cols);
    assert!(a.models.iter().all(|m| m.model.kkt_violation <= 1e-6));
    let b = disaggregate(&s.scene, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.config_echo, cfg.to_config_string());
}

#[test]
fn uniform_scene_gives_uniform_output() {
    let s = scene("uniform", 101);
    let r = disaggregate(&s.scene, &PipelineConfig::default()).unwrap();
    let v = r.tb_fine.valid_values();
    let c = s.scene.tb_coarse.get(0, 0).unwrap();
    assert!(v.iter().all(|&x| (x - c).abs() <= 1e-6));
    let report = evaluate_run(
        RunFields {
            tb_coarse: &r.tb_coarse,
            tb_fine: &r.tb_fine,
            reference: None,
            truth: Some(&s.truth),
        },
        "uniform",
        "1",
    )
    .unwrap();
    assert!(report.delta_mean <= 1e-6 && report.delta_std <= 1e-6 && report.neighbor_max <= 1e-6);
}

#[test]
fn constant_covariates_give_constant_blocks() {
    // covariates flat, coarse T_B varies: every block is predicted from
    // identical features
    let mut s = scene("uniform", 101).scene;
    let tb = &mut s.tb_coarse;
    for r in 0..tb.rows() {
        for c in 0..tb.cols() {
            tb.set(r, c, 260.0 + (r * 3 + c) as f64 * 0.5);
        }
    }
    let out = disaggregate(&s, &fixed_k(2)).unwrap();
    for (r, c, v) in out.tb_fine.valid_cells() {
        let (pr, pc) = parent_index(r, c, s.factor);
        assert_eq!(v, out.tb_fine.get(pr * s.factor, pc * s.factor).unwrap());
    }
}

#[test]
fn editing_one_segment_leaves_others_alone() {
    let s = scene("two-zone", 102);
    let cfg = fixed_k(3);
    let before = disaggregate(&s.scene, &cfg).unwrap();
    let target = 0.0;
    let mut edited = s.scene.clone();
    for (_, g) in edited.covariates_fine.iter_mut() {
        let (rows, cols) = g.shape();
        for r in 0..rows {
            for c in 0..cols {
                if before.labels_fine.get(r, c) == Some(target) {
                    if let Some(v) = g.get(r, c) {
                        g.set(r, c, v * 1.05 + 0.5);
                    }
                }
            }
        }
    }
    let after = disaggregate(&edited, &cfg).unwrap();
    assert_eq!(after.labels_coarse, before.labels_coarse);
    let global = before.models.iter().any(|m| m.segment.is_none());
    assert!(!global, "every segment should have its own model here");
    let mut changed = 0;
    for (r, c, v) in before.tb_fine.valid_cells() {
        let w = after.tb_fine.get(r, c).unwrap();
        if before.labels_fine.get(r, c) == Some(target) {
            changed += usize::from(v != w);
        } else {
            assert_eq!(v.to_bits(), w.to_bits(), "({r}, {c})");
        }
    }
    assert!(changed > 0);
}

#[test]
fn missing_lst_scene_is_filled_and_flagged() {
    let s = scene("missing-lst", 104);
    let r = disaggregate(&s.scene, &PipelineConfig::default()).unwrap();
    assert_eq!(r.tb_fine.valid_count(), r.tb_fine.len());
    assert!(r.diagnostics.iter().map(|d| d.n_imputed).sum::<usize>() > 0);

    let cfg = PipelineConfig {
        impute: ImputePolicy::DropRow,
        ..PipelineConfig::default()
    };
    let dropped = disaggregate(&s.scene, &cfg).unwrap();
    assert_eq!(
        dropped.tb_fine.valid_count(),
        s.scene.covariates_fine[0].1.valid_count()
    );
}

#[test]
fn undersized_segments_use_the_global_model() {
    let s = scene("two-zone", 102);
    let mut cfg = fixed_k(2);
    cfg.min_cluster_size = 500;
    let r = disaggregate(&s.scene, &cfg).unwrap();
    assert_eq!(r.models.len(), 1);
    assert!(r.diagnostics.iter().all(|d| d.uses_global));
    assert!(!r.warnings.is_empty());
    assert!(r.diagnostics_csv().contains("# warning"));
}

#[test]
fn result_directory_round_trip() {
    let s = scene("two-zone", 102);
    let r = disaggregate(&s.scene, &PipelineConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_result_dir(&r, dir.path()).unwrap();
    let back = read_result_dir::<f64>(dir.path()).unwrap();
    // FGRID stores f32
    assert!(rmse(&back.tb_fine, &r.tb_fine).unwrap() < 1e-4);
    assert_eq!(back.labels_fine, r.labels_fine);
    let cfg = PipelineConfig::<f64>::from_file(dir.path().join("config.txt")).unwrap();
    assert_eq!(cfg, PipelineConfig::default());
    let header = std::fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
    assert!(header.starts_with(DIAGNOSTICS_HEADER));
}

#[test]
fn scene_directory_needs_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    match read_scene_dir::<f64>(dir.path()) {
        Err(SrrmError::Io { path, .. }) => assert!(path.ends_with(MANIFEST)),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn single_precision_run_tracks_double() {
    let s = scene("two-zone", 102);
    let r64 = disaggregate(&s.scene, &fixed_k(2)).unwrap();
    let sc = &s.scene;
    let cast = |g: &Grid<f64>| g.cast::<f32>();
    let scene32 = Scene::new(
        cast(&sc.tb_coarse),
        sc.covariates_fine.iter().map(|(n, g)| (n.clone(), cast(g))).collect(),
        srrm_core::raster::FractionStack::new(sc.landcover_fine.layers().into_iter().map(|(_, g)| cast(g)).collect())
            .unwrap(),
        SoilTexture {
            sand: cast(&sc.soil_fine.sand),
            clay: cast(&sc.soil_fine.clay),
            silt: cast(&sc.soil_fine.silt),
        },
        sc.factor,
    )
    .unwrap();
    let mut cfg = PipelineConfig::<f32>::default();
    cfg.segmentation.k = Some(2);
    cfg.svr_tol = 1e-3;
    let r32 = disaggregate(&scene32, &cfg).unwrap();
    let m64 = r64.tb_fine.valid_mean().unwrap();
    let m32 = r32.tb_fine.valid_mean().unwrap() as f64;
    assert!((m64 - m32).abs() < 0.5, "{m64} vs {m32}");
}
