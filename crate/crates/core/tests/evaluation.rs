use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use srrm_core::evaluation::*;
use srrm_core::pipeline::{disaggregate, PipelineConfig};
use srrm_core::raster::Grid;
use srrm_core::synth::{generate_scene, scenario_params};

fn noisy(g: &Grid<f64>, sd: f64, seed: u64) -> Grid<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sd).unwrap();
    let mut out = g.clone();
    for (r, c, v) in g.valid_cells() {
        out.set(r, c, v + n.sample(&mut rng));
    }
    out
}

#[test]
fn two_zone_report() {
    let s = generate_scene(&scenario_params("two-zone", 102).unwrap()).unwrap();
    let r = disaggregate(&s.scene, &PipelineConfig::default()).unwrap();
    let reference = noisy(&s.truth, 5.0, 9);
    let fields = RunFields {
        tb_coarse: &r.tb_coarse,
        tb_fine: &r.tb_fine,
        reference: Some(&reference),
        truth: Some(&s.truth),
    };
    let report = evaluate_run(fields, "two-zone", "1").unwrap();
    let direct = rmse(&r.tb_fine, &s.truth).unwrap();
    assert!((report.rmse_vs_truth.unwrap() - direct).abs() <= 1e-12);
    assert_eq!(report, evaluate_run(fields, "two-zone", "1").unwrap());

    let names: Vec<&str> = report.rows.iter().map(|r| r.field.as_str()).collect();
    assert_eq!(names, ["coarse", "disaggregated", "reference", "truth", "abs_delta"]);
    for d in [
        report.pdf_disagg_vs_coarse,
        report.pdf_disagg_vs_ref,
        report.pdf_ref_vs_coarse,
    ] {
        let d = d.unwrap();
        assert!((0.0..=2.0 + 1e-9).contains(&d));
    }
    assert!(report.pdf_disagg_vs_coarse.unwrap() <= report.pdf_ref_vs_coarse.unwrap());

    let csv = render_report_csv(&report.rows);
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.starts_with(REPORT_HEADER));
}

#[test]
fn shapes_must_agree() {
    let geo = srrm_core::raster::GeoRef::new(9.0, 43.57, -96.68).unwrap();
    let coarse = Grid::filled(2, 2, 280.0, geo.coarsened(2));
    let fine = Grid::from_vec(4, 4, (0..16).map(|i| 270.0 + i as f64).collect(), geo).unwrap();
    let wrong = Grid::filled(3, 4, 280.0, geo);
    let fields = RunFields {
        tb_coarse: &coarse,
        tb_fine: &fine,
        reference: Some(&wrong),
        truth: None,
    };
    assert!(evaluate_run(fields, "x", "1").is_err());
    // constant coarse field: distribution distances are left empty
    let ok = evaluate_run(
        RunFields {
            reference: None,
            ..fields
        },
        "x",
        "1",
    )
    .unwrap();
    assert_eq!(ok.pdf_disagg_vs_coarse, None);
    assert_eq!(ok.delta_mean, 2.5);
}
