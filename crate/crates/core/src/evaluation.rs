//! Field statistics and distribution comparisons for disaggregated output.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Result, SrrmError};
use crate::kernels::{kde_pdf, silverman_bandwidth};
use crate::raster::Grid;
use crate::scalar::Scalar;

/// Number of lattice points used by [`pdf_compare`].
pub const PDF_LATTICE_POINTS: usize = 512;

/// Spatial mean, population standard deviation and valid-cell count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats<T: Scalar> {
    pub mean: T,
    pub std: T,
    pub valid_count: usize,
}

pub fn summary_stats<T: Scalar>(field: &Grid<T>) -> Result<SummaryStats<T>> {
    let vals = field.valid_values();
    if vals.is_empty() {
        return Err(SrrmError::NoValidData("field has no valid cell".into()));
    }
    let n = T::of_usize(vals.len());
    let mean = vals.iter().copied().sum::<T>() / n;
    let var = vals.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    Ok(SummaryStats {
        mean,
        std: var.sqrt(),
        valid_count: vals.len(),
    })
}

/// Largest absolute difference between 4-connected valid neighbours.
pub fn neighbor_max_diff<T: Scalar>(field: &Grid<T>) -> Result<T> {
    let (rows, cols) = field.shape();
    let mut best: Option<T> = None;
    for r in 0..rows {
        for c in 0..cols {
            let Some(v) = field.get(r, c) else { continue };
            for (nr, nc) in [(r + 1, c), (r, c + 1)] {
                if let Some(w) = field.get(nr, nc) {
                    let d = (v - w).abs();
                    best = Some(best.map_or(d, |b| b.max(d)));
                }
            }
        }
    }
    best.ok_or_else(|| SrrmError::NoValidData("field has no pair of valid neighbours".into()))
}

/// L1 distance between two kernel density estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct PdfComparison<T: Scalar> {
    pub l1_distance: T,
    pub lattice: Vec<T>,
    pub density_a: Vec<T>,
    pub density_b: Vec<T>,
}

/// Compares the distributions of two samples.
///
/// Each sample gets a Gaussian KDE with its own Silverman bandwidth. Both are
/// evaluated on a shared 512-point lattice covering the joint range widened
/// by three of the larger bandwidth on each side, and the trapezoid rule
/// integrates `|p_a − p_b|`.
pub fn pdf_compare<T: Scalar>(a: &[T], b: &[T]) -> Result<PdfComparison<T>> {
    let ha = silverman_bandwidth(a)?;
    let hb = silverman_bandwidth(b)?;
    let h = ha.max(hb);
    let fold = |init: T, f: fn(T, T) -> T| a.iter().chain(b).copied().fold(init, f);
    let lo = fold(T::infinity(), T::min) - T::of(3.0) * h;
    let hi = fold(T::neg_infinity(), T::max) + T::of(3.0) * h;
    let step = (hi - lo) / T::of_usize(PDF_LATTICE_POINTS - 1);
    let lattice: Vec<T> = (0..PDF_LATTICE_POINTS).map(|i| lo + T::of_usize(i) * step).collect();
    let density_a = kde_pdf(a, ha, &lattice)?;
    let density_b = kde_pdf(b, hb, &lattice)?;
    let diff: Vec<T> = density_a.iter().zip(&density_b).map(|(&x, &y)| (x - y).abs()).collect();
    let l1_distance = trapezoid(&diff, step);
    Ok(PdfComparison {
        l1_distance,
        lattice,
        density_a,
        density_b,
    })
}

fn trapezoid<T: Scalar>(y: &[T], step: T) -> T {
    let inner: T = y.iter().copied().sum();
    step * (inner - (y[0] + y[y.len() - 1]) / T::of(2.0))
}

/// Root-mean-square difference over cells valid in both grids.
pub fn rmse<T: Scalar>(a: &Grid<T>, b: &Grid<T>) -> Result<T> {
    if !a.same_shape(b) {
        return Err(SrrmError::DimensionMismatch(
            "rmse of grids with different shapes".into(),
        ));
    }
    let mut sum = T::zero();
    let mut n = 0usize;
    for (r, c, v) in a.valid_cells() {
        if let Some(w) = b.get(r, c) {
            sum += (v - w) * (v - w);
            n += 1;
        }
    }
    if n == 0 {
        return Err(SrrmError::NoValidData("grids share no valid cell".into()));
    }
    Ok((sum / T::of_usize(n)).sqrt())
}

/// Adjusted Rand Index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(SrrmError::DimensionMismatch(format!(
            "labelings of {} and {} items",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let ka = a.iter().copied().max().map_or(0, |m| m + 1);
    let kb = b.iter().copied().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let pairs = |v: u64| (v * v.saturating_sub(1) / 2) as f64;
    let index: f64 = table.iter().flatten().map(|&v| pairs(v)).sum();
    let rows: f64 = table.iter().map(|r| pairs(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| pairs(table.iter().map(|r| r[j]).sum())).sum();
    let total = pairs(n as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// One line of the evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scene: String,
    pub day: String,
    pub field: String,
    pub mean_k: f64,
    pub std_k: f64,
    pub neighbor_max_k: Option<f64>,
    pub rmse_k: Option<f64>,
    pub pdf_l1_vs_coarse: Option<f64>,
    pub pdf_l1_vs_ref: Option<f64>,
}

pub const REPORT_HEADER: &str = "scene,day,field,mean_K,std_K,neighbor_max_K,rmse_K,pdf_l1_vs_coarse,pdf_l1_vs_ref";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Renders report rows as CSV text, header included.
pub fn render_report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{},{},{},{}",
            r.scene,
            r.day,
            r.field,
            r.mean_k,
            r.std_k,
            opt(r.neighbor_max_k),
            opt(r.rmse_k),
            opt(r.pdf_l1_vs_coarse),
            opt(r.pdf_l1_vs_ref)
        );
    }
    out
}

pub fn write_report_csv(rows: &[ReportRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_report_csv(rows)).map_err(|e| SrrmError::io(path, e))
}

/// Numbers behind one evaluation report, plus the rendered rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub coarse: SummaryStats<f64>,
    pub disaggregated: SummaryStats<f64>,
    pub reference: Option<SummaryStats<f64>>,
    /// |mean(fine) − mean(coarse)| and |std(fine) − std(coarse)|.
    pub delta_mean: f64,
    pub delta_std: f64,
    pub neighbor_max: f64,
    pub rmse_vs_truth: Option<f64>,
    pub rmse_ref_vs_truth: Option<f64>,
    /// `None` when either side has zero spread.
    pub pdf_disagg_vs_coarse: Option<f64>,
    pub pdf_disagg_vs_ref: Option<f64>,
    pub pdf_ref_vs_coarse: Option<f64>,
    pub rows: Vec<ReportRow>,
}

/// Grids compared by [`evaluate_run`]. `reference` and `truth` live on the
/// fine grid.
#[derive(Debug, Clone, Copy)]
pub struct RunFields<'a, T: Scalar> {
    pub tb_coarse: &'a Grid<T>,
    pub tb_fine: &'a Grid<T>,
    pub reference: Option<&'a Grid<T>>,
    pub truth: Option<&'a Grid<T>>,
}

fn to_f64<T: Scalar>(g: &Grid<T>) -> Vec<f64> {
    g.valid_values().iter().map(|v| v.as_f64()).collect()
}

fn spread(v: &[f64]) -> bool {
    v.iter().any(|&x| x != v[0])
}

fn pdf_l1(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.is_empty() || b.is_empty() || !spread(a) || !spread(b) {
        return Ok(None);
    }
    Ok(Some(pdf_compare(a, b)?.l1_distance))
}

fn stats64<T: Scalar>(g: &Grid<T>) -> Result<SummaryStats<f64>> {
    let s = summary_stats(g)?;
    Ok(SummaryStats {
        mean: s.mean.as_f64(),
        std: s.std.as_f64(),
        valid_count: s.valid_count,
    })
}

/// Compares coarse, disaggregated and (optionally) reference and truth
/// fields. Rows: `coarse`, `disaggregated`, then `reference` and `truth`
/// when given, then `abs_delta` holding |Δmean| and |Δstd| of the
/// disaggregated field against the coarse one.
pub fn evaluate_run<T: Scalar>(fields: RunFields<'_, T>, scene: &str, day: &str) -> Result<RunReport> {
    let fine_shape = fields.tb_fine.shape();
    for (name, g) in [("reference", fields.reference), ("truth", fields.truth)] {
        if let Some(g) = g {
            if g.shape() != fine_shape {
                return Err(SrrmError::DimensionMismatch(format!(
                    "{name} grid is {:?}, disaggregated field is {:?}",
                    g.shape(),
                    fine_shape
                )));
            }
        }
    }
    let coarse_v = to_f64(fields.tb_coarse);
    let fine_v = to_f64(fields.tb_fine);
    let ref_v = fields.reference.map(to_f64);
    let coarse = stats64(fields.tb_coarse)?;
    let disaggregated = stats64(fields.tb_fine)?;
    let reference = fields.reference.map(stats64).transpose()?;
    let nb = |g: &Grid<T>| neighbor_max_diff(g).ok().map(|v| v.as_f64());
    let rmse_to = |g: &Grid<T>| fields.truth.map(|t| rmse(g, t).map(|v| v.as_f64())).transpose();

    let neighbor_max = neighbor_max_diff(fields.tb_fine)?.as_f64();
    let rmse_vs_truth = rmse_to(fields.tb_fine)?;
    let rmse_ref_vs_truth = fields.reference.map(rmse_to).transpose()?.flatten();
    let pdf_disagg_vs_coarse = pdf_l1(&fine_v, &coarse_v)?;
    let pdf_disagg_vs_ref = ref_v.as_ref().map(|r| pdf_l1(&fine_v, r)).transpose()?.flatten();
    let pdf_ref_vs_coarse = ref_v.as_ref().map(|r| pdf_l1(r, &coarse_v)).transpose()?.flatten();

    let row = |field: &str, s: &SummaryStats<f64>| ReportRow {
        scene: scene.to_string(),
        day: day.to_string(),
        field: field.to_string(),
        mean_k: s.mean,
        std_k: s.std,
        neighbor_max_k: None,
        rmse_k: None,
        pdf_l1_vs_coarse: None,
        pdf_l1_vs_ref: None,
    };
    let mut rows = vec![
        ReportRow {
            neighbor_max_k: nb(fields.tb_coarse),
            ..row("coarse", &coarse)
        },
        ReportRow {
            neighbor_max_k: Some(neighbor_max),
            rmse_k: rmse_vs_truth,
            pdf_l1_vs_coarse: pdf_disagg_vs_coarse,
            pdf_l1_vs_ref: pdf_disagg_vs_ref,
            ..row("disaggregated", &disaggregated)
        },
    ];
    if let (Some(g), Some(s)) = (fields.reference, &reference) {
        rows.push(ReportRow {
            neighbor_max_k: nb(g),
            rmse_k: rmse_ref_vs_truth,
            pdf_l1_vs_coarse: pdf_ref_vs_coarse,
            ..row("reference", s)
        });
    }
    if let Some(t) = fields.truth {
        let tv = to_f64(t);
        rows.push(ReportRow {
            neighbor_max_k: nb(t),
            rmse_k: Some(0.0),
            pdf_l1_vs_coarse: pdf_l1(&tv, &coarse_v)?,
            pdf_l1_vs_ref: ref_v.as_ref().map(|r| pdf_l1(&tv, r)).transpose()?.flatten(),
            ..row("truth", &stats64(t)?)
        });
    }
    let delta_mean = (disaggregated.mean - coarse.mean).abs();
    let delta_std = (disaggregated.std - coarse.std).abs();
    rows.push(ReportRow {
        mean_k: delta_mean,
        std_k: delta_std,
        ..row("abs_delta", &coarse)
    });

    Ok(RunReport {
        coarse,
        disaggregated,
        reference,
        delta_mean,
        delta_std,
        neighbor_max,
        rmse_vs_truth,
        rmse_ref_vs_truth,
        pdf_disagg_vs_coarse,
        pdf_disagg_vs_ref,
        pdf_ref_vs_coarse,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoRef;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn geo() -> GeoRef {
        GeoRef::new(9.0, 43.57, -96.68).unwrap()
    }

    #[test]
    fn stats_of_simple_fields() {
        let s = summary_stats(&Grid::filled(3, 4, 271.5_f64, geo())).unwrap();
        assert_eq!((s.mean, s.std, s.valid_count), (271.5, 0.0, 12));
        let g = Grid::from_vec(1, 3, vec![1.0, f64::NAN, 3.0], geo()).unwrap();
        let s = summary_stats(&g).unwrap();
        assert_eq!((s.mean, s.std, s.valid_count), (2.0, 1.0, 2));
        assert!(summary_stats(&Grid::<f64>::empty(2, 2, geo())).is_err());
    }

    #[test]
    fn stats_match_two_pass_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let data: Vec<f64> = (0..64).map(|_| rng.random_range(200.0..320.0)).collect();
            let g = Grid::from_vec(8, 8, data.clone(), geo()).unwrap();
            let mut sum = 0.0;
            for v in &data {
                sum += v;
            }
            let mean = sum / 64.0;
            let mut ss = 0.0;
            for v in &data {
                ss += (v - mean) * (v - mean);
            }
            let s = summary_stats(&g).unwrap();
            assert_abs_diff_eq!(s.mean, mean, epsilon = 1e-10);
            assert_abs_diff_eq!(s.std, (ss / 64.0).sqrt(), epsilon = 1e-10);
        }
    }

    #[test]
    fn neighbour_differences() {
        assert_eq!(neighbor_max_diff(&Grid::filled(4, 4, 5.0_f64, geo())).unwrap(), 0.0);
        let step: Vec<f64> = (0..16).map(|i| if i % 4 < 2 { 250.0 } else { 257.5 }).collect();
        assert_eq!(
            neighbor_max_diff(&Grid::from_vec(4, 4, step, geo()).unwrap()).unwrap(),
            7.5
        );
        // diagonal neighbours do not count
        let diag = Grid::from_vec(2, 2, vec![0.0, f64::NAN, f64::NAN, 100.0], geo()).unwrap();
        assert!(neighbor_max_diff(&diag).is_err());
    }

    #[test]
    fn neighbour_max_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let data: Vec<f64> = (0..100)
                .map(|_| {
                    if rng.random_bool(0.2) {
                        f64::NAN
                    } else {
                        rng.random_range(0.0..50.0)
                    }
                })
                .collect();
            let g = Grid::from_vec(10, 10, data, geo()).unwrap();
            let mut expected: f64 = 0.0;
            for a in 0..100usize {
                for b in 0..100 {
                    let (ra, ca, rb, cb) = (a / 10, a % 10, b / 10, b % 10);
                    let adjacent = ra.abs_diff(rb) + ca.abs_diff(cb) == 1;
                    if let (true, Some(x), Some(y)) = (adjacent, g.get(ra, ca), g.get(rb, cb)) {
                        expected = expected.max((x - y).abs());
                    }
                }
            }
            assert_eq!(neighbor_max_diff(&g).unwrap(), expected);
        }
    }

    #[test]
    fn pdf_distance_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..200).map(|_| 100.0 + rng.sample::<f64, _>(StandardNormal)).collect();
        assert_eq!(pdf_compare(&a, &a).unwrap().l1_distance, 0.0);
        let ab = pdf_compare(&a, &b).unwrap();
        assert_abs_diff_eq!(ab.l1_distance, 2.0, epsilon = 1e-3);
        assert_eq!(ab.lattice.len(), PDF_LATTICE_POINTS);
        let ba = pdf_compare(&b, &a).unwrap();
        assert_abs_diff_eq!(ab.l1_distance, ba.l1_distance, epsilon = 1e-12);
        assert!(pdf_compare(&a, &[3.0, 3.0]).is_err());
    }

    #[test]
    fn ari_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!(v < 0.0);
        assert!(adjusted_rand_index(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn report_csv_layout() {
        let row = ReportRow {
            scene: "uniform".into(),
            day: "1".into(),
            field: "disaggregated".into(),
            mean_k: 270.0,
            std_k: 0.0,
            neighbor_max_k: Some(0.0),
            rmse_k: None,
            pdf_l1_vs_coarse: None,
            pdf_l1_vs_ref: None,
        };
        let text = render_report_csv(&[row]);
        assert_eq!(
            text,
            "scene,day,field,mean_K,std_K,neighbor_max_K,rmse_K,pdf_l1_vs_coarse,pdf_l1_vs_ref\n\
             uniform,1,disaggregated,270.000000,0.000000,0.000000,,,\n"
        );
    }
}
