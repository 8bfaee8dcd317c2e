use ndarray::ArrayView2;

use super::{optimize_memberships, Segmentation, SegmentationConfig};
use crate::error::{Result, SrrmError};
use crate::scalar::Scalar;

/// Smallest per-dimension variance a segment's Gaussian may have, in
/// standardized feature units.
pub const VARIANCE_FLOOR: f64 = 1e-3;

/// Result of choosing the segment count.
#[derive(Debug, Clone)]
pub struct ModelSelection<T: Scalar> {
    pub k: usize,
    /// Description length per candidate; `None` when the candidate could not
    /// be optimized (degenerate segment after all restarts).
    pub scores: Vec<(usize, Option<T>)>,
    pub segmentation: Segmentation<T>,
}

/// Two-part code length of a hard partition.
///
/// Each non-empty segment is summarized by a weight and an axis-aligned
/// Gaussian; the data cost is the negative log-likelihood of the resulting
/// mixture and the model cost is `(#parameters / 2)·ln N`.
pub fn description_length<T: Scalar>(x: ArrayView2<'_, T>, labels: &[usize]) -> Result<T> {
    let (n, d) = x.dim();
    if n == 0 || labels.len() != n {
        return Err(SrrmError::DimensionMismatch(format!(
            "{} labels for {n} samples",
            labels.len()
        )));
    }
    let k_max = labels.iter().copied().max().unwrap_or(0) + 1;
    let nf = n as f64;

    struct Component {
        log_weight: f64,
        mean: Vec<f64>,
        var: Vec<f64>,
        log_norm: f64,
    }
    let mut comps = Vec::new();
    for k in 0..k_max {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == k).collect();
        if members.is_empty() {
            continue;
        }
        let nk = members.len() as f64;
        let mean: Vec<f64> = (0..d)
            .map(|c| members.iter().map(|&i| x[[i, c]].as_f64()).sum::<f64>() / nk)
            .collect();
        let var: Vec<f64> = (0..d)
            .map(|c| {
                let v = members
                    .iter()
                    .map(|&i| (x[[i, c]].as_f64() - mean[c]).powi(2))
                    .sum::<f64>()
                    / nk;
                v.max(VARIANCE_FLOOR)
            })
            .collect();
        let log_norm = -0.5 * var.iter().map(|v| (std::f64::consts::TAU * v).ln()).sum::<f64>();
        comps.push(Component {
            log_weight: (nk / nf).ln(),
            mean,
            var,
            log_norm,
        });
    }

    let mut nll = 0.0;
    for i in 0..n {
        let logs: Vec<f64> = comps
            .iter()
            .map(|c| {
                let q: f64 = (0..d)
                    .map(|j| (x[[i, j]].as_f64() - c.mean[j]).powi(2) / c.var[j])
                    .sum();
                c.log_weight + c.log_norm - 0.5 * q
            })
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        nll -= top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
    }
    let k = comps.len();
    let params = (k * 2 * d + k - 1) as f64;
    Ok(T::of(nll + 0.5 * params * nf.ln()))
}

/// Chooses the segment count in `k_min..=k_max` with the shortest
/// description length; ties go to the smaller count.
pub fn select_num_clusters<T: Scalar>(
    x: ArrayView2<'_, T>,
    k_min: usize,
    k_max: usize,
    cfg: &SegmentationConfig<T>,
) -> Result<ModelSelection<T>> {
    let n = x.nrows();
    if k_min == 0 || k_min > k_max || k_max > n {
        return Err(SrrmError::InvalidArgument(format!(
            "segment range {k_min}..={k_max} invalid for {n} pixels"
        )));
    }
    let sigma = cfg.resolve_sigma(x);
    let base = cfg.clone().with_sigma(sigma);
    let run = |k: usize| optimize_memberships(x, &base.clone().with_k(k).with_seed(cfg.seed.wrapping_add(k as u64)));

    if k_min == k_max {
        let segmentation = run(k_min)?;
        return Ok(ModelSelection {
            k: k_min,
            scores: vec![(k_min, None)],
            segmentation,
        });
    }

    let mut scores = Vec::new();
    let mut best: Option<(T, Segmentation<T>)> = None;
    let mut k_best = k_min;
    for k in k_min..=k_max {
        let seg = match run(k) {
            Ok(s) => s,
            Err(SrrmError::DegenerateSegment { .. }) => {
                scores.push((k, None));
                continue;
            }
            Err(e) => return Err(e),
        };
        let dl = description_length(x, &seg.labels)?;
        scores.push((k, Some(dl)));
        if best.as_ref().is_none_or(|(b, _)| dl < *b) {
            best = Some((dl, seg));
            k_best = k;
        }
    }
    let (_, segmentation) = best.ok_or(SrrmError::DegenerateSegment { segment: 0, mass: 0.0 })?;
    Ok(ModelSelection {
        k: k_best,
        scores,
        segmentation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn fixed_range_skips_search() {
        let x = Array2::from_shape_fn((8, 2), |(i, j)| (i * 3 + j) as f64);
        let sel = select_num_clusters(x.view(), 2, 2, &SegmentationConfig::default()).unwrap();
        assert_eq!(sel.k, 2);
        assert_eq!(sel.scores.len(), 1);
    }

    #[test]
    fn separated_groups_shorten_the_code() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let x = Array2::from_shape_fn(
            (40, 2),
            |(i, _)| if i < 20 { 0.0 } else { 8.0 } + noise.sample(&mut rng),
        );
        let split: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        let whole = vec![0; 40];
        let a = description_length(x.view(), &split).unwrap();
        let b = description_length(x.view(), &whole).unwrap();
        assert!(a < b);
    }

    #[test]
    fn rejects_bad_range() {
        let x = Array2::<f64>::zeros((3, 1));
        let cfg = SegmentationConfig::default();
        assert!(select_num_clusters(x.view(), 0, 2, &cfg).is_err());
        assert!(select_num_clusters(x.view(), 3, 2, &cfg).is_err());
        assert!(select_num_clusters(x.view(), 1, 4, &cfg).is_err());
    }
}
