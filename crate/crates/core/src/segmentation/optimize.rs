use ndarray::{Array2, ArrayView2, Axis};
use rand::{seq::index::sample, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{hard_assign, CsObjective, MembershipMatrix, SegmentationConfig};
use crate::error::{Result, SrrmError};
use crate::kernels::sq_dist;
use crate::scalar::Scalar;

/// Logit given to a pixel's initial segment; all other logits start at 0.
const SEED_LOGIT: f64 = 3.0;
/// Minibatch steps between full-cost checkpoints.
const CHECK_EVERY: usize = 10;
/// Number of checkpoints the relative-change stopping rule looks back over.
const STALL_WINDOW: usize = 20;
const MAX_RESTARTS: usize = 5;

/// Outcome of one membership optimization.
#[derive(Debug, Clone)]
pub struct Segmentation<T: Scalar> {
    pub membership: MembershipMatrix<T>,
    pub labels: Vec<usize>,
    /// Base kernel width the cost was evaluated with.
    pub sigma: T,
    pub cost: T,
    /// Cost at the start and at every accepted checkpoint.
    pub trace: Vec<T>,
    pub iterations: usize,
    pub restarts: usize,
}

/// Row-wise normalized exponential.
pub fn softmax_rows<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let s: T = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// k-means++ seeding followed by nearest-seed assignment: each pixel gets
/// logit 3 for the segment of its nearest seed and 0 elsewhere.
pub fn initial_logits<T: Scalar>(x: ArrayView2<'_, T>, k: usize, rng: &mut impl Rng) -> Array2<T> {
    let n = x.nrows();
    let mut seeds = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(seeds[0])).as_f64()).collect();
    while seeds.len() < k.min(n) {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            pick
        } else {
            (0..n).find(|i| !seeds.contains(i)).expect("k <= n")
        };
        seeds.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(next)).as_f64());
        }
    }
    let mut logits = Array2::zeros((n, k));
    for i in 0..n {
        let nearest = seeds
            .iter()
            .enumerate()
            .map(|(s, &c)| (s, sq_dist(x.row(i), x.row(c))))
            .fold(
                (0, T::infinity()),
                |(bs, bd), (s, d)| if d < bd { (s, d) } else { (bs, bd) },
            )
            .0;
        logits[[i, nearest]] = T::of(SEED_LOGIT);
    }
    logits
}

struct Descent<T: Scalar> {
    logits: Array2<T>,
    cost: T,
    trace: Vec<T>,
    iterations: usize,
}

/// Minibatch descent on the logits with checkpointed monotone acceptance.
fn descend<T: Scalar>(
    obj: &CsObjective<T>,
    logits: Array2<T>,
    cfg: &SegmentationConfig<T>,
    rng: &mut ChaCha8Rng,
) -> Result<Descent<T>> {
    let n = obj.n_pixels();
    let k = logits.ncols();
    let batch = cfg.batch_size.min(n);
    let half = T::of(0.5);

    let mut theta = logits;
    let mut best_theta = theta.clone();
    let mut best_cost = obj.terms(&softmax_rows(&theta))?.cost;
    let mut trace = vec![best_cost];
    let mut history = vec![best_cost];
    let mut step = cfg.step_size;
    let min_step = cfg.step_size * T::of(1e-9);
    let mut iterations = 0;

    for it in 1..=cfg.max_iters {
        if best_cost <= T::zero() || step < min_step {
            break;
        }
        iterations = it;
        let m = softmax_rows(&theta);
        let mass = obj.gram().dot(&m);
        let seg_mass: Vec<T> = m
            .axis_iter(Axis(1))
            .zip(mass.axis_iter(Axis(1)))
            .map(|(mk, pk)| mk.dot(&pk))
            .collect();
        let numerator = ((obj.gram_total() - seg_mass.iter().copied().sum::<T>()) * half).max(T::zero());

        // dJ/dm is proportional to -(G m)_ik (1 + A / S_k); the positive 1/D
        // factor cancels under step normalization.
        let rows = sample(rng, n, batch).into_vec();
        let mut grads = Vec::with_capacity(rows.len());
        let mut scale = T::zero();
        for &i in &rows {
            let h: Vec<T> = (0..k)
                .map(|c| -mass[[i, c]] * (T::one() + numerator / seg_mass[c]))
                .collect();
            let avg: T = (0..k).map(|c| m[[i, c]] * h[c]).sum();
            let g: Vec<T> = (0..k).map(|c| m[[i, c]] * (h[c] - avg)).collect();
            scale = g.iter().fold(scale, |a, v| a.max(v.abs()));
            grads.push(g);
        }
        if scale > T::zero() && scale.is_finite() {
            for (&i, g) in rows.iter().zip(&grads) {
                for c in 0..k {
                    theta[[i, c]] -= step * g[c] / scale;
                }
            }
        }

        if it % CHECK_EVERY == 0 {
            let cost = obj.terms(&softmax_rows(&theta))?.cost;
            if cost <= best_cost {
                best_cost = cost;
                best_theta.assign(&theta);
                trace.push(cost);
            } else {
                theta.assign(&best_theta);
                step *= half;
            }
            history.push(best_cost);
            if history.len() > STALL_WINDOW {
                let old = history[history.len() - 1 - STALL_WINDOW];
                let rel = (old - best_cost) / best_cost.max(T::min_positive_value());
                if rel < cfg.tol {
                    break;
                }
            }
        }
    }
    Ok(Descent {
        logits: best_theta,
        cost: best_cost,
        trace,
        iterations,
    })
}

fn finish<T: Scalar>(d: Descent<T>, sigma: T, restarts: usize) -> Segmentation<T> {
    let membership = MembershipMatrix::from_softmax(softmax_rows(&d.logits));
    let labels = hard_assign(&membership);
    Segmentation {
        membership,
        labels,
        sigma,
        cost: d.cost,
        trace: d.trace,
        iterations: d.iterations,
        restarts,
    }
}

fn trivial<T: Scalar>(n: usize, sigma: T) -> Segmentation<T> {
    Segmentation {
        membership: MembershipMatrix::from_softmax(Array2::ones((n, 1))),
        labels: vec![0; n],
        sigma,
        cost: T::zero(),
        trace: vec![T::zero()],
        iterations: 0,
        restarts: 0,
    }
}

fn check_shape<T: Scalar>(x: ArrayView2<'_, T>, k: usize) -> Result<()> {
    if x.nrows() == 0 {
        return Err(SrrmError::NoValidData("no pixels to segment".into()));
    }
    if k > x.nrows() {
        return Err(SrrmError::InvalidArgument(format!(
            "{k} segments requested for {} pixels",
            x.nrows()
        )));
    }
    Ok(())
}

/// Minimizes the Cauchy–Schwarz cost for a fixed segment count `cfg.k`.
///
/// A degenerate (empty) segment restarts the descent from a fresh seeding,
/// at most five times.
pub fn optimize_memberships<T: Scalar>(x: ArrayView2<'_, T>, cfg: &SegmentationConfig<T>) -> Result<Segmentation<T>> {
    cfg.validate()?;
    let k = cfg
        .k
        .ok_or_else(|| SrrmError::InvalidArgument("optimize_memberships needs a fixed segment count".into()))?;
    check_shape(x, k)?;
    let sigma = cfg.resolve_sigma(x);
    if k == 1 {
        return Ok(trivial(x.nrows(), sigma));
    }
    let obj = CsObjective::new(x, sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut last_err = None;
    for restart in 0..=MAX_RESTARTS {
        let logits = initial_logits(x, k, &mut rng);
        match descend(&obj, logits, cfg, &mut rng) {
            Ok(d) => return Ok(finish(d, sigma, restart)),
            Err(e @ SrrmError::DegenerateSegment { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// Runs the descent from caller-supplied initial logits (no restarts).
pub fn optimize_from_logits<T: Scalar>(
    x: ArrayView2<'_, T>,
    logits: Array2<T>,
    cfg: &SegmentationConfig<T>,
) -> Result<Segmentation<T>> {
    cfg.validate()?;
    if logits.nrows() != x.nrows() {
        return Err(SrrmError::DimensionMismatch(format!(
            "{} logit rows for {} pixels",
            logits.nrows(),
            x.nrows()
        )));
    }
    check_shape(x, logits.ncols())?;
    let sigma = cfg.resolve_sigma(x);
    if logits.ncols() == 1 {
        return Ok(trivial(x.nrows(), sigma));
    }
    let obj = CsObjective::new(x, sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(finish(descend(&obj, logits, cfg, &mut rng)?, sigma, 0))
}
