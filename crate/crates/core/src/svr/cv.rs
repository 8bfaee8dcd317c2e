use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{svr_train, SvrTrainConfig};
use crate::error::{Result, SrrmError};
use crate::scalar::Scalar;

/// One `(C, ε, σ)` candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams<T: Scalar> {
    pub c: T,
    pub epsilon: T,
    pub sigma: T,
}

impl<T: Scalar> HyperParams<T> {
    pub fn new(c: T, epsilon: T, sigma: T) -> Self {
        HyperParams { c, epsilon, sigma }
    }

    pub fn train_config(&self, tol: T) -> SvrTrainConfig<T> {
        SvrTrainConfig::new(self.c, self.epsilon, self.sigma).with_tol(tol)
    }
}

/// Cartesian product of the candidate lists, with σ given as multiples of
/// `sigma_scale` (typically the median pairwise distance).
pub fn default_grid<T: Scalar>(cs: &[T], epsilons: &[T], sigma_factors: &[T], sigma_scale: T) -> Vec<HyperParams<T>> {
    let mut grid = Vec::with_capacity(cs.len() * epsilons.len() * sigma_factors.len());
    for &c in cs {
        for &epsilon in epsilons {
            for &f in sigma_factors {
                grid.push(HyperParams::new(c, epsilon, f * sigma_scale));
            }
        }
    }
    grid
}

/// Winner of a grid search plus the score of every candidate (in grid order).
#[derive(Debug, Clone)]
pub struct CvOutcome<T: Scalar> {
    pub best: HyperParams<T>,
    pub best_rmse: T,
    pub scores: Vec<(HyperParams<T>, T)>,
}

/// Fold id of each sample: a seeded shuffle dealt round-robin into `folds`
/// groups whose sizes differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 || n < folds {
        return Err(SrrmError::InvalidArgument(format!(
            "cannot split {n} samples into {folds} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        fold[i] = rank % folds;
    }
    Ok(fold)
}

/// `a` and `b` are treated as equal scores within this relative margin.
const TIE: f64 = 1e-9;

/// Whether candidate `a` (score `sa`) beats the incumbent `b` (score `sb`).
/// Near-equal scores prefer smaller C, then larger ε, then larger σ.
fn better<T: Scalar>(a: &HyperParams<T>, sa: T, b: &HyperParams<T>, sb: T) -> bool {
    let (x, y) = (sa.as_f64(), sb.as_f64());
    if (x - y).abs() > TIE * x.abs().max(y.abs()).max(1.0) {
        return x < y;
    }
    if a.c != b.c {
        return a.c < b.c;
    }
    if a.epsilon != b.epsilon {
        return a.epsilon > b.epsilon;
    }
    a.sigma > b.sigma
}

/// Grid search scored by the mean of per-fold out-of-fold RMSE.
///
/// Candidates are evaluated in parallel; the result does not depend on
/// thread count. A candidate whose training fails to converge on any fold
/// is scored as infinitely bad; if all fail, the last error is returned.
pub fn cross_validate<T: Scalar>(
    x: ArrayView2<'_, T>,
    y: &[T],
    grid: &[HyperParams<T>],
    folds: usize,
    seed: u64,
    tol: T,
) -> Result<CvOutcome<T>> {
    if grid.is_empty() {
        return Err(SrrmError::InvalidArgument("empty hyperparameter grid".into()));
    }
    if x.nrows() != y.len() {
        return Err(SrrmError::DimensionMismatch(format!(
            "{} inputs and {} targets",
            x.nrows(),
            y.len()
        )));
    }
    let assignment = fold_assignment(x.nrows(), folds, seed)?;
    let split: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..x.nrows()).partition(|&i| assignment[i] == f);
            (train, test)
        })
        .collect();

    let score = |hp: &HyperParams<T>| -> Result<T> {
        let cfg = hp.train_config(tol);
        let mut total = T::zero();
        for (train, test) in &split {
            let xt = x.select(Axis(0), train);
            let yt: Vec<T> = train.iter().map(|&i| y[i]).collect();
            let model = svr_train(xt.view(), &yt, &cfg)?;
            let mut sq = T::zero();
            for &i in test {
                let e = model.predict(x.row(i))? - y[i];
                sq += e * e;
            }
            total += (sq / T::of_usize(test.len())).sqrt();
        }
        Ok(total / T::of_usize(folds))
    };
    if grid.len() == 1 {
        let s = score(&grid[0])?;
        return Ok(CvOutcome {
            best: grid[0],
            best_rmse: s,
            scores: vec![(grid[0], s)],
        });
    }
    let results: Vec<Result<T>> = grid.par_iter().map(score).collect();

    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(HyperParams<T>, T)> = None;
    let mut last_err = None;
    for (hp, r) in grid.iter().zip(results) {
        match r {
            Ok(s) => {
                scores.push((*hp, s));
                if best.as_ref().is_none_or(|(b, sb)| better(hp, s, b, *sb)) {
                    best = Some((*hp, s));
                }
            }
            Err(e @ SrrmError::NonConvergence { .. }) => {
                scores.push((*hp, T::infinity()));
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    match best {
        Some((best, best_rmse)) => Ok(CvOutcome {
            best,
            best_rmse,
            scores,
        }),
        None => Err(last_err.expect("at least one candidate was scored")),
    }
}
