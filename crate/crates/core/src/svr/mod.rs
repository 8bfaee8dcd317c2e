//! ε-insensitive support vector regression with a Gaussian kernel.
//!
//! Models are trained on the standard dual
//!
//! ```text
//! max  Σᵢ yᵢβᵢ − ε Σᵢ |βᵢ| − ½ Σᵢⱼ βᵢβⱼ κ(xᵢ, xⱼ)
//! s.t. Σᵢ βᵢ = 0,  −C ≤ βᵢ ≤ C
//! ```
//!
//! with `βᵢ = αᵢ − αᵢ*`, and predict `f(z) = Σᵢ βᵢ κ(xᵢ, z) + b`.

mod cv;
mod oracle;
mod smo;

pub use cv::{cross_validate, default_grid, fold_assignment, CvOutcome, HyperParams};
pub use oracle::{svr_train_bruteforce, ORACLE_MAX_SAMPLES};
pub use smo::svr_train;

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Result, SrrmError};
use crate::kernels::KernelSpec;
use crate::scalar::Scalar;

/// Dual coefficients at or below this magnitude are treated as zero.
pub const SUPPORT_THRESHOLD: f64 = 1e-10;

/// Training settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvrTrainConfig<T: Scalar> {
    pub c: T,
    pub epsilon: T,
    pub sigma: T,
    /// KKT tolerance the trained model must satisfy.
    pub tol: T,
    /// Iteration budget, in units of the training-set size.
    pub max_passes: usize,
}

impl<T: Scalar> SvrTrainConfig<T> {
    pub fn new(c: T, epsilon: T, sigma: T) -> Self {
        SvrTrainConfig {
            c,
            epsilon,
            sigma,
            tol: T::of(1e-6),
            max_passes: 10_000,
        }
    }

    pub fn with_tol(mut self, tol: T) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.c > T::zero()
            && self.c.is_finite()
            && self.epsilon >= T::zero()
            && self.epsilon.is_finite()
            && self.sigma > T::zero()
            && self.sigma.is_finite()
            && self.tol > T::zero()
            && self.max_passes > 0;
        if ok {
            Ok(())
        } else {
            Err(SrrmError::InvalidArgument(format!(
                "invalid SVR settings: C={}, epsilon={}, sigma={}, tol={}, max_passes={}",
                self.c, self.epsilon, self.sigma, self.tol, self.max_passes
            )))
        }
    }
}

/// A trained regression function.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrModel<T: Scalar> {
    pub support_vectors: Array2<T>,
    pub dual_coeffs: Vec<T>,
    /// Row of each support vector in the training set.
    pub support_indices: Vec<usize>,
    pub bias: T,
    pub kernel: KernelSpec<T>,
    pub c: T,
    pub epsilon: T,
    /// Largest KKT violation measured on the training set after solving.
    pub kkt_violation: T,
}

impl<T: Scalar> SvrModel<T> {
    pub fn n_support(&self) -> usize {
        self.dual_coeffs.len()
    }

    pub fn dim(&self) -> usize {
        self.support_vectors.ncols()
    }

    /// Evaluates the regression function at one point.
    pub fn predict(&self, z: ArrayView1<'_, T>) -> Result<T> {
        if self.n_support() > 0 && z.len() != self.dim() {
            return Err(SrrmError::DimensionMismatch(format!(
                "model expects {} features, got {}",
                self.dim(),
                z.len()
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(SrrmError::InvalidArgument("prediction input must be finite".into()));
        }
        let s: T = self
            .support_vectors
            .axis_iter(Axis(0))
            .zip(&self.dual_coeffs)
            .map(|(sv, &beta)| beta * self.kernel.eval(sv, z))
            .sum();
        Ok(s + self.bias)
    }

    /// Evaluates every row of `z`.
    pub fn predict_batch(&self, z: ArrayView2<'_, T>) -> Result<Vec<T>> {
        z.axis_iter(Axis(0)).map(|row| self.predict(row)).collect()
    }

    /// Coefficient vector over the full training set (zeros off the support).
    pub fn full_coeffs(&self, n_train: usize) -> Vec<T> {
        let mut beta = vec![T::zero(); n_train];
        for (&i, &b) in self.support_indices.iter().zip(&self.dual_coeffs) {
            beta[i] = b;
        }
        beta
    }

    /// Text block listing hyperparameters, bias and every support vector.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# svr model v1\n");
        let _ = writeln!(out, "C,{}", self.c.as_f64());
        let _ = writeln!(out, "epsilon,{}", self.epsilon.as_f64());
        let _ = writeln!(out, "sigma,{}", self.kernel.sigma().as_f64());
        let _ = writeln!(out, "bias,{}", self.bias.as_f64());
        let _ = writeln!(out, "kkt_violation,{}", self.kkt_violation.as_f64());
        let _ = writeln!(out, "n_support,{}", self.n_support());
        let _ = writeln!(out, "dim,{}", self.dim());
        for ((row, &b), &i) in self
            .support_vectors
            .axis_iter(Axis(0))
            .zip(&self.dual_coeffs)
            .zip(&self.support_indices)
        {
            let xs: Vec<String> = row.iter().map(|v| v.as_f64().to_string()).collect();
            let _ = writeln!(out, "sv,{i},{},{}", b.as_f64(), xs.join(","));
        }
        out
    }

    /// Parses the output of [`SvrModel::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| SrrmError::Config(format!("svr model text: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let mut header = |key: &str| -> Result<f64> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))?;
            let (k, v) = line
                .split_once(',')
                .ok_or_else(|| bad(format!("malformed line '{line}'")))?;
            if k != key {
                return Err(bad(format!("expected {key}, found {k}")));
            }
            v.parse().map_err(|_| bad(format!("bad value for {key}")))
        };
        let c = header("C")?;
        let epsilon = header("epsilon")?;
        let sigma = header("sigma")?;
        let bias = header("bias")?;
        let kkt = header("kkt_violation")?;
        let n_support = header("n_support")? as usize;
        let dim = header("dim")? as usize;
        let mut data = Vec::with_capacity(n_support * dim);
        let mut coeffs = Vec::with_capacity(n_support);
        let mut indices = Vec::with_capacity(n_support);
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 + dim || fields[0] != "sv" {
                return Err(bad(format!("malformed support vector line '{line}'")));
            }
            indices.push(fields[1].parse().map_err(|_| bad("bad index".into()))?);
            coeffs.push(T::of(fields[2].parse().map_err(|_| bad("bad coefficient".into()))?));
            for f in &fields[3..] {
                data.push(T::of(f.parse().map_err(|_| bad("bad coordinate".into()))?));
            }
        }
        if coeffs.len() != n_support {
            return Err(bad(format!(
                "expected {n_support} support vectors, found {}",
                coeffs.len()
            )));
        }
        Ok(SvrModel {
            support_vectors: Array2::from_shape_vec((n_support, dim), data).map_err(|e| bad(e.to_string()))?,
            dual_coeffs: coeffs,
            support_indices: indices,
            bias: T::of(bias),
            kernel: KernelSpec::new(T::of(sigma))?,
            c: T::of(c),
            epsilon: T::of(epsilon),
            kkt_violation: T::of(kkt),
        })
    }
}

/// `f(z)` for a single input.
pub fn svr_predict<T: Scalar>(model: &SvrModel<T>, z: &[T]) -> Result<T> {
    model.predict(ArrayView1::from(z))
}

pub(crate) fn check_training_data<T: Scalar>(x: ArrayView2<'_, T>, y: &[T]) -> Result<()> {
    if x.nrows() == 0 {
        return Err(SrrmError::NoValidData("SVR needs at least one training sample".into()));
    }
    if x.nrows() != y.len() {
        return Err(SrrmError::DimensionMismatch(format!(
            "{} inputs and {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(SrrmError::InvalidArgument("SVR training data must be finite".into()));
    }
    Ok(())
}

/// `Σ yᵢβᵢ − ε Σ |βᵢ| − ½ βᵀKβ` for coefficients over the whole training set.
pub fn dual_objective<T: Scalar>(x: ArrayView2<'_, T>, y: &[T], beta: &[T], epsilon: T, sigma: T) -> Result<T> {
    let k = KernelSpec::new(sigma)?;
    let n = x.nrows();
    let mut quad = T::zero();
    for i in 0..n {
        if beta[i] == T::zero() {
            continue;
        }
        for j in 0..n {
            quad += beta[i] * beta[j] * k.eval(x.row(i), x.row(j));
        }
    }
    let lin: T = y.iter().zip(beta).map(|(&yi, &b)| yi * b - epsilon * b.abs()).sum();
    Ok(lin - quad / T::of(2.0))
}

/// Largest violation of the ε-SVR optimality conditions on the training set:
/// coefficient bounds, `Σβ = 0`, and the residual conditions for zero, free
/// and bounded coefficients.
pub fn kkt_violation<T: Scalar>(model: &SvrModel<T>, x: ArrayView2<'_, T>, y: &[T]) -> Result<T> {
    check_training_data(x, y)?;
    let beta = model.full_coeffs(x.nrows());
    let f = model.predict_batch(x)?;
    let c = model.c;
    let eps = model.epsilon;
    let at_bound = c * (T::one() - T::of(1e-9));
    let mut worst = beta.iter().copied().sum::<T>().abs();
    for ((&b, &fi), &yi) in beta.iter().zip(&f).zip(y) {
        let r = fi - yi;
        worst = worst.max((b.abs() - c).max(T::zero()));
        let v = if b.abs() <= T::of(SUPPORT_THRESHOLD) {
            r.abs() - eps
        } else if b.abs() >= at_bound {
            // β = +C needs y − f ≥ ε; β = −C needs f − y ≥ ε.
            eps - b.signum() * (-r)
        } else {
            (r + b.signum() * eps).abs()
        };
        worst = worst.max(v);
    }
    Ok(worst.max(T::zero()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn lone_model() -> SvrModel<f64> {
        SvrModel {
            support_vectors: array![[0.5, -1.0]],
            dual_coeffs: vec![1.0],
            support_indices: vec![0],
            bias: 0.0,
            kernel: KernelSpec::new(0.7).unwrap(),
            c: 2.0,
            epsilon: 0.1,
            kkt_violation: 0.0,
        }
    }

    #[test]
    fn empty_model_predicts_bias() {
        let m = SvrModel {
            support_vectors: Array2::zeros((0, 3)),
            dual_coeffs: vec![],
            support_indices: vec![],
            bias: 271.25,
            kernel: KernelSpec::new(1.0).unwrap(),
            c: 1.0,
            epsilon: 0.5,
            kkt_violation: 0.0,
        };
        assert_eq!(svr_predict(&m, &[1.0, 2.0, 3.0]).unwrap(), 271.25);
    }

    #[test]
    fn lone_support_vector_at_itself() {
        let m = lone_model();
        assert_eq!(svr_predict(&m, &[0.5, -1.0]).unwrap(), 1.0);
        assert!(matches!(svr_predict(&m, &[0.5]), Err(SrrmError::DimensionMismatch(_))));
        assert!(svr_predict(&m, &[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn batch_prediction_is_pointwise() {
        let m = lone_model();
        let z = array![[0.0, 0.0], [1.0, -1.0], [0.5, 2.0]];
        let batch = m.predict_batch(z.view()).unwrap();
        for (i, row) in z.axis_iter(Axis(0)).enumerate() {
            assert_eq!(batch[i], m.predict(row).unwrap());
        }
    }

    #[test]
    fn text_round_trip() {
        let m = lone_model();
        let back = SvrModel::<f64>::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert!(SvrModel::<f64>::from_text("# svr model v1\nC,1\n").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SvrTrainConfig::new(1.0, 0.1, 1.0).validate().is_ok());
        assert!(SvrTrainConfig::new(0.0, 0.1, 1.0).validate().is_err());
        assert!(SvrTrainConfig::new(1.0, -0.1, 1.0).validate().is_err());
        assert!(SvrTrainConfig::new(1.0, 0.1, 0.0).validate().is_err());
    }
}
