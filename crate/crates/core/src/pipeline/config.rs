use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Result, SrrmError};
use crate::raster::DEFAULT_MIN_COVERAGE;
use crate::scalar::Scalar;
use crate::segmentation::SegmentationConfig;

/// How missing covariate values are handled at prediction time. Training
/// rows with any missing value are always dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImputePolicy {
    /// Leave the fine cell without a prediction.
    DropRow,
    /// Fill with the segment's mean of the coarse-scale feature.
    SegmentMean,
}

impl ImputePolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            ImputePolicy::DropRow => "drop-row",
            ImputePolicy::SegmentMean => "segment-mean",
        }
    }
}

impl FromStr for ImputePolicy {
    type Err = SrrmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop-row" => Ok(ImputePolicy::DropRow),
            "segment-mean" => Ok(ImputePolicy::SegmentMean),
            _ => Err(SrrmError::Config(format!("unknown impute policy '{s}'"))),
        }
    }
}

/// Candidate hyperparameters searched per segment; σ candidates are
/// multiples of the segment's median pairwise feature distance.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrGrid<T: Scalar> {
    pub c: Vec<T>,
    pub epsilon: Vec<T>,
    pub sigma_factors: Vec<T>,
}

impl<T: Scalar> Default for SvrGrid<T> {
    fn default() -> Self {
        let v = |xs: [f64; 3]| xs.iter().map(|&x| T::of(x)).collect();
        SvrGrid {
            c: v([1.0, 10.0, 100.0]),
            epsilon: v([0.5, 1.0, 2.0]),
            sigma_factors: v([0.5, 1.0, 2.0]),
        }
    }
}

/// Full configuration of a disaggregation run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig<T: Scalar> {
    pub segmentation: SegmentationConfig<T>,
    pub grid: SvrGrid<T>,
    pub folds: usize,
    pub svr_tol: T,
    /// Segments with fewer training rows use the all-pixel model.
    pub min_cluster_size: usize,
    pub min_coverage: f64,
    pub impute: ImputePolicy,
    pub seed: u64,
}

impl<T: Scalar> Default for PipelineConfig<T> {
    fn default() -> Self {
        PipelineConfig {
            segmentation: SegmentationConfig::default(),
            grid: SvrGrid::default(),
            folds: 5,
            svr_tol: T::of(1e-6),
            min_cluster_size: 5,
            min_coverage: DEFAULT_MIN_COVERAGE,
            impute: ImputePolicy::SegmentMean,
            seed: 42,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| SrrmError::Config(format!("bad value '{value}' for '{key}'")))
}

fn parse_list<T: Scalar>(key: &str, value: &str) -> Result<Vec<T>> {
    let v: Vec<T> = value
        .split(',')
        .map(|s| parse::<f64>(key, s.trim()).map(T::of))
        .collect::<Result<_>>()?;
    if v.iter()
        .any(|x| !(*x > T::zero() || (key == "svr_epsilon" && *x == T::zero())) || !x.is_finite())
    {
        return Err(SrrmError::Config(format!(
            "'{key}' entries must be positive and finite"
        )));
    }
    Ok(v)
}

fn auto_or<V: FromStr>(key: &str, value: &str) -> Result<Option<V>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn list<T: Scalar>(v: &[T]) -> String {
    v.iter().map(|x| x.as_f64().to_string()).collect::<Vec<_>>().join(",")
}

impl<T: Scalar> PipelineConfig<T> {
    /// Parses `key = value` lines; `#` starts a comment. Unset keys keep
    /// their defaults, unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| SrrmError::Config(format!("line {}: expected 'key = value'", lineno + 1)))?;
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| SrrmError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            SrrmError::Config(m) => SrrmError::format(path, m),
            other => other,
        })
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let seg = &mut self.segmentation;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "k" => seg.k = auto_or(key, value)?,
            "k_min" => seg.k_min = parse(key, value)?,
            "k_max" => seg.k_max = parse(key, value)?,
            "seg_sigma" => seg.sigma = auto_or::<f64>(key, value)?.map(T::of),
            "seg_max_iters" => seg.max_iters = parse(key, value)?,
            "seg_step_size" => seg.step_size = T::of(parse(key, value)?),
            "seg_batch_size" => seg.batch_size = parse(key, value)?,
            "seg_tol" => seg.tol = T::of(parse(key, value)?),
            "svr_c" => self.grid.c = parse_list(key, value)?,
            "svr_epsilon" => self.grid.epsilon = parse_list(key, value)?,
            "svr_sigma_factors" => self.grid.sigma_factors = parse_list(key, value)?,
            "cv_folds" => self.folds = parse(key, value)?,
            "svr_tol" => self.svr_tol = T::of(parse(key, value)?),
            "min_cluster_size" => self.min_cluster_size = parse(key, value)?,
            "min_coverage" => self.min_coverage = parse(key, value)?,
            "impute" => self.impute = value.parse()?,
            _ => return Err(SrrmError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.segmentation.validate()?;
        let fail = |m: &str| Err(SrrmError::Config(m.to_string()));
        if self.grid.c.is_empty() || self.grid.epsilon.is_empty() || self.grid.sigma_factors.is_empty() {
            return fail("SVR grid lists must be non-empty");
        }
        if self.folds < 2 {
            return fail("cv_folds must be >= 2");
        }
        if self.min_cluster_size < self.folds {
            return fail("min_cluster_size must be >= cv_folds");
        }
        if !(self.svr_tol > T::zero()) {
            return fail("svr_tol must be positive");
        }
        if !(self.min_coverage > 0.0 && self.min_coverage <= 1.0) {
            return fail("min_coverage must lie in (0, 1]");
        }
        Ok(())
    }

    /// Renders every setting in the format accepted by [`PipelineConfig::parse`].
    pub fn to_config_string(&self) -> String {
        let seg = &self.segmentation;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("k", seg.k.map_or("auto".into(), |k| k.to_string()));
        kv("k_min", seg.k_min.to_string());
        kv("k_max", seg.k_max.to_string());
        kv("seg_sigma", seg.sigma.map_or("auto".into(), |v| v.as_f64().to_string()));
        kv("seg_max_iters", seg.max_iters.to_string());
        kv("seg_step_size", seg.step_size.as_f64().to_string());
        kv("seg_batch_size", seg.batch_size.to_string());
        kv("seg_tol", seg.tol.as_f64().to_string());
        kv("svr_c", list(&self.grid.c));
        kv("svr_epsilon", list(&self.grid.epsilon));
        kv("svr_sigma_factors", list(&self.grid.sigma_factors));
        kv("cv_folds", self.folds.to_string());
        kv("svr_tol", self.svr_tol.as_f64().to_string());
        kv("min_cluster_size", self.min_cluster_size.to_string());
        kv("min_coverage", self.min_coverage.to_string());
        kv("impute", self.impute.as_str().to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::<f64>::default();
        assert_eq!(PipelineConfig::<f64>::parse(&cfg.to_config_string()).unwrap(), cfg);
    }

    #[test]
    fn parses_comments_and_lists() {
        let cfg = PipelineConfig::<f64>::parse(
            "# run 3\nseed = 9   # trailing\n\nk = 3\nsvr_c = 1, 1000\nsvr_epsilon = 0,0.5\nimpute = drop-row\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.segmentation.k, Some(3));
        assert_eq!(cfg.grid.c, vec![1.0, 1000.0]);
        assert_eq!(cfg.grid.epsilon, vec![0.0, 0.5]);
        assert_eq!(cfg.impute, ImputePolicy::DropRow);
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        for text in [
            "sed = 4",
            "seed = four",
            "svr_c = 1,-2",
            "impute = mean",
            "cv_folds = 1",
            "justtext",
        ] {
            assert!(
                matches!(PipelineConfig::<f64>::parse(text), Err(SrrmError::Config(_))),
                "{text}"
            );
        }
    }
}
