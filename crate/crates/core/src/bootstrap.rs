//! Resampling calibration of a mean-test statistic and empirical p-values.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{stream_rng, DataMatrix};
use crate::mean_tests::TestMethod;
use crate::rmt::KernelConfig;

/// Redraws allowed per replicate before a degenerate resample is fatal.
pub const MAX_REDRAWS: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tail {
    Lower,
    Upper,
    TwoSided,
}

impl fmt::Display for Tail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Lower => "lower",
            Self::Upper => "upper",
            Self::TwoSided => "two-sided",
        })
    }
}

impl FromStr for Tail {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lower" => Ok(Self::Lower),
            "upper" => Ok(Self::Upper),
            "two-sided" | "two" | "both" => Ok(Self::TwoSided),
            _ => Err(Error::InvalidInput(format!("unknown tail '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Replicate count `B`.
    pub reps: usize,
    /// Resample size is `⌈fraction · n⌉` rows drawn with replacement.
    pub fraction: f64,
    pub seed: u64,
    pub tail: Tail,
    pub method: TestMethod,
    /// Hypothesised mean; rows are shifted by `-μ0` first.
    pub mu0: Option<Vec<f64>>,
    /// Centre the data at its mean before resampling (null bootstrap).
    pub center: bool,
    /// Use `(count + 1) / (B + 1)` instead of `count / B`.
    pub add_one: bool,
}

impl BootstrapConfig {
    pub fn new(method: TestMethod, seed: u64) -> Self {
        Self {
            reps: 1000,
            fraction: 0.95,
            seed,
            tail: Tail::Upper,
            method,
            mu0: None,
            center: true,
            add_one: false,
        }
    }

    pub fn resample_size(&self, n: usize) -> usize {
        (self.fraction * n as f64 - 1e-9).ceil() as usize
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidInput("replicate count must be at least 1".into()));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "resample fraction must be in (0, 1], got {}",
                self.fraction
            )));
        }
        let m = self.resample_size(n);
        if m < 2 {
            return Err(Error::TooFewObservations { needed: 2, got: m });
        }
        Ok(())
    }
}

/// Bootstrap statistics in replicate order.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDistribution {
    pub statistics: Vec<f64>,
    /// Resamples rejected as degenerate and redrawn.
    pub redraws: usize,
    pub resample_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileSummary {
    pub min: f64,
    pub q05: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
    pub max: f64,
}

impl QuantileSummary {
    /// Linear-interpolation quantiles of a nonempty sample.
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empty sample".into()));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = p * (v.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Ok(Self {
            min: v[0],
            q05: q(0.05),
            q25: q(0.25),
            median: q(0.5),
            q75: q(0.75),
            q95: q(0.95),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub method: String,
    pub observed: f64,
    pub statistics: Vec<f64>,
    pub p_value: f64,
    pub quantiles: QuantileSummary,
    pub redraws: usize,
    pub resample_size: usize,
}

fn is_degenerate(e: &Error) -> bool {
    matches!(
        e,
        Error::Singular
            | Error::NotPositiveDefinite
            | Error::ZeroDenominator(_)
            | Error::RepeatedEigenvalue(_)
            | Error::NoConvergence
    )
}

fn prepare(x: &DataMatrix, cfg: &BootstrapConfig) -> Result<DataMatrix> {
    match &cfg.mu0 {
        Some(mu0) => x.shifted(&DVector::from_column_slice(mu0)),
        None => Ok(x.clone()),
    }
}

/// `B` statistics of `cfg.method` on resamples of `x`.
///
/// Replicate `b` draws its rows from stream `b` of `cfg.seed`; a degenerate
/// resample is redrawn from stream `b + k·2^32` for `k = 1, 2, …`. With
/// `cfg.center` the rows are first centred at their sample mean, so the
/// resampling distribution imitates the statistic under `H0`.
pub fn bootstrap_distribution(x: &DataMatrix, cfg: &BootstrapConfig) -> Result<BootstrapDistribution> {
    cfg.validate(x.nrows())?;
    let base = prepare(x, cfg)?;
    let base = if cfg.center {
        base.shifted(&base.column_means())?
    } else {
        base
    };
    let n = base.nrows();
    let m = cfg.resample_size(n);
    let kernel = KernelConfig::for_sample_size(m);

    let results: Vec<(f64, usize)> = (0..cfg.reps as u64)
        .into_par_iter()
        .map(|b| {
            for attempt in 0..=MAX_REDRAWS {
                let mut rng = stream_rng(cfg.seed, b + (attempt << 32));
                let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
                match cfg.method.statistic(&base.select_rows(&idx), &kernel) {
                    Ok(s) => return Ok((s, attempt as usize)),
                    Err(e) if is_degenerate(&e) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::InvalidInput(format!(
                "replicate {b}: {MAX_REDRAWS} consecutive degenerate resamples"
            )))
        })
        .collect::<Result<_>>()?;

    Ok(BootstrapDistribution {
        statistics: results.iter().map(|r| r.0).collect(),
        redraws: results.iter().map(|r| r.1).sum(),
        resample_size: m,
    })
}

/// Observed statistic, its bootstrap distribution and empirical p-value.
pub fn bootstrap_test(x: &DataMatrix, cfg: &BootstrapConfig) -> Result<BootstrapResult> {
    let shifted = prepare(x, cfg)?;
    let observed = cfg
        .method
        .statistic(&shifted, &KernelConfig::for_sample_size(x.nrows()))?;
    let dist = bootstrap_distribution(x, cfg)?;
    let p_value = if cfg.add_one {
        empirical_p_value_add_one(observed, &dist.statistics, cfg.tail)?
    } else {
        empirical_p_value(observed, &dist.statistics, cfg.tail)?
    };
    Ok(BootstrapResult {
        method: cfg.method.name(),
        observed,
        quantiles: QuantileSummary::of(&dist.statistics)?,
        statistics: dist.statistics,
        p_value,
        redraws: dist.redraws,
        resample_size: dist.resample_size,
    })
}

fn tail_counts(observed: f64, samples: &[f64]) -> Result<(usize, usize)> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty bootstrap sample".into()));
    }
    let below = samples.iter().filter(|s| **s < observed).count();
    let above = samples.iter().filter(|s| **s > observed).count();
    Ok((below, above))
}

/// Plain proportion of samples beyond `observed` in the given tail;
/// two-sided is twice the smaller one-sided value, capped at 1.
pub fn empirical_p_value(observed: f64, samples: &[f64], tail: Tail) -> Result<f64> {
    let (below, above) = tail_counts(observed, samples)?;
    let b = samples.len() as f64;
    Ok(combine(below as f64 / b, above as f64 / b, tail))
}

/// Same as [`empirical_p_value`] with `(count + 1) / (B + 1)`; never zero.
pub fn empirical_p_value_add_one(observed: f64, samples: &[f64], tail: Tail) -> Result<f64> {
    let (below, above) = tail_counts(observed, samples)?;
    let b = samples.len() as f64 + 1.0;
    Ok(combine((below as f64 + 1.0) / b, (above as f64 + 1.0) / b, tail))
}

fn combine(lower: f64, upper: f64, tail: Tail) -> f64 {
    match tail {
        Tail::Lower => lower,
        Tail::Upper => upper,
        Tail::TwoSided => (2.0 * lower.min(upper)).min(1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{ar1_covariance, sample_mvn};

    fn null_data(n: usize, p: usize, seed: u64) -> DataMatrix {
        sample_mvn(&DVector::zeros(p), &ar1_covariance(0.5, p).unwrap(), n, seed).unwrap()
    }

    #[test]
    fn p_value_examples() {
        let mut samples = vec![10.0; 1000];
        for s in samples.iter_mut().take(4) {
            *s = 1.0;
        }
        assert_eq!(empirical_p_value(5.0, &samples, Tail::Lower).unwrap(), 0.004);
        assert_eq!(empirical_p_value(0.0, &samples, Tail::Lower).unwrap(), 0.0);
        assert_eq!(empirical_p_value(5.0, &samples, Tail::Upper).unwrap(), 0.996);
        let sym: Vec<f64> = (-50..=50).map(f64::from).collect();
        let two = empirical_p_value(0.0, &sym, Tail::TwoSided).unwrap();
        assert!((two - 1.0).abs() < 0.02, "{two}");
        assert!(empirical_p_value(0.0, &[], Tail::Upper).is_err());
    }

    #[test]
    fn add_one_is_positive() {
        let samples = vec![1.0, 2.0, 3.0];
        assert_eq!(empirical_p_value(10.0, &samples, Tail::Upper).unwrap(), 0.0);
        assert_eq!(empirical_p_value_add_one(10.0, &samples, Tail::Upper).unwrap(), 0.25);
        assert_eq!(empirical_p_value_add_one(0.0, &samples, Tail::Upper).unwrap(), 1.0);
    }

    #[test]
    fn tails_partition_without_ties() {
        let samples = [0.3, 1.2, 2.5, 3.3, 4.0];
        for obs in [-1.0, 0.5, 2.0, 3.7, 9.0] {
            let lo = empirical_p_value(obs, &samples, Tail::Lower).unwrap();
            let hi = empirical_p_value(obs, &samples, Tail::Upper).unwrap();
            assert!((lo + hi - 1.0).abs() < 1e-15);
        }
        let lo = empirical_p_value(2.5, &samples, Tail::Lower).unwrap();
        let hi = empirical_p_value(2.5, &samples, Tail::Upper).unwrap();
        assert!(lo + hi < 1.0);
    }

    #[test]
    fn distribution_shape_and_determinism() {
        let x = null_data(100, 5, 1);
        let mut cfg = BootstrapConfig::new(TestMethod::Hotelling, 9);
        cfg.reps = 50;
        let a = bootstrap_distribution(&x, &cfg).unwrap();
        assert_eq!(a.statistics.len(), 50);
        assert_eq!(a.resample_size, 95);
        assert_eq!(a, bootstrap_distribution(&x, &cfg).unwrap());
        cfg.seed = 10;
        assert_ne!(a.statistics, bootstrap_distribution(&x, &cfg).unwrap().statistics);
    }

    #[test]
    fn centering_moves_distribution_to_null() {
        let mut x = null_data(80, 4, 2).into_inner();
        x.add_scalar_mut(0.6);
        let x = DataMatrix::new(x).unwrap();
        let mut cfg = BootstrapConfig::new(TestMethod::Bs, 3);
        cfg.reps = 200;
        let centred = bootstrap_test(&x, &cfg).unwrap();
        cfg.center = false;
        let raw = bootstrap_test(&x, &cfg).unwrap();
        assert!(centred.p_value < 0.01);
        assert!(raw.quantiles.median > 10.0 * centred.quantiles.median);
    }

    #[test]
    fn mu0_shift_is_applied() {
        let x = null_data(60, 3, 4);
        let mut cfg = BootstrapConfig::new(TestMethod::Hotelling, 5);
        cfg.reps = 100;
        let base = bootstrap_test(&x, &cfg).unwrap();
        cfg.mu0 = Some(vec![1.0, 1.0, 1.0]);
        let shifted = bootstrap_test(&x, &cfg).unwrap();
        assert!(shifted.observed > 10.0 * base.observed.max(1.0));
        // centring removes the shift from the resampling distribution
        assert_eq!(shifted.statistics.len(), base.statistics.len());
        for (a, b) in shifted.statistics.iter().zip(&base.statistics) {
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0));
        }
    }

    #[test]
    fn invalid_configs() {
        let x = null_data(10, 2, 6);
        let mut cfg = BootstrapConfig::new(TestMethod::Bs, 1);
        cfg.fraction = 0.0;
        assert!(bootstrap_distribution(&x, &cfg).is_err());
        cfg.fraction = 0.1;
        assert!(matches!(
            bootstrap_distribution(&x, &cfg),
            Err(Error::TooFewObservations { .. })
        ));
        cfg.fraction = 1.0;
        cfg.reps = 0;
        assert!(bootstrap_distribution(&x, &cfg).is_err());
    }

    #[test]
    fn quantile_summary() {
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        let q = QuantileSummary::of(&v).unwrap();
        assert_eq!((q.min, q.q05, q.median, q.q95, q.max), (0.0, 5.0, 50.0, 95.0, 100.0));
    }

    #[test]
    fn tail_parsing() {
        for t in [Tail::Lower, Tail::Upper, Tail::TwoSided] {
            assert_eq!(t.to_string().parse::<Tail>().unwrap(), t);
        }
        assert!("sideways".parse::<Tail>().is_err());
    }
}
