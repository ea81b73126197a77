//! One-sample mean-vector statistics for `H0: μ = 0`.
//!
//! Every statistic is a quadratic form `n X̄' W X̄` for some weight matrix
//! `W`: the inverse sample covariance (Hotelling), an equivariant shrinkage
//! precision (decomposite), the identity, the inverse diagonal, a ridge
//! inverse, or a block-diagonal inverse (composite). Testing `μ = μ0` is done
//! by shifting the rows by `μ0` first, see [`DataMatrix::shifted`].

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal};

use crate::error::{Error, Result};
use crate::linalg::{sample_moments, spectral_decompose, CovarianceMatrix, DataMatrix};
use crate::rmt::KernelConfig;
use crate::shrinkage::{equivariant_weights, PrecisionMethod};

/// Result of one test statistic evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub method: String,
    pub statistic: f64,
    pub normalized: Option<f64>,
    pub p_value: Option<f64>,
    #[serde(default)]
    pub metadata: TestMetadata,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TestMetadata {
    /// Degrees of freedom of the reference F distribution, when exact.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_df: Option<(f64, f64)>,
    /// Precision weights `ψ_i` on the ascending sample eigenvectors.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<Vec<f64>>,
    /// Contiguous `(start, len)` column blocks of the composite statistic.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<(usize, usize)>>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

impl TestOutcome {
    fn raw(method: impl Into<String>, statistic: f64) -> Self {
        Self {
            method: method.into(),
            statistic,
            normalized: None,
            p_value: None,
            metadata: TestMetadata::default(),
        }
    }
}

/// Statistic selector shared by the CLI, the bootstrap and the power harness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    Hotelling,
    /// `n X̄' Σ̂⁻¹ X̄` with the Ledoit–Wolf plug-in precision.
    Decomposite,
    /// Same construction with Stein's isotonized shrinker.
    DecompositeStein,
    /// Bai–Saranadasa type `n ‖X̄‖²`.
    Bs,
    Diag,
    Ridge(f64),
    Composite(usize),
}

impl TestMethod {
    pub fn name(&self) -> String {
        self.to_string()
    }

    /// Raw statistic only, without p-values or metadata.
    pub fn statistic(&self, x: &DataMatrix, cfg: &KernelConfig) -> Result<f64> {
        Ok(self.evaluate(x, cfg)?.statistic)
    }

    pub fn evaluate(&self, x: &DataMatrix, cfg: &KernelConfig) -> Result<TestOutcome> {
        match *self {
            Self::Hotelling => hotelling_t2(x),
            Self::Decomposite => normalized_decomposite(x, cfg),
            Self::DecompositeStein => decomposite_t2(x, PrecisionMethod::Stein, cfg),
            Self::Bs => variant_statistic(x, Variant::Bs),
            Self::Diag => variant_statistic(x, Variant::Diag),
            Self::Ridge(r) => variant_statistic(x, Variant::Ridge(r)),
            Self::Composite(k) => composite_t2(x, k),
        }
    }
}

impl fmt::Display for TestMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Hotelling => write!(f, "hotelling"),
            Self::Decomposite => write!(f, "decomposite"),
            Self::DecompositeStein => write!(f, "decomposite-stein"),
            Self::Bs => write!(f, "bs"),
            Self::Diag => write!(f, "diag"),
            Self::Ridge(r) => write!(f, "ridge({r})"),
            Self::Composite(k) => write!(f, "composite({k})"),
        }
    }
}

impl FromStr for TestMethod {
    type Err = Error;

    /// Parses `hotelling`, `decomposite`, `decomposite-stein`, `bs`, `diag`,
    /// `ridge` / `ridge(λ)` and `composite` / `composite(K)`; bare `ridge`
    /// and `composite` default to λ = 1 and K = 2.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let arg = |prefix: &str| -> Option<&str> {
            s.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')')
        };
        let bad = || Error::InvalidInput(format!("unknown test method '{s}'"));
        Ok(match s {
            "hotelling" => Self::Hotelling,
            "decomposite" | "lw" => Self::Decomposite,
            "decomposite-stein" | "stein" => Self::DecompositeStein,
            "bs" => Self::Bs,
            "diag" => Self::Diag,
            "ridge" => Self::Ridge(1.0),
            "composite" => Self::Composite(2),
            _ => {
                if let Some(a) = arg("ridge") {
                    Self::Ridge(a.parse().map_err(|_| bad())?)
                } else if let Some(a) = arg("composite") {
                    Self::Composite(a.parse().map_err(|_| bad())?)
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

fn solve_quadratic(s: &CovarianceMatrix, xbar: &DVector<f64>) -> Result<f64> {
    let chol = Cholesky::new(s.as_matrix().clone()).ok_or(Error::Singular)?;
    let y = chol.solve(xbar);
    Ok(xbar.dot(&y))
}

/// Hotelling's `T² = n X̄' S⁻¹ X̄` with the exact F-based p-value
/// (valid for Gaussian data under `H0`).
pub fn hotelling_t2(x: &DataMatrix) -> Result<TestOutcome> {
    let (n, p) = (x.nrows(), x.ncols());
    if n < p + 1 {
        return Err(Error::DimensionTooLarge { p, n });
    }
    let (xbar, s) = sample_moments(x)?;
    let t2 = n as f64 * solve_quadratic(&s, &xbar)?;
    let mut out = TestOutcome::raw(TestMethod::Hotelling.name(), t2.max(0.0));
    if n > p {
        let (d1, d2) = (p as f64, (n - p) as f64);
        let f = t2 * d2 / (d1 * (n as f64 - 1.0));
        let dist = FisherSnedecor::new(d1, d2).map_err(|e| Error::InvalidInput(e.to_string()))?;
        out.normalized = Some(f);
        out.p_value = Some(dist.sf(f).clamp(0.0, 1.0));
        out.metadata.f_df = Some((d1, d2));
        out.metadata
            .notes
            .push("F p-value is exact only for Gaussian data under H0".into());
    }
    Ok(out)
}

/// `n X̄' P X̄` with `P` the precision estimate of `method`.
pub fn decomposite_t2(
    x: &DataMatrix,
    method: PrecisionMethod,
    cfg: &KernelConfig,
) -> Result<TestOutcome> {
    let n = x.nrows();
    let (xbar, s) = sample_moments(x)?;
    let mut out = match method {
        PrecisionMethod::Identity => TestOutcome::raw("decomposite(identity)", n as f64 * xbar.norm_squared()),
        PrecisionMethod::Diagonal => {
            let d = s.diagonal();
            if d.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Singular);
            }
            let q: f64 = xbar.iter().zip(d.iter()).map(|(m, v)| m * m / v).sum();
            TestOutcome::raw("decomposite(diagonal)", n as f64 * q)
        }
        _ => {
            let decomp = spectral_decompose(&s)?;
            let (weights, notes) = equivariant_weights(&decomp, n, method, cfg)?
                .expect("equivariant method");
            let q = decomp.quadratic_form(&weights, &xbar);
            let mut o = TestOutcome::raw(format!("decomposite({method})"), n as f64 * q.max(0.0));
            o.metadata.spectrum = Some(weights.iter().copied().collect());
            o.metadata.notes = notes;
            o
        }
    };
    if method == PrecisionMethod::LedoitWolf {
        out.method = TestMethod::Decomposite.name();
    }
    Ok(out)
}

/// The fixed-weight variants of the decomposite statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    /// `n X̄' X̄`.
    Bs,
    /// `n X̄' diag(s_11, …, s_pp)⁻¹ X̄`.
    Diag,
    /// `n X̄' (S + λI)⁻¹ X̄`.
    Ridge(f64),
}

pub fn variant_statistic(x: &DataMatrix, variant: Variant) -> Result<TestOutcome> {
    let n = x.nrows() as f64;
    let (xbar, s) = sample_moments(x)?;
    let (name, q) = match variant {
        Variant::Bs => (TestMethod::Bs, xbar.norm_squared()),
        Variant::Diag => {
            let d = s.diagonal();
            if let Some(i) = d.iter().position(|v| !(*v > 0.0)) {
                return Err(Error::InvalidInput(format!("zero sample variance in column {i}")));
            }
            (TestMethod::Diag, xbar.iter().zip(d.iter()).map(|(m, v)| m * m / v).sum())
        }
        Variant::Ridge(r) => {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidInput(format!("ridge must be positive, got {r}")));
            }
            let p = s.dim();
            let shifted = CovarianceMatrix::new(s.as_matrix() + DMatrix::identity(p, p) * r)?;
            (TestMethod::Ridge(r), solve_quadratic(&shifted, &xbar)?)
        }
    };
    Ok(TestOutcome::raw(name.name(), n * q.max(0.0)))
}

/// Contiguous column blocks: `K` blocks of size `p / K`, the last one
/// absorbing the remainder.
pub fn composite_blocks(p: usize, k: usize) -> Result<Vec<(usize, usize)>> {
    if k == 0 || k > p {
        return Err(Error::InvalidInput(format!("block count must be in 1..={p}, got {k}")));
    }
    let size = p / k;
    Ok((0..k)
        .map(|b| {
            let start = b * size;
            let len = if b + 1 == k { p - start } else { size };
            (start, len)
        })
        .collect())
}

/// Sum of block-wise Hotelling statistics over a contiguous partition.
pub fn composite_t2(x: &DataMatrix, k: usize) -> Result<TestOutcome> {
    let n = x.nrows();
    let blocks = composite_blocks(x.ncols(), k)?;
    if let Some(&(_, len)) = blocks.iter().find(|(_, len)| *len + 1 > n) {
        return Err(Error::DimensionTooLarge { p: len, n });
    }
    let (xbar, s) = sample_moments(x)?;
    let mut total = 0.0;
    for &(start, len) in &blocks {
        let sb = s.block(start, len);
        let mb = xbar.rows(start, len).into_owned();
        total += solve_quadratic(&sb, &mb)?;
    }
    let mut out = TestOutcome::raw(TestMethod::Composite(k).name(), n as f64 * total.max(0.0));
    out.metadata.blocks = Some(blocks);
    Ok(out)
}

/// `(T²_N - Σψ̂) / √(2 Σψ̂²)` and its one-sided normal p-value, with `ψ̂`
/// the Ledoit–Wolf plug-in precision weights.
pub fn normalized_decomposite(x: &DataMatrix, cfg: &KernelConfig) -> Result<TestOutcome> {
    let mut out = decomposite_t2(x, PrecisionMethod::LedoitWolf, cfg)?;
    let psi = out.metadata.spectrum.as_deref().unwrap_or_default();
    let z = normalize(out.statistic, psi);
    out.normalized = Some(z);
    out.p_value = Some(upper_normal_tail(z));
    Ok(out)
}

/// Centres and scales a statistic by its mixture-of-χ² null moments.
pub fn normalize(statistic: f64, psi: &[f64]) -> f64 {
    let mean: f64 = psi.iter().sum();
    let var: f64 = 2.0 * psi.iter().map(|v| v * v).sum::<f64>();
    (statistic - mean) / var.sqrt()
}

pub(crate) fn upper_normal_tail(z: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").sf(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sample_mvn, stream_rng};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn random_sigma(p: usize, seed: u64) -> CovarianceMatrix {
        let mut rng = stream_rng(seed, 77);
        let a = DMatrix::from_fn(p, p, |_, _| rng.random::<f64>() - 0.5) + DMatrix::identity(p, p);
        CovarianceMatrix::new(&a * a.transpose()).unwrap()
    }

    fn data(n: usize, p: usize, shift: f64, seed: u64) -> DataMatrix {
        sample_mvn(&DVector::from_element(p, shift), &random_sigma(p, seed), n, seed).unwrap()
    }

    #[test]
    fn hotelling_univariate() {
        let x = DataMatrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let t = hotelling_t2(&x).unwrap();
        assert_abs_diff_eq!(t.statistic, 12.0, epsilon = 1e-12);
        // F(1, 2) with f = 12 * 2 / (1 * 2) = 12
        assert_abs_diff_eq!(t.normalized.unwrap(), 12.0, epsilon = 1e-12);
        let p = t.p_value.unwrap();
        // P(F(1,2) > 12) = 1 - sqrt(12/14) for F(1,2)
        assert_abs_diff_eq!(p, 1.0 - (12.0f64 / 14.0).sqrt(), epsilon = 1e-8);
    }

    #[test]
    fn hotelling_zero_mean_is_zero() {
        let x = DataMatrix::from_rows(&[
            vec![1.0, 2.0],
            vec![-1.0, -2.0],
            vec![2.0, -1.0],
            vec![-2.0, 1.0],
        ])
        .unwrap();
        assert_abs_diff_eq!(hotelling_t2(&x).unwrap().statistic, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn hotelling_affine_invariance() {
        let x = data(40, 5, 0.2, 1);
        let mut rng = stream_rng(1, 3);
        let a = DMatrix::from_fn(5, 5, |_, _| rng.random::<f64>() - 0.5) + DMatrix::identity(5, 5) * 2.0;
        let t1 = hotelling_t2(&x).unwrap().statistic;
        let t2 = hotelling_t2(&x.transformed(&a).unwrap()).unwrap().statistic;
        assert!((t1 - t2).abs() < 1e-9 * t1);
    }

    #[test]
    fn hotelling_requires_enough_rows() {
        let x = data(5, 5, 0.0, 2);
        assert!(matches!(hotelling_t2(&x), Err(Error::DimensionTooLarge { .. })));
    }

    #[test]
    fn decomposite_with_sample_spectrum_is_hotelling() {
        for seed in 0..5 {
            let x = data(30, 8, 0.1, seed);
            let cfg = KernelConfig::for_sample_size(30);
            let a = decomposite_t2(&x, PrecisionMethod::Sample, &cfg).unwrap().statistic;
            let b = hotelling_t2(&x).unwrap().statistic;
            assert!((a - b).abs() <= 1e-10 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn decomposite_is_nonnegative_and_records_spectrum() {
        let x = data(90, 30, 0.0, 3);
        let out = decomposite_t2(&x, PrecisionMethod::LedoitWolf, &KernelConfig::for_sample_size(90)).unwrap();
        assert!(out.statistic >= 0.0);
        assert_eq!(out.metadata.spectrum.as_ref().unwrap().len(), 30);
        assert_eq!(out.method, "decomposite");
    }

    #[test]
    fn bs_example() {
        // n = 2, X̄ = (1, 1)
        let x = DataMatrix::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        assert_abs_diff_eq!(variant_statistic(&x, Variant::Bs).unwrap().statistic, 4.0, epsilon = 1e-14);
    }

    #[test]
    fn ridge_limit_is_bs() {
        let x = data(20, 4, 0.5, 4);
        let bs = variant_statistic(&x, Variant::Bs).unwrap().statistic;
        let mut last = f64::INFINITY;
        for &r in &[1e2, 1e4, 1e6, 1e8] {
            let scaled = r * variant_statistic(&x, Variant::Ridge(r)).unwrap().statistic;
            let err = (scaled - bs).abs() / bs;
            assert!(err < last);
            last = err;
        }
        assert!(last < 1e-6);
        assert!(variant_statistic(&x, Variant::Ridge(0.0)).is_err());
    }

    #[test]
    fn diag_with_unit_variances_equals_bs() {
        // columns with unit sample variance: ±1 patterns centred at 0.25
        let rows = vec![
            vec![1.25, -0.75],
            vec![-0.75, 1.25],
            vec![1.25, 1.25],
            vec![-0.75, -0.75],
        ];
        let x = DataMatrix::from_rows(&rows).unwrap();
        let (_, s) = sample_moments(&x).unwrap();
        let d = s.diagonal();
        // rescale each column to unit variance
        let m = DMatrix::from_fn(4, 2, |i, j| rows[i][j] / d[j].sqrt());
        let x = DataMatrix::new(m).unwrap();
        let a = variant_statistic(&x, Variant::Diag).unwrap().statistic;
        let b = variant_statistic(&x, Variant::Bs).unwrap().statistic;
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn diag_rejects_constant_column() {
        let x = DataMatrix::from_rows(&[vec![1.0, 3.0], vec![2.0, 3.0], vec![4.0, 3.0]]).unwrap();
        assert!(variant_statistic(&x, Variant::Diag).is_err());
    }

    #[test]
    fn composite_single_block_is_hotelling() {
        let x = data(25, 6, 0.3, 5);
        let a = composite_t2(&x, 1).unwrap().statistic;
        let b = hotelling_t2(&x).unwrap().statistic;
        assert!((a - b).abs() <= 1e-10 * b);
    }

    #[test]
    fn composite_unit_blocks_is_diag() {
        let x = data(25, 6, 0.3, 6);
        let a = composite_t2(&x, 6).unwrap().statistic;
        let b = variant_statistic(&x, Variant::Diag).unwrap().statistic;
        assert!((a - b).abs() <= 1e-10 * b);
    }

    #[test]
    fn composite_partition() {
        assert_eq!(composite_blocks(10, 2).unwrap(), vec![(0, 5), (5, 5)]);
        assert_eq!(composite_blocks(10, 3).unwrap(), vec![(0, 3), (3, 3), (6, 4)]);
        assert!(composite_blocks(3, 0).is_err());
        assert!(composite_blocks(3, 4).is_err());
        let x = data(6, 12, 0.0, 7);
        assert!(composite_t2(&x, 2).is_err());
    }

    #[test]
    fn normalize_examples() {
        assert_abs_diff_eq!(normalize(100.0, &[1.0; 100]), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(normalize(120.0, &[1.0; 100]), 20.0 / 200f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(normalize(120.0, &[1.0; 100]), 1.41421, epsilon = 5e-6);
    }

    #[test]
    fn method_parsing() {
        assert_eq!("hotelling".parse::<TestMethod>().unwrap(), TestMethod::Hotelling);
        assert_eq!("ridge(0.5)".parse::<TestMethod>().unwrap(), TestMethod::Ridge(0.5));
        assert_eq!("composite(4)".parse::<TestMethod>().unwrap(), TestMethod::Composite(4));
        assert!("nosuch".parse::<TestMethod>().is_err());
        assert!("ridge(x)".parse::<TestMethod>().is_err());
        for m in [TestMethod::Bs, TestMethod::Composite(3), TestMethod::Ridge(2.5), TestMethod::Decomposite] {
            assert_eq!(m.to_string().parse::<TestMethod>().unwrap(), m);
        }
    }

    #[test]
    fn statistics_invariant_under_row_permutation() {
        let x = data(50, 10, 0.1, 8);
        let mut idx: Vec<usize> = (0..50).rev().collect();
        idx.swap(3, 17);
        let y = x.select_rows(&idx);
        let cfg = KernelConfig::for_sample_size(50);
        for m in [
            TestMethod::Hotelling,
            TestMethod::Decomposite,
            TestMethod::DecompositeStein,
            TestMethod::Bs,
            TestMethod::Diag,
            TestMethod::Ridge(0.7),
            TestMethod::Composite(2),
        ] {
            let a = m.statistic(&x, &cfg).unwrap();
            let b = m.statistic(&y, &cfg).unwrap();
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{m}: {a} vs {b}");
        }
    }

    #[test]
    fn bs_orthogonal_but_not_general_invariance() {
        let x = data(30, 4, 0.4, 9);
        let mut rng = stream_rng(9, 1);
        let a = DMatrix::from_fn(4, 4, |_, _| rng.random::<f64>() - 0.5);
        let q = a.qr().q();
        let bs = variant_statistic(&x, Variant::Bs).unwrap().statistic;
        let rotated = variant_statistic(&x.transformed(&q).unwrap(), Variant::Bs).unwrap().statistic;
        assert!((bs - rotated).abs() < 1e-10 * bs);
        let scale = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 0.2, 5.0]));
        let scaled = variant_statistic(&x.transformed(&scale).unwrap(), Variant::Bs).unwrap().statistic;
        assert!((bs - scaled).abs() > 1e-3 * bs);
    }
}
