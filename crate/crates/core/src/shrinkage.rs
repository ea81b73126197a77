//! Orthogonally equivariant covariance and precision estimation.
//!
//! An equivariant estimator keeps the sample eigenvectors `U` of `S` and
//! replaces the sample eigenvalues by shrunk values. The estimators here are
//! Stein's raw shrinker (with isotonization), the Ledoit–Wolf oracle and its
//! kernel plug-in, plus the classical baselines used by the mean tests.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sample_moments, spectral_decompose, CovarianceMatrix, DataMatrix, SpectralDecomposition};
use crate::rmt::{kernel_transform_unchecked, KernelConfig};

/// Floor factor for Stein values left nonpositive after isotonization.
pub const STEIN_FLOOR: f64 = 1e-8;
/// Relative perturbation that separates tied sample eigenvalues.
pub const TIE_PERTURBATION: f64 = 1e-10;

/// Origin of a shrunk spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumKind {
    SteinRaw,
    SteinIsotonized,
    LwOracle,
    LwPlugin,
    Identity,
    Ridge(f64),
    Sample,
}

/// Covariance-scale eigenvalue estimates `φ_i`, aligned with the ascending
/// sample eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkageSpectrum {
    pub values: DVector<f64>,
    pub kind: SpectrumKind,
    /// Repairs applied on the way (tie perturbation, clamping, interpolation).
    pub adjustments: Vec<String>,
}

impl ShrinkageSpectrum {
    fn new(values: Vec<f64>, kind: SpectrumKind) -> Self {
        Self {
            values: DVector::from_vec(values),
            kind,
            adjustments: Vec::new(),
        }
    }

    /// Precision-side weights `ψ_i = 1 / φ_i`.
    pub fn precision_weights(&self) -> DVector<f64> {
        self.values.map(|v| 1.0 / v)
    }
}

/// Precision estimators understood by [`precision_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrecisionMethod {
    Sample,
    Identity,
    Diagonal,
    Ridge(f64),
    Stein,
    LedoitWolf,
}

impl fmt::Display for PrecisionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Sample => write!(f, "sample"),
            Self::Identity => write!(f, "identity"),
            Self::Diagonal => write!(f, "diagonal"),
            Self::Ridge(l) => write!(f, "ridge({l})"),
            Self::Stein => write!(f, "stein"),
            Self::LedoitWolf => write!(f, "lw"),
        }
    }
}

fn check_ascending_positive(eigenvalues: &[f64]) -> Result<()> {
    if eigenvalues.is_empty() {
        return Err(Error::InvalidInput("empty spectrum".into()));
    }
    if let Some(bad) = eigenvalues.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidInput(format!("eigenvalues must be positive, got {bad}")));
    }
    if eigenvalues.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput("eigenvalues must be sorted ascending".into()));
    }
    Ok(())
}

/// Stein's raw shrinker
/// `φ_i = n λ_i / (n - p + 1 - 2 λ_i Σ_{j≠i} 1/(λ_j - λ_i))`.
///
/// Values may come out negative or out of order; nothing is repaired here.
pub fn stein_raw(eigenvalues: &[f64], n: usize) -> Result<ShrinkageSpectrum> {
    if eigenvalues.is_empty() {
        return Err(Error::InvalidInput("empty spectrum".into()));
    }
    let p = eigenvalues.len();
    let nf = n as f64;
    let mut out = Vec::with_capacity(p);
    for (i, &li) in eigenvalues.iter().enumerate() {
        let mut sum = 0.0;
        for (j, &lj) in eigenvalues.iter().enumerate() {
            if j != i {
                if lj == li {
                    return Err(Error::RepeatedEigenvalue(li));
                }
                sum += 1.0 / (lj - li);
            }
        }
        let denom = nf - p as f64 + 1.0 - 2.0 * li * sum;
        if denom == 0.0 {
            return Err(Error::ZeroDenominator(i));
        }
        out.push(nf * li / denom);
    }
    Ok(ShrinkageSpectrum::new(out, SpectrumKind::SteinRaw))
}

/// Least-squares nondecreasing fit by pool-adjacent-violators.
pub fn isotonize(values: &[f64]) -> Vec<f64> {
    // blocks of (mean, weight)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, w2) = blocks[blocks.len() - 1];
            let (m1, w1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let w = w1 + w2;
            *blocks.last_mut().unwrap() = ((m1 * w1 as f64 + m2 * w2 as f64) / w as f64, w);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, w)| std::iter::repeat_n(m, w))
        .collect()
}

/// Spreads exact ties apart by multiples of `TIE_PERTURBATION * λ`.
fn separate_ties(eigenvalues: &[f64]) -> (Vec<f64>, usize) {
    let mut out = eigenvalues.to_vec();
    let mut touched = 0;
    let mut run = 0u32;
    for i in 1..out.len() {
        if eigenvalues[i] == eigenvalues[i - 1] {
            run += 1;
            out[i] = eigenvalues[i] * (1.0 + TIE_PERTURBATION * run as f64);
            touched += 1;
        } else {
            run = 0;
        }
    }
    (out, touched)
}

fn median(sorted: &[f64]) -> f64 {
    let k = sorted.len();
    if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    }
}

/// Stein's shrinker after tie separation, isotonization and a positive floor
/// of `STEIN_FLOOR * median(λ)`.
pub fn stein_isotonized(eigenvalues: &[f64], n: usize) -> Result<ShrinkageSpectrum> {
    check_ascending_positive(eigenvalues)?;
    let (lambda, ties) = separate_ties(eigenvalues);
    let raw = stein_raw(&lambda, n)?;
    let mut values = isotonize(raw.values.as_slice());
    let floor = STEIN_FLOOR * median(eigenvalues);
    let clamped = values.iter().filter(|v| **v <= floor).count();
    for v in &mut values {
        *v = v.max(floor);
    }
    let mut spec = ShrinkageSpectrum::new(values, SpectrumKind::SteinIsotonized);
    if ties > 0 {
        spec.adjustments
            .push(format!("perturbed {ties} tied eigenvalue(s) by {TIE_PERTURBATION:e} relative"));
    }
    if clamped > 0 {
        spec.adjustments
            .push(format!("clamped {clamped} nonpositive value(s) to {floor:e}"));
    }
    Ok(spec)
}

/// Oracle precision eigenvalue `a = (1 - c - 2 c λ Re m(λ)) / λ`.
pub fn lw_oracle(lambda: f64, c: f64, re_m: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    Ok((1.0 - c - 2.0 * c * lambda * re_m) / lambda)
}

/// Denominators `1 - c - 2 c λ_i Re m̂(λ_i)` of the plug-in shrinker, with the
/// transform estimated by [`crate::rmt::kernel_stieltjes_estimate`].
pub fn lw_denominators(eigenvalues: &[f64], n: usize, cfg: &KernelConfig) -> Result<Vec<f64>> {
    check_ascending_positive(eigenvalues)?;
    let p = eigenvalues.len();
    if p >= n {
        return Err(Error::DimensionTooLarge { p, n });
    }
    let c = p as f64 / n as f64;
    Ok(eigenvalues
        .iter()
        .map(|&l| {
            let re = kernel_transform_unchecked(eigenvalues, cfg.bandwidth, l).re;
            1.0 - c - 2.0 * c * l * re
        })
        .collect())
}

/// Plug-in values `λ_i / denominator_i` before any safeguarding.
pub fn lw_raw(eigenvalues: &[f64], n: usize, cfg: &KernelConfig) -> Result<Vec<f64>> {
    Ok(lw_denominators(eigenvalues, n, cfg)?
        .into_iter()
        .zip(eigenvalues)
        .map(|(d, l)| l / d)
        .collect())
}

/// Ledoit–Wolf nonlinear shrinker with the kernel plug-in transform.
///
/// Entries whose denominator is not positive are replaced by linear
/// interpolation in `λ` between the nearest valid neighbours (constant at the
/// ends); a final isotonization enforces the ordering. Both repairs are
/// recorded in `adjustments`.
pub fn lw_shrink(eigenvalues: &[f64], n: usize, cfg: &KernelConfig) -> Result<ShrinkageSpectrum> {
    let denoms = lw_denominators(eigenvalues, n, cfg)?;
    let p = eigenvalues.len();
    let valid: Vec<usize> = (0..p).filter(|&i| denoms[i] > 0.0).collect();
    if valid.is_empty() {
        return Err(Error::ZeroDenominator(0));
    }
    let mut values = vec![0.0; p];
    for &i in &valid {
        values[i] = eigenvalues[i] / denoms[i];
    }
    let bad = p - valid.len();
    if bad > 0 {
        for i in (0..p).filter(|i| denoms[*i] <= 0.0) {
            let left = valid.iter().rev().find(|&&j| j < i).copied();
            let right = valid.iter().find(|&&j| j > i).copied();
            values[i] = match (left, right) {
                (Some(a), Some(b)) => {
                    let (la, lb) = (eigenvalues[a], eigenvalues[b]);
                    let t = if lb > la { (eigenvalues[i] - la) / (lb - la) } else { 0.5 };
                    values[a] + t * (values[b] - values[a])
                }
                (Some(a), None) => values[a],
                (None, Some(b)) => values[b],
                (None, None) => unreachable!(),
            };
        }
    }
    let monotone = values.windows(2).all(|w| w[0] <= w[1]);
    let mut spec = if monotone {
        ShrinkageSpectrum::new(values, SpectrumKind::LwPlugin)
    } else {
        ShrinkageSpectrum::new(isotonize(&values), SpectrumKind::LwPlugin)
    };
    if bad > 0 {
        spec.adjustments
            .push(format!("interpolated {bad} value(s) with nonpositive denominator"));
    }
    if !monotone {
        spec.adjustments.push("isotonized out-of-order values".into());
    }
    Ok(spec)
}

/// A symmetric positive definite precision estimate together with the
/// eigen-structure it was built from.
#[derive(Debug, Clone)]
pub struct PrecisionEstimate {
    pub matrix: CovarianceMatrix,
    pub method: PrecisionMethod,
    /// Sample eigen-decomposition, for the equivariant methods.
    pub decomposition: Option<SpectralDecomposition>,
    /// Precision eigenvalues on the sample eigenvectors, for the equivariant methods.
    pub weights: Option<DVector<f64>>,
    pub warnings: Vec<String>,
}

/// Precision-side weights `ψ_i` on the sample eigenvectors for the
/// equivariant methods; `None` for identity and diagonal.
pub(crate) fn equivariant_weights(
    decomp: &SpectralDecomposition,
    n: usize,
    method: PrecisionMethod,
    cfg: &KernelConfig,
) -> Result<Option<(DVector<f64>, Vec<String>)>> {
    let lambda = decomp.eigenvalues.as_slice();
    let p = lambda.len();
    let out = match method {
        PrecisionMethod::Identity | PrecisionMethod::Diagonal => return Ok(None),
        PrecisionMethod::Sample => {
            if n < p + 1 {
                return Err(Error::DimensionTooLarge { p, n });
            }
            let top = lambda[p - 1].abs();
            if !(lambda[0] > 1e-12 * top) {
                return Err(Error::Singular);
            }
            (decomp.eigenvalues.map(|l| 1.0 / l), Vec::new())
        }
        PrecisionMethod::Ridge(r) => {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidInput(format!("ridge must be positive, got {r}")));
            }
            (decomp.eigenvalues.map(|l| 1.0 / (l.max(0.0) + r)), Vec::new())
        }
        PrecisionMethod::Stein => {
            let positive = positive_spectrum(lambda)?;
            let s = stein_isotonized(&positive, n)?;
            (s.precision_weights(), s.adjustments)
        }
        PrecisionMethod::LedoitWolf => {
            let positive = positive_spectrum(lambda)?;
            let s = lw_shrink(&positive, n, cfg)?;
            (s.precision_weights(), s.adjustments)
        }
    };
    Ok(Some(out))
}

fn positive_spectrum(lambda: &[f64]) -> Result<Vec<f64>> {
    if !(lambda[0] > 0.0) {
        return Err(Error::Singular);
    }
    Ok(lambda.to_vec())
}

/// Builds the precision estimate of `method` from the data.
pub fn precision_estimate(
    x: &DataMatrix,
    method: PrecisionMethod,
    cfg: &KernelConfig,
) -> Result<PrecisionEstimate> {
    let (_, s) = sample_moments(x)?;
    precision_from_covariance(&s, x.nrows(), method, cfg)
}

/// Same as [`precision_estimate`] from a precomputed sample covariance.
pub fn precision_from_covariance(
    s: &CovarianceMatrix,
    n: usize,
    method: PrecisionMethod,
    cfg: &KernelConfig,
) -> Result<PrecisionEstimate> {
    let p = s.dim();
    match method {
        PrecisionMethod::Identity => Ok(PrecisionEstimate {
            matrix: CovarianceMatrix::identity(p),
            method,
            decomposition: None,
            weights: None,
            warnings: Vec::new(),
        }),
        PrecisionMethod::Diagonal => {
            let d = s.diagonal();
            if d.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Singular);
            }
            Ok(PrecisionEstimate {
                matrix: CovarianceMatrix::new(DMatrix::from_diagonal(&d.map(|v| 1.0 / v)))?,
                method,
                decomposition: None,
                weights: None,
                warnings: Vec::new(),
            })
        }
        _ => {
            let decomp = spectral_decompose(s)?;
            let (weights, warnings) =
                equivariant_weights(&decomp, n, method, cfg)?.expect("equivariant method");
            Ok(PrecisionEstimate {
                matrix: CovarianceMatrix::new(decomp.with_spectrum(&weights))?,
                method,
                decomposition: Some(decomp),
                weights: Some(weights),
                warnings,
            })
        }
    }
}
