//! Local asymptotic power of the decomposite test and a size-calibrated
//! Monte-Carlo power harness.
//!
//! Under `H1n: μ = n^{-1/2} p^{1/4} δ` the decomposite statistic behaves like
//! the weighted sum `T²₀ = Σ ψ_i w_i²`, `w_i ~ N(θ_i, 1)`, whose normal
//! approximation gives `Φ(-z_α + (2d)^{-1/2} Σ ψ_i β_i²)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{ar1_covariance, spectral_decompose, stream_rng, CovarianceMatrix, MvnSampler};
use crate::mean_tests::{composite_blocks, TestMethod, TestOutcome};
use crate::rmt::KernelConfig;

/// Seed of the fixed local-alternative direction `δ ~ U(-1, 1)^p`.
pub const DELTA_SEED: u64 = 20_200_430;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Standard normal quantile, polished by Newton steps so that
/// `Φ(Φ⁻¹(q))` reproduces `q` to rounding.
pub(crate) fn normal_quantile(q: f64) -> f64 {
    let n = std_normal();
    let mut x = n.inverse_cdf(q);
    for _ in 0..2 {
        let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if density > 0.0 {
            x -= (n.cdf(x) - q) / density;
        }
    }
    x
}

/// Inputs of the local power formula.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticModel {
    /// Weights `ψ_i > 0`.
    pub psi: DVector<f64>,
    /// Local coordinates `β_i`; the noncentrality coordinates are `θ = p^{1/4} β`.
    pub beta: DVector<f64>,
    /// Limit constant `d = lim Σ ψ_i² / p`.
    pub d: f64,
    pub alpha: f64,
}

impl AsymptoticModel {
    /// Validates the inputs; `d` is taken as given.
    pub fn new(psi: DVector<f64>, beta: DVector<f64>, d: f64, alpha: f64) -> Result<Self> {
        check_lengths(psi.len(), beta.len())?;
        check_psi(psi.as_slice())?;
        Ok(Self { psi, beta, d, alpha })
    }

    /// Same as [`AsymptoticModel::new`] with the finite-`p` plug-in `d = Σψ²/p`.
    pub fn with_plugin_d(psi: DVector<f64>, beta: DVector<f64>, alpha: f64) -> Result<Self> {
        let d = psi.norm_squared() / psi.len().max(1) as f64;
        Self::new(psi, beta, d, alpha)
    }

    /// Rotation-free case: `Σ` and `Σ₁` share eigenvectors `V`, so
    /// `ψ_i = d_i = γ_i / γ*_i` and `β = V' Σ^{-1/2} δ`.
    ///
    /// `sigma1_spectrum` holds `γ*`, aligned with the ascending eigenvalues of `Σ`.
    pub fn shared_eigenvectors(
        sigma: &CovarianceMatrix,
        sigma1_spectrum: &DVector<f64>,
        delta: &DVector<f64>,
        alpha: f64,
    ) -> Result<Self> {
        let p = sigma.dim();
        check_lengths(p, sigma1_spectrum.len())?;
        check_lengths(p, delta.len())?;
        let eig = spectral_decompose(sigma)?;
        if !(eig.eigenvalues[0] > 0.0) || sigma1_spectrum.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::NotPositiveDefinite);
        }
        let coords = eig.eigenvectors.tr_mul(delta);
        let beta = DVector::from_fn(p, |i, _| coords[i] / eig.eigenvalues[i].sqrt());
        let psi = DVector::from_fn(p, |i, _| eig.eigenvalues[i] / sigma1_spectrum[i]);
        Self::with_plugin_d(psi, beta, alpha)
    }

    /// `Σ ψ_i β_i²`.
    pub fn shift(&self) -> f64 {
        self.psi.iter().zip(self.beta.iter()).map(|(p, b)| p * b * b).sum()
    }
}

fn check_lengths(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn check_psi(psi: &[f64]) -> Result<()> {
    if psi.is_empty() {
        return Err(Error::InvalidInput("empty weight vector".into()));
    }
    if let Some(v) = psi.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput(format!("weights must be positive, got {v}")));
    }
    Ok(())
}

/// Mean `Σψ_i + Σψ_iθ_i²` and variance `2Σψ_i² + 4Σψ_i²θ_i²` of `T²₀`.
pub fn t20_moments(psi: &[f64], theta: &[f64]) -> Result<(f64, f64)> {
    check_lengths(psi.len(), theta.len())?;
    check_psi(psi)?;
    let mut mean = 0.0;
    let mut var = 0.0;
    for (&w, &t) in psi.iter().zip(theta) {
        mean += w * (1.0 + t * t);
        var += 2.0 * w * w * (1.0 + 2.0 * t * t);
    }
    Ok((mean, var))
}

/// `reps` draws of `Σ ψ_i w_i²` with independent `w_i ~ N(θ_i, 1)`.
pub fn sample_t20(psi: &[f64], theta: &[f64], reps: usize, seed: u64) -> Result<Vec<f64>> {
    check_lengths(psi.len(), theta.len())?;
    check_psi(psi)?;
    if reps == 0 {
        return Err(Error::InvalidInput("reps must be at least 1".into()));
    }
    let mut rng = stream_rng(seed, 0);
    Ok((0..reps)
        .map(|_| {
            psi.iter()
                .zip(theta)
                .map(|(&w, &t)| {
                    let z: f64 = rng.sample(StandardNormal);
                    w * (t + z).powi(2)
                })
                .sum()
        })
        .collect())
}

/// Direction `δ` of a local alternative at sample size `n` and dimension `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalAlternative {
    pub delta: DVector<f64>,
    pub n: usize,
    pub p: usize,
}

/// `μ = n^{-1/2} p^{1/4} δ`.
pub fn local_alternative_mean(alt: &LocalAlternative) -> DVector<f64> {
    let scale = (alt.n.max(1) as f64).powf(-0.5) * (alt.p.max(1) as f64).powf(0.25);
    &alt.delta * scale
}

/// Fixed direction `δ_i ~ U(-1, 1)` drawn from [`DELTA_SEED`].
pub fn default_delta(p: usize) -> DVector<f64> {
    let mut rng = stream_rng(DELTA_SEED, 0);
    let u = Uniform::new(-1.0, 1.0).expect("valid range");
    DVector::from_fn(p, |_, _| rng.sample(u))
}

/// `Φ(-z_α + shift / √(2d))`.
pub fn normal_shift_power(shift: f64, d: f64, alpha: f64) -> Result<f64> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::InvalidInput(format!("d must be positive, got {d}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if shift == 0.0 {
        // Φ(Φ⁻¹(α)) round-trips only to a few ulp
        return Ok(alpha);
    }
    // -z_α = Φ⁻¹(α)
    Ok(std_normal().cdf(normal_quantile(alpha) + shift / (2.0 * d).sqrt()))
}

/// Local power `Φ(-z_α + (2d)^{-1/2} Σ ψ_i β_i²)` of the decomposite test.
pub fn asymptotic_power(model: &AsymptoticModel) -> Result<f64> {
    normal_shift_power(model.shift(), model.d, model.alpha)
}

/// Local power `Φ(-z_α + (2d₁)^{-1/2} δ' Σ_{O^K}^{-1} δ)` of the composite test.
pub fn composite_power(delta_quadform: f64, d1: f64, alpha: f64) -> Result<f64> {
    if delta_quadform < 0.0 {
        return Err(Error::InvalidInput(format!(
            "quadratic form must be nonnegative, got {delta_quadform}"
        )));
    }
    normal_shift_power(delta_quadform, d1, alpha)
}

/// Ratio of normal shifts `(q/√(2d)) / (q₁/√(2d₁))`; arguments are `(q, d)` pairs.
pub fn are(decomposite: (f64, f64), composite: (f64, f64)) -> Result<f64> {
    let (q, d) = decomposite;
    let (q1, d1) = composite;
    if !(d > 0.0 && d1 > 0.0) {
        return Err(Error::InvalidInput("d and d1 must be positive".into()));
    }
    let denom = q1 / (2.0 * d1).sqrt();
    if denom == 0.0 {
        return Err(Error::ZeroDenominator(0));
    }
    Ok((q / (2.0 * d).sqrt()) / denom)
}

/// Block-diagonal inverse `Σ_{O^K}^{-1}` over the contiguous composite blocks
/// and `d₁ = tr(Γ_K²) / p` with `Γ_K = Σ^{1/2} Σ_{O^K}^{-1} Σ^{1/2}`.
pub fn composite_design(sigma: &CovarianceMatrix, k: usize) -> Result<(DMatrix<f64>, f64)> {
    let p = sigma.dim();
    let mut inv = DMatrix::zeros(p, p);
    for (start, len) in composite_blocks(p, k)? {
        let b = sigma.block(start, len).inverse()?;
        inv.view_mut((start, start), (len, len)).copy_from(b.as_matrix());
    }
    // tr(Γ_K²) = tr((Σ_{O^K}^{-1} Σ)²)
    let m = &inv * sigma.as_matrix();
    let tr = m.component_mul(&m.transpose()).sum();
    Ok((inv, tr / p as f64))
}

/// Analytic decomposite-versus-composite comparison at a fixed `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreBreakdown {
    /// `δ' Σ₁^{-1} δ`.
    pub decomposite_quadform: f64,
    pub d: f64,
    /// `δ' Σ_{O^K}^{-1} δ`.
    pub composite_quadform: f64,
    pub d1: f64,
    pub are: f64,
    pub decomposite_power: f64,
    pub composite_power: f64,
}

/// ARE of the decomposite test against the `K`-block composite test.
///
/// `Σ₁ = V diag(γ*) V'` shares the eigenvectors of `Σ`; `gamma_star` is the
/// limiting shrunk covariance spectrum aligned with the ascending eigenvalues
/// of `Σ` (see [`mean_shrunk_spectrum`]).
pub fn are_breakdown(
    sigma: &CovarianceMatrix,
    gamma_star: &DVector<f64>,
    delta: &DVector<f64>,
    k: usize,
    alpha: f64,
) -> Result<AreBreakdown> {
    let model = AsymptoticModel::shared_eigenvectors(sigma, gamma_star, delta, alpha)?;
    let (inv, d1) = composite_design(sigma, k)?;
    let q1 = delta.dot(&(&inv * delta));
    let q = model.shift();
    Ok(AreBreakdown {
        decomposite_quadform: q,
        d: model.d,
        composite_quadform: q1,
        d1,
        are: are((q, model.d), (q1, d1))?,
        decomposite_power: asymptotic_power(&model)?,
        composite_power: composite_power(q1, d1, alpha)?,
    })
}

/// Componentwise mean of the Ledoit–Wolf covariance-scale spectra `1/ψ̂`
/// recorded by decomposite outcomes.
pub fn mean_shrunk_spectrum<'a>(outcomes: impl IntoIterator<Item = &'a TestOutcome>) -> Option<DVector<f64>> {
    let mut acc: Option<DVector<f64>> = None;
    let mut count = 0usize;
    for o in outcomes {
        let Some(psi) = o.metadata.spectrum.as_ref() else { continue };
        let phi = DVector::from_iterator(psi.len(), psi.iter().map(|w| 1.0 / w));
        match acc.as_mut() {
            Some(a) if a.len() == phi.len() => *a += phi,
            Some(_) => return None,
            None => acc = Some(phi),
        }
        count += 1;
    }
    acc.map(|a| a / count as f64)
}

/// Monte-Carlo power study at an AR(1) covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerConfig {
    pub p: usize,
    pub n: usize,
    pub rho: f64,
    pub alpha: f64,
    pub reps: usize,
    /// Block count of the composite test and of the reported ARE.
    pub k: usize,
    pub methods: Vec<TestMethod>,
    pub seed: u64,
    /// Local direction; [`default_delta`] when `None`.
    pub delta: Option<DVector<f64>>,
}

impl PowerConfig {
    pub fn new(p: usize, n: usize, rho: f64, seed: u64) -> Self {
        Self {
            p,
            n,
            rho,
            alpha: 0.05,
            reps: 1000,
            k: 2,
            methods: vec![TestMethod::Decomposite, TestMethod::Composite(2)],
            seed,
            delta: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.p == 0 || self.p >= self.n {
            return Err(Error::DimensionTooLarge { p: self.p, n: self.n });
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if self.reps == 0 {
            return Err(Error::InvalidInput("reps must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidInput("no methods requested".into()));
        }
        if let Some(d) = &self.delta {
            check_lengths(self.p, d.len())?;
        }
        Ok(())
    }
}

/// Size-calibrated rejection rate of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub method: String,
    pub rho: f64,
    pub p: usize,
    pub n: usize,
    pub rejection_rate: f64,
    /// `√(r (1 - r) / reps)`.
    pub std_err: f64,
    /// Empirical `(1 - α)` null quantile used as the critical value.
    pub critical_value: f64,
    /// Analytic ARE against the composite test; `1` for the composite row and
    /// absent for methods without a closed-form local power.
    pub are_vs_composite: Option<f64>,
}

#[derive(Clone, Copy)]
enum Phase {
    Alternative = 0,
    Null = 1,
}

/// Stream of replicate `rep` of `method` in `phase`; independent of the order
/// in which methods are listed.
fn replicate_stream(phase: Phase, method: &TestMethod, rep: usize) -> u64 {
    // FNV-1a of the method name
    let tag = method
        .name()
        .bytes()
        .fold(0x811c_9dc5u32, |h, b| (h ^ b as u32).wrapping_mul(0x0100_0193));
    ((phase as u64) << 63) | ((tag as u64 & 0x7fff_ffff) << 32) | rep as u64
}

/// Ranking score of an outcome: the normalized statistic when the method
/// defines one (a monotone map for Hotelling), else the raw statistic.
fn score(o: &TestOutcome) -> f64 {
    o.normalized.unwrap_or(o.statistic)
}

/// Order-statistic `(1 - α)` quantile: the `⌈(1 - α) R⌉`-th smallest value.
pub fn upper_quantile(values: &[f64], alpha: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = ((1.0 - alpha) * v.len() as f64).ceil() as usize;
    v[idx.clamp(1, v.len()) - 1]
}

fn run_phase(
    cfg: &PowerConfig,
    sampler: &MvnSampler,
    method: &TestMethod,
    phase: Phase,
    kernel: &KernelConfig,
) -> Result<Vec<TestOutcome>> {
    (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(cfg.seed, replicate_stream(phase, method, r));
            let x = sampler.sample(cfg.n, &mut rng);
            method.evaluate(&x, kernel)
        })
        .collect()
}

/// Size-calibrated Monte-Carlo power.
///
/// For each method, `reps` null datasets (mean zero) fix the critical value
/// as their empirical `(1 - α)` quantile; `reps` datasets under
/// `μ = n^{-1/2} p^{1/4} δ` then give the rejection rate. Null and
/// alternative replicates use disjoint streams of `seed`.
pub fn mc_power(cfg: &PowerConfig) -> Result<Vec<PowerEstimate>> {
    cfg.validate()?;
    let sigma = ar1_covariance(cfg.rho, cfg.p)?;
    let delta = cfg.delta.clone().unwrap_or_else(|| default_delta(cfg.p));
    let mu = local_alternative_mean(&LocalAlternative { delta: delta.clone(), n: cfg.n, p: cfg.p });
    let null_sampler = MvnSampler::new(DVector::zeros(cfg.p), &sigma)?;
    let alt_sampler = MvnSampler::new(mu, &sigma)?;
    let kernel = KernelConfig::for_sample_size(cfg.n);

    let mut rows = Vec::with_capacity(cfg.methods.len());
    let mut shrunk: Option<DVector<f64>> = None;
    for method in &cfg.methods {
        let null = run_phase(cfg, &null_sampler, method, Phase::Null, &kernel)?;
        let alt = run_phase(cfg, &alt_sampler, method, Phase::Alternative, &kernel)?;
        let crit = upper_quantile(&null.iter().map(score).collect::<Vec<_>>(), cfg.alpha);
        let rejected = alt.iter().filter(|o| score(o) > crit).count();
        let r = rejected as f64 / cfg.reps as f64;
        if *method == TestMethod::Decomposite {
            shrunk = mean_shrunk_spectrum(null.iter().chain(alt.iter()));
        }
        rows.push(PowerEstimate {
            method: method.name(),
            rho: cfg.rho,
            p: cfg.p,
            n: cfg.n,
            rejection_rate: r,
            std_err: (r * (1.0 - r) / cfg.reps as f64).sqrt(),
            critical_value: crit,
            are_vs_composite: None,
        });
    }

    for (row, method) in rows.iter_mut().zip(&cfg.methods) {
        row.are_vs_composite = match method {
            TestMethod::Composite(k) if *k == cfg.k => Some(1.0),
            TestMethod::Decomposite => match &shrunk {
                // undefined when δ' Σ_{O^K}^{-1} δ = 0
                Some(g) => match are_breakdown(&sigma, g, &delta, cfg.k, cfg.alpha) {
                    Ok(b) => Some(b.are),
                    Err(Error::ZeroDenominator(_)) => None,
                    Err(e) => return Err(e),
                },
                None => None,
            },
            _ => None,
        };
    }
    Ok(rows)
}
