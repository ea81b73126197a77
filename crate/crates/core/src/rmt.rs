//! Stieltjes and Hilbert transform machinery for sample spectra.
//!
//! Conventions: for a spectral distribution `F` and real `x`, the boundary
//! value of the Stieltjes transform is `m(x) = Re + i Im` with
//! `Re = PV ∫ dF(t) / (t - x)` and `Im = π f(x)`.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Complex transform values.
pub type ComplexValue = Complex64;

/// Half-width of the Epanechnikov kernel support when scaled to unit variance.
const EPAN_HALF_WIDTH: f64 = 2.236_067_977_499_79; // sqrt(5)

/// `m_{F_n}(z) = (1/p) Σ 1 / (λ_i - z)`.
///
/// For real `z` this is the real-line quantity whose limit is only the real
/// part of the boundary transform; the imaginary part is identically zero.
pub fn empirical_stieltjes(eigenvalues: &[f64], z: ComplexValue) -> Result<ComplexValue> {
    if eigenvalues.is_empty() {
        return Err(Error::InvalidInput("empty spectrum".into()));
    }
    if z.im == 0.0 {
        if let Some(&hit) = eigenvalues.iter().find(|&&l| l == z.re) {
            return Err(Error::OnSpectrum(hit));
        }
    }
    let sum: ComplexValue = eigenvalues
        .iter()
        .map(|&l| (ComplexValue::new(l, 0.0) - z).inv())
        .sum();
    Ok(sum / eigenvalues.len() as f64)
}

/// Marčenko–Pastur law for concentration `c` (population covariance `I`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpModel {
    pub c: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Support edges `(1 ∓ √c)²`.
pub fn mp_edges(c: f64) -> Result<MpModel> {
    if !(0.0..1.0).contains(&c) {
        return Err(Error::InvalidInput(format!("concentration must lie in [0, 1), got {c}")));
    }
    let s = c.sqrt();
    Ok(MpModel {
        c,
        lower: (1.0 - s).powi(2),
        upper: (1.0 + s).powi(2),
    })
}

impl MpModel {
    pub fn contains(&self, x: f64) -> bool {
        (self.lower..=self.upper).contains(&x)
    }
}

/// Closed-form boundary transform `((1-c-x) + i√((ξ₊-x)(x-ξ₋))) / (2cx)` on
/// the support.
pub fn mp_stieltjes(x: f64, model: &MpModel) -> Result<ComplexValue> {
    if model.c == 0.0 {
        return Err(Error::InvalidInput("closed form needs c > 0".into()));
    }
    if x == 0.0 || !model.contains(x) {
        return Err(Error::OutsideSupport {
            x,
            lower: model.lower,
            upper: model.upper,
        });
    }
    let denom = 2.0 * model.c * x;
    let disc = ((model.upper - x) * (x - model.lower)).max(0.0);
    Ok(ComplexValue::new(
        (1.0 - model.c - x) / denom,
        disc.sqrt() / denom,
    ))
}

/// Marčenko–Pastur density `Im[m(x)] / π`, zero off the support.
pub fn mp_density(x: f64, model: &MpModel) -> f64 {
    if model.c == 0.0 || x <= 0.0 || !model.contains(x) {
        return 0.0;
    }
    mp_stieltjes(x, model).map_or(0.0, |m| m.im / std::f64::consts::PI)
}

/// `Re[m(x)]` for any `x > 0`, inside or outside the support.
///
/// Off the support the transform is real and equals the root of
/// `cx m² - (1-c-x) m + 1 = 0` with the smaller magnitude.
pub fn mp_real_part(x: f64, model: &MpModel) -> Result<f64> {
    if x <= 0.0 {
        return Err(Error::InvalidInput(format!("x must be positive, got {x}")));
    }
    let b = 1.0 - model.c - x;
    if model.c > 0.0 && model.contains(x) {
        return Ok(b / (2.0 * model.c * x));
    }
    let disc = (b * b - 4.0 * model.c * x).max(0.0);
    Ok(2.0 / (b + b.signum() * disc.sqrt()))
}

/// Global bandwidth of the kernel transform estimator.
///
/// Each sample eigenvalue `λ_j` gets the local bandwidth `h λ_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub bandwidth: f64,
}

impl KernelConfig {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidInput(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { bandwidth })
    }

    /// Default bandwidth `n^{-1/3}`.
    pub fn for_sample_size(n: usize) -> Self {
        Self {
            bandwidth: (n.max(1) as f64).powf(-1.0 / 3.0),
        }
    }
}

/// Unit-variance Epanechnikov kernel, supported on `[-√5, √5]`.
pub fn epanechnikov(u: f64) -> f64 {
    let t = 1.0 - u * u / 5.0;
    if t > 0.0 {
        0.75 / EPAN_HALF_WIDTH * t
    } else {
        0.0
    }
}

/// `PV ∫ K(t) / (t - u) dt` for the Epanechnikov kernel.
pub fn epanechnikov_hilbert(u: f64) -> f64 {
    let t = 1.0 - u * u / 5.0;
    let log_term = if t == 0.0 {
        0.0
    } else {
        ((EPAN_HALF_WIDTH - u) / (EPAN_HALF_WIDTH + u)).abs().ln()
    };
    0.75 / EPAN_HALF_WIDTH * t * log_term - 0.3 * u
}

/// Kernel-smoothed estimate of the boundary transform at `x`.
///
/// The spectrum is smoothed with Epanechnikov kernels of width `h λ_j`;
/// the imaginary part is `π` times the resulting density and the real part
/// is the exact Hilbert transform of that density.
pub fn kernel_stieltjes_estimate(
    eigenvalues: &[f64],
    cfg: &KernelConfig,
    x: f64,
) -> Result<ComplexValue> {
    if eigenvalues.is_empty() {
        return Err(Error::InvalidInput("empty spectrum".into()));
    }
    if let Some(bad) = eigenvalues.iter().find(|l| !(**l > 0.0)) {
        return Err(Error::InvalidInput(format!("eigenvalues must be positive, got {bad}")));
    }
    Ok(kernel_transform_unchecked(eigenvalues, cfg.bandwidth, x))
}

pub(crate) fn kernel_transform_unchecked(eigenvalues: &[f64], h: f64, x: f64) -> ComplexValue {
    let (mut re, mut im) = (0.0, 0.0);
    for &l in eigenvalues {
        let hj = h * l;
        let u = (x - l) / hj;
        re += epanechnikov_hilbert(u) / hj;
        im += epanechnikov(u) / hj;
    }
    let p = eigenvalues.len() as f64;
    ComplexValue::new(re / p, std::f64::consts::PI * im / p)
}
