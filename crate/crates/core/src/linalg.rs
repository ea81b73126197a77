//! Dense symmetric linear algebra, sample moments, structured covariances
//! and seeded Gaussian sampling.
//!
//! Everything downstream works on two newtypes: [`DataMatrix`] (rows are
//! observations) and [`CovarianceMatrix`] (square, symmetric). Eigenvalues
//! are always reported in ascending order.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative asymmetry tolerated before a matrix is rejected as non-symmetric.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// An `n x p` sample with one observation per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix(DMatrix<f64>);

impl DataMatrix {
    /// Wraps a matrix, rejecting empty shapes and non-finite entries.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::InvalidInput("data matrix must be non-empty".into()));
        }
        for (col, column) in m.column_iter().enumerate() {
            if let Some(row) = column.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row, col });
            }
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(Error::InvalidInput(format!(
                "row {i} has {} columns, expected {p}",
                r.len()
            )));
        }
        Self::new(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Rows selected by index, repeats allowed (bootstrap resampling).
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self(self.0.select_rows(idx))
    }

    /// Contiguous column block `[start, start + len)`.
    pub fn column_block(&self, start: usize, len: usize) -> Self {
        Self(self.0.columns(start, len).into_owned())
    }

    /// Subtracts `shift` from every row.
    pub fn shifted(&self, shift: &DVector<f64>) -> Result<Self> {
        if shift.len() != self.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.ncols(),
                got: shift.len(),
            });
        }
        let mut m = self.0.clone();
        for mut row in m.row_iter_mut() {
            row -= shift.transpose();
        }
        Ok(Self(m))
    }

    /// Right-multiplies the data by `a` (a linear change of variables).
    pub fn transformed(&self, a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != self.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.ncols(),
                got: a.nrows(),
            });
        }
        Self::new(&self.0 * a)
    }

    pub fn column_means(&self) -> DVector<f64> {
        self.0.row_mean().transpose()
    }
}

/// A symmetric `p x p` matrix playing the role of a covariance or precision.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix(DMatrix<f64>);

impl CovarianceMatrix {
    /// Wraps a square matrix, checking symmetry to [`SYMMETRY_TOL`] and
    /// symmetrizing away the residual rounding.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("covariance has non-finite entries".into()));
        }
        let asym = relative_asymmetry(&m);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(Self(sym))
    }

    pub fn identity(p: usize) -> Self {
        Self(DMatrix::identity(p, p))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.0.diagonal()
    }

    /// Inverse through a Cholesky factorization.
    pub fn inverse(&self) -> Result<Self> {
        let chol = Cholesky::new(self.0.clone()).ok_or(Error::Singular)?;
        Self::new(symmetrize(chol.inverse()))
    }

    /// `x' M x`.
    pub fn quadratic_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.0 * x))
    }

    /// Principal sub-matrix on the contiguous index range `[start, start + len)`.
    pub fn block(&self, start: usize, len: usize) -> Self {
        Self(self.0.view((start, start), (len, len)).into_owned())
    }
}

fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    (m - m.transpose()).amax() / scale
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Eigen-decomposition `M = U diag(values) U'` with ascending eigenvalues.
///
/// Each eigenvector is signed so that its first non-negligible component is
/// nonnegative, making decompositions reproducible across runs.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `U diag(values) U'` for an arbitrary spectrum on the same eigenvectors.
    pub fn with_spectrum(&self, values: &DVector<f64>) -> DMatrix<f64> {
        let u = &self.eigenvectors;
        let mut scaled = u.clone();
        for (mut col, v) in scaled.column_iter_mut().zip(values.iter()) {
            col *= *v;
        }
        symmetrize(scaled * u.transpose())
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.with_spectrum(&self.eigenvalues)
    }

    /// `sum_i values_i (u_i' x)^2`, i.e. `x' U diag(values) U' x` without
    /// forming the matrix.
    pub fn quadratic_form(&self, values: &DVector<f64>, x: &DVector<f64>) -> f64 {
        let coords = self.eigenvectors.tr_mul(x);
        coords
            .iter()
            .zip(values.iter())
            .map(|(c, v)| v * c * c)
            .sum()
    }
}

/// Column mean and unbiased (divisor `n - 1`) sample covariance.
pub fn sample_moments(x: &DataMatrix) -> Result<(DVector<f64>, CovarianceMatrix)> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: n });
    }
    let mean = x.column_means();
    let centered = x.shifted(&mean)?.into_inner();
    let cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
    Ok((mean, CovarianceMatrix(symmetrize(cov))))
}

/// Symmetric eigen-decomposition, eigenvalues ascending.
pub fn spectral_decompose(m: &CovarianceMatrix) -> Result<SpectralDecomposition> {
    let p = m.dim();
    let eig = SymmetricEigen::try_new(m.as_matrix().clone(), f64::EPSILON, 100 * p.max(10))
        .ok_or(Error::NoConvergence)?;

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let eigenvalues = DVector::from_iterator(p, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let tiny = 1e-12 * col.amax();
        if let Some(first) = col.iter().find(|v| v.abs() > tiny) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        eigenvectors.set_column(dst, &col);
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// AR(1) covariance `sigma_ij = rho^|i-j|`.
pub fn ar1_covariance(rho: f64, p: usize) -> Result<CovarianceMatrix> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidInput(format!("|rho| must be < 1, got {rho}")));
    }
    if p == 0 {
        return Err(Error::InvalidInput("dimension must be at least 1".into()));
    }
    let m = DMatrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32));
    Ok(CovarianceMatrix(m))
}

/// Deterministic random stream `stream` derived from a master seed.
///
/// The master seed initializes a ChaCha8 generator and `stream` selects one
/// of its 2^64 independent streams, so replicate `r` of a Monte-Carlo run can
/// be reproduced in isolation and in any order.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Gaussian sampler with a cached Cholesky factor of the covariance.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    mean: DVector<f64>,
    chol_lower: DMatrix<f64>,
}

impl MvnSampler {
    pub fn new(mean: DVector<f64>, sigma: &CovarianceMatrix) -> Result<Self> {
        if mean.len() != sigma.dim() {
            return Err(Error::DimensionMismatch {
                expected: sigma.dim(),
                got: mean.len(),
            });
        }
        let chol = Cholesky::new(sigma.as_matrix().clone()).ok_or(Error::NotPositiveDefinite)?;
        Ok(Self {
            mean,
            chol_lower: chol.unpack(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn set_mean(&mut self, mean: DVector<f64>) -> Result<()> {
        if mean.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: mean.len(),
            });
        }
        self.mean = mean;
        Ok(())
    }

    /// Draws `n` rows `mean + L z` with `z ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DataMatrix {
        let p = self.dim();
        let z = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut x = z * self.chol_lower.transpose();
        for mut row in x.row_iter_mut() {
            row += self.mean.transpose();
        }
        DataMatrix(x)
    }
}

/// `n` i.i.d. draws from `N(mu, sigma)`, reproducible for a fixed seed.
pub fn sample_mvn(
    mu: &DVector<f64>,
    sigma: &CovarianceMatrix,
    n: usize,
    seed: u64,
) -> Result<DataMatrix> {
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be at least 1".into()));
    }
    let sampler = MvnSampler::new(mu.clone(), sigma)?;
    Ok(sampler.sample(n, &mut stream_rng(seed, 0)))
}
