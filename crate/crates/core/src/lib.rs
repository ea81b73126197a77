//! High-dimensional one-sample mean tests built on orthogonally equivariant
//! shrinkage of the precision matrix.
//!
//! The decomposite statistic `T²_N = n X̄' Σ̂⁻¹ X̄` replaces the inverse sample
//! covariance of Hotelling's test by a nonlinear-shrinkage precision estimate
//! that keeps the sample eigenvectors and re-estimates the eigenvalues with a
//! kernel plug-in of the Marčenko–Pastur Stieltjes transform.
//!
//! * [`linalg`]: data and covariance types, eigen-decomposition, seeded sampling.
//! * [`rmt`]: Stieltjes transforms, the Marčenko–Pastur law, the kernel estimator.
//! * [`shrinkage`]: Stein and Ledoit–Wolf shrinkers and precision estimates.
//! * [`mean_tests`]: Hotelling, decomposite, composite and fixed-weight statistics.
//! * [`power`]: local asymptotic power, ARE, Monte-Carlo power.
//! * [`bootstrap`]: resampling p-values.
//! * [`io`], [`cli`]: CSV plumbing and the `eqshrink` command line.

pub mod bootstrap;
pub mod cli;
pub mod error;
pub mod io;
pub mod linalg;
pub mod mean_tests;
pub mod power;
pub mod rmt;
pub mod shrinkage;

pub use error::{Error, Result};
