//! Simulation, normalization, and verification toolkit for multivariate
//! long-range dependent (LRD) processes.
//!
//! The crate builds the two process classes of the underlying theory — the
//! two-sided matrix linear model with power-law coefficients and the
//! componentwise-independent Gaussian model — computes their exact and
//! asymptotic matrix normalizations, and verifies the four limit theorems
//! (CLT, functional CLT with operator fractional Brownian motion limits,
//! Hermite subordination, and the sample-autocovariance dichotomy) by Monte
//! Carlo at desk scale.
//!
//! Module map:
//! - [`matalg`]: small dense-matrix kernel (powers, inverse square roots,
//!   triangular factors).
//! - [`model`]: process specs, LRD coefficients, autocovariances, the
//!   limiting `R` matrix, admissibility checks.
//! - [`simulate`]: innovation panels, FFT-convolution linear paths, exact
//!   Gaussian sampling, partial sums.
//! - [`normalize`]: `Sigma_n^{-1}`, the triangular `A(n)^{-1}` family, and
//!   the operator `B^{-1}(n)`.
//! - [`hermite`]: univariate/multivariate Hermite machinery and expansions.
//! - [`limits`]: limit-law descriptors (OFBM cross-covariance, the kernel
//!   `f`, the constant `beta`).
//! - [`estimators`]: sample autocovariances, Isserlis moments, normalized
//!   deviations.
//! - [`montecarlo`]: replication engine and the four verification
//!   experiments.
//! - [`config`] / [`report`]: experiment configuration files and
//!   deterministic JSON/CSV reports.

pub mod config;
pub mod error;
pub mod estimators;
pub mod hermite;
pub mod limits;
pub mod matalg;
pub mod model;
pub mod montecarlo;
pub mod normalize;
pub mod report;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};

/// Library version, embedded in reports for provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
