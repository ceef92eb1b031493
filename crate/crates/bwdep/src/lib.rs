//! Bures-Wasserstein dependence between groups of variables under a Gaussian
//! copula.
//!
//! The crate estimates and analyzes the normalized dependence coefficients
//! `D1` and `D2` between `k` groups of continuous variables, where dependence
//! is measured through the Bures-Wasserstein distance between correlation
//! matrices. It covers:
//!
//! - spectral primitives and the maximal-dependence matrix construction
//!   ([`linalg`], [`structure`]),
//! - the coefficients themselves plus mutual-information and Hellinger
//!   comparators ([`coefficients`]),
//! - asymptotic standard deviations and confidence intervals for the
//!   plug-in estimator ([`asymptotics`]),
//! - semi-parametric estimation from data via normal scores rank
//!   correlations ([`estimation`]),
//! - ridge, lasso, adaptive-lasso, SCAD, and group-lasso penalized
//!   covariance estimation with cross-validation and BIC tuning
//!   ([`penalties`]),
//! - seeded Monte Carlo experiments ([`montecarlo`]), and
//! - dependence-based hierarchical variable clustering ([`clustering`]).
//!
//! See the `examples/` directory for one runnable example per capability;
//! the `bwdep` binary exposes the same functionality on CSV files.

pub mod asymptotics;
pub mod cli;
pub mod clustering;
pub mod coefficients;
pub mod error;
pub mod estimation;
pub mod linalg;
pub mod montecarlo;
pub mod penalties;
pub mod structure;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use linalg::{bures_sq, majorizes, spd_power, sym_eigen, Spectrum, SymMatrix};
pub use structure::{block_diag_of, build_rm, canonical_sort, CanonicalForm, GroupedCorrelation, Partition};
