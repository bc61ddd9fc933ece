//! Pricing under quadratic local stochastic volatility.
//!
//! The local volatility `sigma(F) = alpha/2 F^2 + beta F + gamma` is combined
//! with a CIR variance factor. A Liouville change of variables maps every
//! admissible quadratic onto one of four canonical classes, after which a
//! single two-factor PDE covers all of them. On top of that reduced PDE the
//! crate provides operator-split finite differences, a sine-basis Galerkin
//! solver, a perturbative expansion in the correlation, semi-analytic
//! references and a Monte Carlo cross-check.

pub mod error;
pub mod special;
pub mod quad;
pub mod interp;

pub mod model;
pub mod discretize;
pub mod steppers;
pub mod galerkin;
pub mod rho_expansion;
pub mod analytic;
pub mod montecarlo;
pub mod brownian2d;
pub mod harness;

pub use error::{QlsvError, Result};
