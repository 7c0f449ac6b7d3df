//! Design-based estimation of the mean curve of a finite population.
//!
//! Units carry a functional study variable observed on a common time grid,
//! plus auxiliary curves with known population means. The crate provides
//! three weighting estimators of the population mean curve:
//!
//! - the design-weighted (Horvitz-Thompson) estimator
//!   ([`sampling::ht_functional_mean`]),
//! - pointwise chi-square calibration, which solves a weighted regression
//!   at every time point ([`chisq`]),
//! - maximum-entropy calibrated weighting, which smooths a single
//!   adjustment density across time under a Gaussian or compound-Poisson
//!   prior ([`mem`]).
//!
//! A Monte Carlo harness ([`simulation`]) measures the bias-variance
//! decomposition of these estimators on a synthetic population, and a small
//! command line ([`cli`]) exposes simulation, estimation on CSV data, and
//! calibration checking.
//!
//! The `examples/` directory walks through each capability:
//!
//! ```text
//! cargo run --example ht_mean
//! cargo run --example chisq_calibration
//! cargo run --example mem_gaussian
//! cargo run --example mem_poisson
//! cargo run --example simulation_study
//! cargo run --example csv_roundtrip
//! ```

#![forbid(unsafe_code)]

pub mod chisq;
pub mod cli;
pub mod error;
pub mod grid;
pub mod io;
pub mod mem;
pub mod sampling;
pub mod simulation;

mod linalg;
mod quadrature;
mod solver;

pub use error::{Error, Result};
