//! Estimation of optimal individualized treatment regimes from
//! right-censored survival data when treatment-outcome confounding is
//! only partially observed and a binary instrument is available.
//!
//! The toolkit provides:
//!
//! - instrument-weighted and doubly robust Kaplan-Meier-type estimators
//!   of the potential survival probability under a linear regime, in
//!   indicator and kernel-smoothed form, plus the instrument-free
//!   comparators;
//! - nuisance fitting (logistic instrument/treatment models, Cox
//!   conditional hazards, marginal or conditional censoring survival);
//! - a real-coded genetic algorithm maximizing a value objective over
//!   the unit sphere of regime coefficients;
//! - synthetic cohort generators with latent potential outcomes, a
//!   replication benchmark harness, and bootstrap confidence intervals
//!   for value differences;
//! - a CLI (`ivregime`) covering simulation, estimation on CSV cohorts,
//!   and benchmark reproduction.

pub mod data;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod io;
mod linalg;
pub mod nuisance;
pub mod optimizer;
pub mod seed;
pub mod simgen;
pub mod smoothing;
pub mod survival;

pub use data::{Dataset, Regime, Subject};
pub use error::{Error, Result};

/// Toolkit version embedded in every results document.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
