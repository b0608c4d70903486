//! Plug-in bandwidth rule and the smoothed regime indicator
//! `Phi(index / h)` used to make the jagged value estimators continuous
//! in `eta`.

use crate::data::{Dataset, Regime};
use crate::error::{Error, Result};

/// Smallest admissible index standard deviation; keeps the bandwidth
/// positive when a candidate direction is (numerically) degenerate.
const SD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth(pub f64);

/// Plug-in rule `h = 4^(1/3) n^(-1/3) sd`, with `sd` floored at `1e-8`.
pub fn bandwidth(n: usize, sd_eta_index: f64) -> Result<Bandwidth> {
    if n < 2 {
        return Err(Error::invalid("bandwidth needs n >= 2"));
    }
    if !(sd_eta_index >= 0.0) {
        return Err(Error::invalid("index standard deviation must be nonnegative"));
    }
    let c0 = 4.0_f64.cbrt();
    let h = c0 * (n as f64).powf(-1.0 / 3.0) * sd_eta_index.max(SD_FLOOR);
    Ok(Bandwidth(h))
}

/// Standard normal CDF via `erf`; absolute error below 1e-15 over the
/// whole real line (libm's erf is sub-ulp).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Smoothed treatment indicator `Phi((1, L) . eta / h)`.
pub fn smooth_indicator(regime: &Regime, covariates: &[f64], h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::invalid("bandwidth must be positive"));
    }
    Ok(normal_cdf(regime.index(covariates)? / h))
}

/// Sample standard deviation (divisor `n - 1`) of the regime index over
/// the dataset. Recomputed per candidate `eta` during optimization, since
/// the bandwidth rule is defined through the eta-dependent index.
pub fn index_sd(dataset: &Dataset, regime: &Regime) -> Result<f64> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::invalid("index_sd needs at least two subjects"));
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for s in dataset.subjects() {
        let v = regime.index(&s.covariates)?;
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n as f64;
    let var = (sum_sq - n as f64 * mean * mean) / (n as f64 - 1.0);
    Ok(var.max(0.0).sqrt())
}

/// Bandwidth from the plug-in rule evaluated on a dataset.
pub fn plug_in_bandwidth(dataset: &Dataset, regime: &Regime) -> Result<Bandwidth> {
    bandwidth(dataset.len(), index_sd(dataset, regime)?)
}
