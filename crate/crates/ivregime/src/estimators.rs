//! Value estimators for a candidate regime: the instrument-weighted
//! Kaplan-Meier estimator (IWKME-IV), its doubly robust augmentation
//! (DRKME-IV), and the instrument-free comparators (SIWKME, SAIWKME),
//! each in indicator or kernel-smoothed form, plus the alternative value
//! functionals (restricted mean, quantile, cost-penalized).
//!
//! The instrumented weight for subject `i` at grid time `s` is
//!
//! ```text
//! w_i(s) = (2Z_i - 1)(2A_i - 1) I{A_i = d(L_i)}
//!          / [ delta(L_i) f(Z_i|L_i) S_C(s | Z_i, L_i, d(L_i)) ]
//! ```
//!
//! and the value estimate is the product over event times of
//! `1 - sum_i w_i dN_i(s) / sum_i w_i Y_i(s)`. The doubly robust variant
//! augments `w dN` and `w Y` with hazard-increment and at-risk
//! projections of a fitted Cox model at both instrument levels. Under a
//! marginal censoring model the `S_C` factor is common across subjects
//! at fixed `s`, so for the purely weighted estimators it cancels in the
//! ratio and is dropped.
//!
//! Smoothing replaces every functional occurrence of the decision
//! `d(L)` by its convex mixture over `a in {0, 1}` with weights
//! `(Phi(index/h), 1 - Phi(index/h))`. The indicator path runs through
//! the same code with `Phi` hardened to 0/1, so the smoothed estimator
//! degenerates to the indicator one exactly as `h -> 0`.
//!
//! Construction precomputes every nuisance evaluation the optimizer
//! needs across thousands of candidate regimes: per-subject model
//! predictions, Cox risk scores and survival factors per grid point, and
//! censoring survival factors.

use crate::data::{Dataset, Regime};
use crate::error::{Error, Result};
use crate::nuisance::{CensoringModel, CoxModel, LogisticModel, NuisanceSet};
use crate::smoothing::normal_cdf;
use crate::survival::{event_grid, ratio_product, ProductLimitDiagnostics};
use serde::{Deserialize, Serialize};

/// Estimator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Instrument-weighted Kaplan-Meier.
    IwkmeIv,
    /// Doubly robust instrument-weighted Kaplan-Meier.
    DrkmeIv,
    /// Inverse propensity weighted Kaplan-Meier (no instrument).
    Siwkme,
    /// Augmented inverse propensity weighted Kaplan-Meier (no instrument).
    Saiwkme,
}

/// Estimator family plus smoothing flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EstimatorKind {
    pub method: Method,
    pub smoothed: bool,
}

impl EstimatorKind {
    pub const fn new(method: Method, smoothed: bool) -> Self {
        EstimatorKind { method, smoothed }
    }

    /// Conventional label; the smoothed variants carry the `S` prefix.
    pub fn label(&self) -> &'static str {
        match (self.method, self.smoothed) {
            (Method::IwkmeIv, false) => "IWKME-IV",
            (Method::IwkmeIv, true) => "SIWKME-IV",
            (Method::DrkmeIv, false) => "DRKME-IV",
            (Method::DrkmeIv, true) => "SDRKME-IV",
            (Method::Siwkme, false) => "IWKME",
            (Method::Siwkme, true) => "SIWKME",
            (Method::Saiwkme, false) => "AIWKME",
            (Method::Saiwkme, true) => "SAIWKME",
        }
    }

    pub fn requires_outcome_model(&self) -> bool {
        matches!(self.method, Method::DrkmeIv | Method::Saiwkme)
    }

    pub fn uses_instrument(&self) -> bool {
        matches!(self.method, Method::IwkmeIv | Method::DrkmeIv)
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let k = match s.to_ascii_lowercase().as_str() {
            "iwkme-iv" => EstimatorKind::new(Method::IwkmeIv, false),
            "siwkme-iv" => EstimatorKind::new(Method::IwkmeIv, true),
            "drkme-iv" => EstimatorKind::new(Method::DrkmeIv, false),
            "sdrkme-iv" => EstimatorKind::new(Method::DrkmeIv, true),
            "iwkme" => EstimatorKind::new(Method::Siwkme, false),
            "siwkme" => EstimatorKind::new(Method::Siwkme, true),
            "aiwkme" => EstimatorKind::new(Method::Saiwkme, false),
            "saiwkme" => EstimatorKind::new(Method::Saiwkme, true),
            other => {
                return Err(Error::invalid(format!(
                    "unknown estimator `{other}`; expected one of iwkme-iv, siwkme-iv, \
                     drkme-iv, sdrkme-iv, iwkme, siwkme, aiwkme, saiwkme"
                )))
            }
        };
        Ok(k)
    }
}

impl Serialize for EstimatorKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for EstimatorKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Diagnostics surfaced with every value estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub negative_increments: u32,
    pub capped_increments: u32,
    pub skipped_factors: u32,
    pub final_clamped: bool,
    /// `(sum |w|)^2 / sum w^2` of the inverse-probability part of the
    /// subject weights.
    pub effective_sample_size: f64,
    pub grid_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueEstimate {
    /// Estimated potential survival probability, in `[0, 1]`.
    pub value: f64,
    pub diagnostics: Diagnostics,
}

/// Estimated survival trajectory over the event grid (cumulative product
/// after each grid time). Instrument-signed increments can make it
/// locally increasing, so it is not a `StepSurvival`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl ValueCurve {
    /// Curve value at `s` (1 before the first grid time).
    pub fn eval(&self, s: f64) -> f64 {
        match self.times.partition_point(|&t| t <= s) {
            0 => 1.0,
            k => self.values[k - 1],
        }
    }
}

#[derive(Debug, Clone)]
enum CensorCache {
    /// Common marginal factor cancels in the weighted ratio.
    Cancels,
    /// Marginal survival per grid point (left limits, floored).
    Marginal(Vec<f64>),
    /// Conditional survival per `(subject, grid point, treatment arm)`.
    Conditional(Vec<f64>),
}

#[derive(Debug, Clone)]
struct OutcomeCache {
    /// `exp(-Lambda0(s_k-) r)` per `(subject, grid point, arm)`; arms are
    /// `(z, a)` pairs for the instrumented model, `a` alone otherwise.
    st: Vec<f64>,
    /// Risk scores per `(subject, arm)`.
    risk: Vec<f64>,
    /// Baseline jump at each grid point.
    jump: Vec<f64>,
}

/// Reusable estimator state: build once per `(dataset, models, horizon)`,
/// then evaluate any number of candidate regimes.
#[derive(Debug, Clone)]
pub struct Evaluator {
    method: Method,
    augmented: bool,
    p: usize,
    n: usize,
    grid: Vec<f64>,
    time: Vec<f64>,
    treat: Vec<f64>,
    instr: Vec<f64>,
    covs: Vec<f64>, // n * p, row-major
    /// Subject order ascending in time; `first_at_risk[k]` is the first
    /// position in that order still at risk at grid point `k`.
    order: Vec<usize>,
    first_at_risk: Vec<usize>,
    /// CSR lists of subjects with an event at each grid point.
    events_ptr: Vec<usize>,
    events_idx: Vec<usize>,
    /// `1 / (delta(L) f(Z|L))` and the truncated compliance score.
    inv_delta_f: Vec<f64>,
    delta: Vec<f64>,
    /// Treatment-model predictions `pi(A=1 | Z=z, L)`.
    pi_z0: Vec<f64>,
    pi_z1: Vec<f64>,
    /// Propensity `pi(A=1 | L)` for the instrument-free methods.
    propensity: Vec<f64>,
    censor: CensorCache,
    outcome: Option<OutcomeCache>,
}

impl Evaluator {
    fn base(dataset: &Dataset, t: f64, method: Method) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::invalid("horizon t must be positive"));
        }
        let grid = event_grid(dataset, t)?.times().to_vec();
        let n = dataset.len();
        let time: Vec<f64> = dataset.subjects().iter().map(|s| s.time).collect();
        let treat: Vec<f64> = dataset.subjects().iter().map(|s| s.treatment as f64).collect();
        let instr: Vec<f64> = dataset.subjects().iter().map(|s| s.instrument as f64).collect();

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| time[a].total_cmp(&time[b]));
        let sorted_times: Vec<f64> = order.iter().map(|&i| time[i]).collect();
        let first_at_risk: Vec<usize> = grid
            .iter()
            .map(|&s| sorted_times.partition_point(|&u| u < s))
            .collect();

        let mut events_ptr = Vec::with_capacity(grid.len() + 1);
        let mut events_idx = Vec::new();
        events_ptr.push(0);
        for &s in &grid {
            for (i, subj) in dataset.subjects().iter().enumerate() {
                if subj.status == 1 && subj.time == s {
                    events_idx.push(i);
                }
            }
            events_ptr.push(events_idx.len());
        }

        let mut covs = Vec::with_capacity(n * dataset.p());
        for s in dataset.subjects() {
            covs.extend_from_slice(&s.covariates);
        }

        Ok(Evaluator {
            method,
            augmented: true,
            p: dataset.p(),
            n,
            grid,
            time,
            treat,
            instr,
            covs,
            order,
            first_at_risk,
            events_ptr,
            events_idx,
            inv_delta_f: Vec::new(),
            delta: Vec::new(),
            pi_z0: Vec::new(),
            pi_z1: Vec::new(),
            propensity: Vec::new(),
            censor: CensorCache::Cancels,
            outcome: None,
        })
    }

    fn cov_row(&self, i: usize) -> &[f64] {
        &self.covs[i * self.p..(i + 1) * self.p]
    }

    fn cache_instrument_weights(&mut self, nuisance: &NuisanceSet) {
        for i in 0..self.n {
            let l = self.cov_row(i).to_vec();
            let delta = nuisance.delta(&l);
            let f = nuisance.instrument_probability(self.instr[i], &l);
            self.delta.push(delta);
            self.inv_delta_f.push(1.0 / (delta * f));
            self.pi_z0.push(nuisance.treatment_probability(0.0, &l));
            self.pi_z1.push(nuisance.treatment_probability(1.0, &l));
        }
    }

    fn cache_censoring(&mut self, model: &CensoringModel, cancels_when_marginal: bool) {
        let k_len = self.grid.len();
        match model {
            CensoringModel::Marginal(_) if cancels_when_marginal => {
                self.censor = CensorCache::Cancels;
            }
            CensoringModel::Marginal(_) => {
                let v: Vec<f64> = self
                    .grid
                    .iter()
                    .map(|&s| model.survival_left(s, 0.0, &[], 0.0))
                    .collect();
                self.censor = CensorCache::Marginal(v);
            }
            CensoringModel::Conditional(_) => {
                let mut v = vec![0.0; self.n * k_len * 2];
                for i in 0..self.n {
                    let l = self.cov_row(i).to_vec();
                    for (k, &s) in self.grid.iter().enumerate() {
                        for a in 0..2 {
                            v[(i * k_len + k) * 2 + a] =
                                model.survival_left(s, self.instr[i], &l, a as f64);
                        }
                    }
                }
                self.censor = CensorCache::Conditional(v);
            }
        }
    }

    fn cache_outcome(&mut self, cox: &CoxModel, instrumented: bool) {
        let k_len = self.grid.len();
        let arms = if instrumented { 4 } else { 2 };
        let mut risk = vec![0.0; self.n * arms];
        for i in 0..self.n {
            let l = self.cov_row(i).to_vec();
            if instrumented {
                for z in 0..2 {
                    for a in 0..2 {
                        risk[i * 4 + z * 2 + a] = cox.risk_score(z as f64, &l, a as f64);
                    }
                }
            } else {
                for a in 0..2 {
                    risk[i * 2 + a] = cox.risk_score(0.0, &l, a as f64);
                }
            }
        }
        let cum_left: Vec<f64> = self.grid.iter().map(|&s| cox.baseline.cum_left(s)).collect();
        let jump: Vec<f64> = self.grid.iter().map(|&s| cox.baseline.jump_at(s)).collect();
        let mut st = vec![0.0; self.n * k_len * arms];
        for i in 0..self.n {
            for k in 0..k_len {
                for arm in 0..arms {
                    st[(i * k_len + k) * arms + arm] = (-cum_left[k] * risk[i * arms + arm]).exp();
                }
            }
        }
        self.outcome = Some(OutcomeCache { st, risk, jump });
    }

    fn check_logistic_bounds(&self, model: &LogisticModel) -> Result<()> {
        if model.design.covariate_cols.iter().any(|&j| j >= self.p) {
            return Err(Error::invalid(
                "logistic design references a covariate out of range",
            ));
        }
        Ok(())
    }

    fn check_cox_bounds(&self, model: &CoxModel) -> Result<()> {
        if model
            .design
            .covariate_cols
            .iter()
            .chain(&model.design.interaction_cols)
            .any(|&j| j >= self.p)
        {
            return Err(Error::invalid(
                "cox design references a covariate out of range",
            ));
        }
        Ok(())
    }

    /// Instrument-weighted Kaplan-Meier estimator.
    pub fn iwkme_iv(dataset: &Dataset, nuisance: &NuisanceSet, t: f64) -> Result<Self> {
        let mut ev = Self::base(dataset, t, Method::IwkmeIv)?;
        ev.check_logistic_bounds(&nuisance.instrument_model)?;
        ev.check_logistic_bounds(&nuisance.treatment_model)?;
        ev.cache_instrument_weights(nuisance);
        ev.cache_censoring(&nuisance.censoring, true);
        Ok(ev)
    }

    /// Doubly robust instrument-weighted Kaplan-Meier estimator;
    /// requires the Cox outcome model in the nuisance set.
    pub fn drkme_iv(dataset: &Dataset, nuisance: &NuisanceSet, t: f64) -> Result<Self> {
        let cox = nuisance.outcome_model.as_ref().ok_or_else(|| {
            Error::Configuration(
                "the doubly robust estimator needs a fitted Cox outcome model".into(),
            )
        })?;
        if !cox.design.use_instrument {
            return Err(Error::Configuration(
                "the doubly robust estimator needs the instrumented Cox design".into(),
            ));
        }
        let mut ev = Self::base(dataset, t, Method::DrkmeIv)?;
        ev.check_logistic_bounds(&nuisance.instrument_model)?;
        ev.check_logistic_bounds(&nuisance.treatment_model)?;
        ev.check_cox_bounds(cox)?;
        ev.cache_instrument_weights(nuisance);
        ev.cache_censoring(&nuisance.censoring, false);
        ev.cache_outcome(cox, true);
        Ok(ev)
    }

    /// Inverse propensity weighted Kaplan-Meier (no instrument). The
    /// propensity must be fit without the instrument.
    pub fn siwkme(
        dataset: &Dataset,
        propensity: &LogisticModel,
        censoring: &CensoringModel,
        t: f64,
    ) -> Result<Self> {
        if propensity.design.use_instrument {
            return Err(Error::invalid(
                "the propensity comparator must be fit without the instrument",
            ));
        }
        let mut ev = Self::base(dataset, t, Method::Siwkme)?;
        ev.check_logistic_bounds(propensity)?;
        ev.propensity = (0..ev.n)
            .map(|i| propensity.predict(0.0, ev.cov_row(i)))
            .collect();
        ev.cache_censoring(censoring, true);
        Ok(ev)
    }

    /// Augmented inverse propensity weighted Kaplan-Meier (no
    /// instrument): the standard residual `A - pi(1|L)` against Cox
    /// projections of the hazard increments and at-risk indicators on an
    /// instrument-free design.
    pub fn saiwkme(
        dataset: &Dataset,
        propensity: &LogisticModel,
        outcome: &CoxModel,
        censoring: &CensoringModel,
        t: f64,
    ) -> Result<Self> {
        if propensity.design.use_instrument {
            return Err(Error::invalid(
                "the propensity comparator must be fit without the instrument",
            ));
        }
        if outcome.design.use_instrument {
            return Err(Error::Configuration(
                "the augmented comparator needs an instrument-free Cox model".into(),
            ));
        }
        let mut ev = Self::base(dataset, t, Method::Saiwkme)?;
        ev.check_logistic_bounds(propensity)?;
        ev.check_cox_bounds(outcome)?;
        ev.propensity = (0..ev.n)
            .map(|i| propensity.predict(0.0, ev.cov_row(i)))
            .collect();
        ev.cache_censoring(censoring, false);
        ev.cache_outcome(outcome, false);
        Ok(ev)
    }

    /// Build an evaluator for any estimator kind from a full nuisance
    /// set. Instrument-free methods reuse the marginal pieces of the set
    /// together with the provided propensity/outcome models.
    pub fn for_kind(
        dataset: &Dataset,
        kind: EstimatorKind,
        nuisance: &NuisanceSet,
        propensity: Option<&LogisticModel>,
        outcome_free: Option<&CoxModel>,
        t: f64,
    ) -> Result<Self> {
        match kind.method {
            Method::IwkmeIv => Self::iwkme_iv(dataset, nuisance, t),
            Method::DrkmeIv => Self::drkme_iv(dataset, nuisance, t),
            Method::Siwkme => {
                let prop = propensity.ok_or_else(|| {
                    Error::Configuration("the propensity comparator needs a propensity model".into())
                })?;
                Self::siwkme(dataset, prop, &nuisance.censoring, t)
            }
            Method::Saiwkme => {
                let prop = propensity.ok_or_else(|| {
                    Error::Configuration("the propensity comparator needs a propensity model".into())
                })?;
                let cox = outcome_free.ok_or_else(|| {
                    Error::Configuration(
                        "the augmented comparator needs an instrument-free Cox model".into(),
                    )
                })?;
                Self::saiwkme(dataset, prop, cox, &nuisance.censoring, t)
            }
        }
    }

    /// Disable (or re-enable) the augmentation terms of the doubly
    /// robust estimators; with augmentation off they reduce exactly to
    /// their purely weighted counterparts. Diagnostic control.
    pub fn with_augmentation(mut self, on: bool) -> Self {
        self.augmented = on;
        self
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Smoothed treatment mixture weight per subject; hardened to 0/1
    /// without a bandwidth.
    fn phi_vector(&self, regime: &Regime, bandwidth: Option<f64>) -> Result<Vec<f64>> {
        if regime.dim() != self.p + 1 {
            return Err(Error::invalid(format!(
                "regime has dimension {}, dataset needs {}",
                regime.dim(),
                self.p + 1
            )));
        }
        if let Some(h) = bandwidth {
            if !(h > 0.0) {
                return Err(Error::invalid("bandwidth must be positive"));
            }
        }
        let eta = regime.eta();
        let mut phi = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let mut idx = eta[0];
            for (c, e) in self.cov_row(i).iter().zip(&eta[1..]) {
                idx += c * e;
            }
            phi.push(match bandwidth {
                Some(h) => normal_cdf(idx / h),
                None => {
                    if idx >= 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
            });
        }
        Ok(phi)
    }

    fn censor_factor(&self, i: usize, k: usize, phi: f64) -> f64 {
        match &self.censor {
            CensorCache::Cancels => 1.0,
            CensorCache::Marginal(v) => v[k],
            CensorCache::Conditional(v) => {
                let b = (i * self.grid.len() + k) * 2;
                phi * v[b + 1] + (1.0 - phi) * v[b]
            }
        }
    }

    /// Per-subject inverse-probability weight (the time-independent
    /// part) for the purely weighted methods.
    fn subject_weights(&self, phi: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let m = self.treat[i] * phi[i] + (1.0 - self.treat[i]) * (1.0 - phi[i]);
                match self.method {
                    Method::IwkmeIv | Method::DrkmeIv => {
                        (2.0 * self.instr[i] - 1.0)
                            * (2.0 * self.treat[i] - 1.0)
                            * m
                            * self.inv_delta_f[i]
                    }
                    Method::Siwkme | Method::Saiwkme => {
                        let pid =
                            phi[i] * self.propensity[i] + (1.0 - phi[i]) * (1.0 - self.propensity[i]);
                        m / pid
                    }
                }
            })
            .collect()
    }

    /// Numerator and denominator sums at every grid point.
    fn grid_sums(&self, phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self.method {
            Method::IwkmeIv | Method::Siwkme => self.sums_weighted(phi),
            Method::DrkmeIv => self.sums_doubly_robust(phi),
            Method::Saiwkme => self.sums_augmented_propensity(phi),
        }
    }

    fn sums_weighted(&self, phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k_len = self.grid.len();
        let w = self.subject_weights(phi);
        let mut nums = vec![0.0; k_len];
        let mut dens = vec![0.0; k_len];
        if matches!(self.censor, CensorCache::Cancels) {
            // time-independent weights: at-risk sums are suffix sums over
            // the time-sorted order
            let mut suffix = vec![0.0; self.n + 1];
            for j in (0..self.n).rev() {
                suffix[j] = suffix[j + 1] + w[self.order[j]];
            }
            for k in 0..k_len {
                nums[k] = self.events_idx[self.events_ptr[k]..self.events_ptr[k + 1]]
                    .iter()
                    .map(|&i| w[i])
                    .sum();
                dens[k] = suffix[self.first_at_risk[k]];
            }
        } else {
            for k in 0..k_len {
                nums[k] = self.events_idx[self.events_ptr[k]..self.events_ptr[k + 1]]
                    .iter()
                    .map(|&i| w[i] / self.censor_factor(i, k, phi[i]))
                    .sum();
                // iterate only over subjects still at risk, via the
                // time-sorted order
                dens[k] = self.order[self.first_at_risk[k]..]
                    .iter()
                    .map(|&i| w[i] / self.censor_factor(i, k, phi[i]))
                    .sum();
            }
        }
        (nums, dens)
    }

    fn sums_doubly_robust(&self, phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let outcome = self.outcome.as_ref().expect("outcome cache present");
        let k_len = self.grid.len();
        let n = self.n;

        // grid-independent per-subject pieces
        let mut m = vec![0.0; n];
        let mut sgn = vec![0.0; n];
        let mut pid0 = vec![0.0; n];
        let mut pid1 = vec![0.0; n];
        let mut rmix = vec![0.0; n * 2];
        let mut ivw = vec![0.0; n];
        let mut resid_a = vec![0.0; n];
        for i in 0..n {
            let ph = phi[i];
            m[i] = self.treat[i] * ph + (1.0 - self.treat[i]) * (1.0 - ph);
            sgn[i] = 2.0 * ph - 1.0;
            pid0[i] = ph * self.pi_z0[i] + (1.0 - ph) * (1.0 - self.pi_z0[i]);
            pid1[i] = ph * self.pi_z1[i] + (1.0 - ph) * (1.0 - self.pi_z1[i]);
            rmix[i * 2] = ph * outcome.risk[i * 4 + 1] + (1.0 - ph) * outcome.risk[i * 4];
            rmix[i * 2 + 1] = ph * outcome.risk[i * 4 + 3] + (1.0 - ph) * outcome.risk[i * 4 + 2];
            ivw[i] = (2.0 * self.instr[i] - 1.0) * self.inv_delta_f[i];
            resid_a[i] = self.treat[i] - self.pi_z0[i];
        }
        let augment = if self.augmented { 1.0 } else { 0.0 };

        let mut nums = vec![0.0; k_len];
        let mut dens = vec![0.0; k_len];
        for k in 0..k_len {
            let s = self.grid[k];
            let jump = outcome.jump[k];
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                let ph = phi[i];
                let b = (i * k_len + k) * 4;
                let st0 = ph * outcome.st[b + 1] + (1.0 - ph) * outcome.st[b];
                let st1 = ph * outcome.st[b + 3] + (1.0 - ph) * outcome.st[b + 2];
                let dl0 = jump * rmix[i * 2];
                let dl1 = jump * rmix[i * 2 + 1];
                let over_delta = sgn[i] / self.delta[i];
                let g1 = augment * over_delta * (pid1[i] * st1 * dl1 - pid0[i] * st0 * dl0);
                let g1p = augment * sgn[i] * pid0[i] * st0 * dl0;
                let g2 = augment * over_delta * (pid1[i] * st1 - pid0[i] * st0);
                let g2p = augment * sgn[i] * pid0[i] * st0;
                num += ivw[i] * (-g1p - resid_a[i] * g1) + g1;
                den += ivw[i] * (-g2p - resid_a[i] * g2) + g2;
                if self.time[i] >= s {
                    den += ivw[i] * (2.0 * self.treat[i] - 1.0) * m[i]
                        / self.censor_factor(i, k, ph);
                }
            }
            for &i in &self.events_idx[self.events_ptr[k]..self.events_ptr[k + 1]] {
                num += ivw[i] * (2.0 * self.treat[i] - 1.0) * m[i]
                    / self.censor_factor(i, k, phi[i]);
            }
            nums[k] = num;
            dens[k] = den;
        }
        (nums, dens)
    }

    fn sums_augmented_propensity(&self, phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let outcome = self.outcome.as_ref().expect("outcome cache present");
        let k_len = self.grid.len();
        let n = self.n;

        let mut m = vec![0.0; n];
        let mut pid = vec![0.0; n];
        let mut rmix = vec![0.0; n];
        for i in 0..n {
            let ph = phi[i];
            m[i] = self.treat[i] * ph + (1.0 - self.treat[i]) * (1.0 - ph);
            pid[i] = ph * self.propensity[i] + (1.0 - ph) * (1.0 - self.propensity[i]);
            rmix[i] = ph * outcome.risk[i * 2 + 1] + (1.0 - ph) * outcome.risk[i * 2];
        }
        let augment = if self.augmented { 1.0 } else { 0.0 };

        let mut nums = vec![0.0; k_len];
        let mut dens = vec![0.0; k_len];
        for k in 0..k_len {
            let s = self.grid[k];
            let jump = outcome.jump[k];
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                let ph = phi[i];
                let b = (i * k_len + k) * 2;
                let st = ph * outcome.st[b + 1] + (1.0 - ph) * outcome.st[b];
                let dl = jump * rmix[i];
                let resid = augment * (m[i] - pid[i]) / pid[i];
                num -= resid * st * dl;
                den -= resid * st;
                if self.time[i] >= s {
                    den += m[i] / (pid[i] * self.censor_factor(i, k, ph));
                }
            }
            for &i in &self.events_idx[self.events_ptr[k]..self.events_ptr[k + 1]] {
                num += m[i] / (pid[i] * self.censor_factor(i, k, phi[i]));
            }
            nums[k] = num;
            dens[k] = den;
        }
        (nums, dens)
    }

    /// Estimate the value of a regime. `bandwidth = None` evaluates the
    /// indicator estimator; `Some(h)` the kernel-smoothed one.
    pub fn evaluate(&self, regime: &Regime, bandwidth: Option<f64>) -> Result<ValueEstimate> {
        let phi = self.phi_vector(regime, bandwidth)?;
        let (nums, dens) = self.grid_sums(&phi);
        let plv = ratio_product(self.grid.len(), |k| nums[k], |k| dens[k])?;
        let ipw = self.subject_weights(&phi);
        let sum_abs: f64 = ipw.iter().map(|w| w.abs()).sum();
        let sum_sq: f64 = ipw.iter().map(|w| w * w).sum();
        let ess = if sum_sq > 0.0 { sum_abs * sum_abs / sum_sq } else { 0.0 };
        Ok(ValueEstimate {
            value: plv.value,
            diagnostics: diagnostics_from(plv.diagnostics, ess, self.grid.len()),
        })
    }

    /// The estimated survival trajectory over the whole event grid.
    pub fn survival_curve(&self, regime: &Regime, bandwidth: Option<f64>) -> Result<ValueCurve> {
        let phi = self.phi_vector(regime, bandwidth)?;
        let (nums, dens) = self.grid_sums(&phi);
        let mut values = Vec::with_capacity(self.grid.len());
        let mut prod = 1.0;
        for k in 0..self.grid.len() {
            if dens[k] > 0.0 {
                prod *= 1.0 - (nums[k] / dens[k]).min(1.0);
            }
            values.push(prod.clamp(0.0, 1.0));
        }
        Ok(ValueCurve { times: self.grid.clone(), values })
    }
}

fn diagnostics_from(pl: ProductLimitDiagnostics, ess: f64, grid_size: usize) -> Diagnostics {
    Diagnostics {
        negative_increments: pl.negative_increments,
        capped_increments: pl.capped_increments,
        skipped_factors: pl.skipped_factors,
        final_clamped: pl.final_clamped,
        effective_sample_size: ess,
        grid_size,
    }
}

/// One-shot instrument-weighted Kaplan-Meier value estimate.
pub fn iwkme_iv(
    dataset: &Dataset,
    nuisance: &NuisanceSet,
    regime: &Regime,
    t: f64,
    smooth: Option<f64>,
) -> Result<ValueEstimate> {
    Evaluator::iwkme_iv(dataset, nuisance, t)?.evaluate(regime, smooth)
}

/// One-shot doubly robust value estimate.
pub fn drkme_iv(
    dataset: &Dataset,
    nuisance: &NuisanceSet,
    regime: &Regime,
    t: f64,
    smooth: Option<f64>,
) -> Result<ValueEstimate> {
    Evaluator::drkme_iv(dataset, nuisance, t)?.evaluate(regime, smooth)
}

/// One-shot inverse propensity weighted value estimate (no instrument).
pub fn siwkme(
    dataset: &Dataset,
    propensity: &LogisticModel,
    censoring: &CensoringModel,
    regime: &Regime,
    t: f64,
    smooth: Option<f64>,
) -> Result<ValueEstimate> {
    Evaluator::siwkme(dataset, propensity, censoring, t)?.evaluate(regime, smooth)
}

/// One-shot augmented inverse propensity weighted value estimate.
pub fn saiwkme(
    dataset: &Dataset,
    propensity: &LogisticModel,
    outcome: &CoxModel,
    censoring: &CensoringModel,
    regime: &Regime,
    t: f64,
    smooth: Option<f64>,
) -> Result<ValueEstimate> {
    Evaluator::saiwkme(dataset, propensity, outcome, censoring, t)?.evaluate(regime, smooth)
}

/// Restricted mean survival time up to `t`: the Riemann sum of the
/// estimated curve over the order statistics of the observed times, with
/// the conventions `T_(0) = 0` and curve value 1 there.
pub fn restricted_mean(curve: &ValueCurve, observed_times: &[f64], t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::invalid("restricted mean horizon must be positive"));
    }
    if observed_times.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("observed times must be finite and nonnegative"));
    }
    let mut sorted = observed_times.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut total = 0.0;
    for (i, &ti) in std::iter::once(&0.0).chain(sorted.iter()).enumerate() {
        // element i of (T_(0), ..., T_(n)); its successor or t caps the gap
        let next = if i < sorted.len() { sorted[i] } else { f64::INFINITY };
        if ti <= t {
            total += curve.eval(ti) * (next.min(t) - ti);
        }
    }
    Ok(total)
}

/// Smallest grid time where the estimated survival drops to `1 - tau` or
/// below; `None` when the curve never reaches it.
pub fn quantile_value(curve: &ValueCurve, tau: f64) -> Result<Option<f64>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid("quantile level must lie in (0, 1)"));
    }
    let target = 1.0 - tau;
    for (t, v) in curve.times.iter().zip(&curve.values) {
        if *v <= target {
            return Ok(Some(*t));
        }
    }
    Ok(None)
}

/// Cost-penalized value: the survival value minus `lambda` times the
/// fraction of the covariate sample the regime would treat.
pub fn multi_objective(
    value: f64,
    regime: &Regime,
    covariate_sample: &[Vec<f64>],
    lambda: f64,
) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid("the cost tradeoff must be nonnegative"));
    }
    if covariate_sample.is_empty() {
        return Err(Error::invalid("the covariate sample must be nonempty"));
    }
    let mut treated = 0usize;
    for covs in covariate_sample {
        treated += usize::from(regime.decide(covs)? == 1);
    }
    Ok(value - lambda * treated as f64 / covariate_sample.len() as f64)
}
