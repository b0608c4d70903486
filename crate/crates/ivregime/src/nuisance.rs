//! Nuisance models behind the value estimators: logistic regressions for
//! the instrument propensity `f(Z|L)` and treatment model `pi(A|Z,L)`,
//! the truncated compliance score, Cox proportional hazards fits for the
//! conditional cumulative hazard, and the censoring survival model.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, solve, Matrix};
use crate::survival::{km_survival, StepSurvival};

/// Probability clamp for logistic predictions.
const PROB_CLAMP: f64 = 1e-10;
/// Lower clamp for censoring survival evaluations.
const CENSOR_FLOOR: f64 = 1e-3;
/// Coefficient norm beyond which a monotone likelihood is suspected.
const SEPARATION_NORM: f64 = 1e3;

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ---------------------------------------------------------------------------
// Logistic regression
// ---------------------------------------------------------------------------

/// Which columns enter a logistic design. The intercept is always first;
/// the instrument column (when used) comes next, then the selected
/// covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticDesign {
    pub use_instrument: bool,
    pub covariate_cols: Vec<usize>,
}

impl LogisticDesign {
    /// `(1, L)` — instrument propensity or treatment propensity without Z.
    pub fn with_covariates(p: usize) -> Self {
        LogisticDesign { use_instrument: false, covariate_cols: (0..p).collect() }
    }

    /// `(1, Z, L)` — treatment model given instrument and covariates.
    pub fn with_instrument(p: usize) -> Self {
        LogisticDesign { use_instrument: true, covariate_cols: (0..p).collect() }
    }

    /// Intercept-only design (the misspecified instrument model).
    pub fn intercept_only() -> Self {
        LogisticDesign { use_instrument: false, covariate_cols: Vec::new() }
    }

    pub fn row_len(&self) -> usize {
        1 + usize::from(self.use_instrument) + self.covariate_cols.len()
    }

    pub fn build_row(&self, instrument: f64, covariates: &[f64]) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.row_len());
        row.push(1.0);
        if self.use_instrument {
            row.push(instrument);
        }
        for &j in &self.covariate_cols {
            row.push(covariates[j]);
        }
        row
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    /// Intercept first, then the design columns.
    pub coefficients: Vec<f64>,
    pub design: LogisticDesign,
}

/// Response a logistic model is fit against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Response {
    Treatment,
    Instrument,
}

/// Maximize the Bernoulli log-likelihood by Newton-Raphson. `x` carries
/// the full design rows (intercept included). Converges when the score's
/// max component drops below 1e-8 or the step below 1e-10, within 100
/// iterations.
pub fn fit_logistic(x: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    let n = x.nrows();
    let k = x.ncols();
    if y.len() != n {
        return Err(Error::invalid("response length must match design rows"));
    }
    if n < k {
        return Err(Error::invalid("need at least as many rows as columns"));
    }
    if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::invalid("logistic response must be binary"));
    }
    let ones = y.iter().filter(|v| **v == 1.0).count();
    if ones == 0 || ones == n {
        return Err(Error::invalid("logistic response has a single class"));
    }

    // an interior maximum never classifies every row perfectly; pinned
    // probabilities at an apparent optimum mean the likelihood is
    // monotone in some direction (separated classes)
    let separated = |beta: &[f64]| {
        (0..n).all(|i| (y[i] - expit(dot(x.row(i), beta))).abs() < 1e-3)
    };

    let mut beta = vec![0.0_f64; k];
    for _iter in 0..100 {
        let mut score = vec![0.0_f64; k];
        let mut info = Matrix::zeros(k, k);
        for i in 0..n {
            let row = x.row(i);
            let p = expit(dot(row, &beta));
            let resid = y[i] - p;
            let w = p * (1.0 - p);
            for a in 0..k {
                score[a] += row[a] * resid;
                for b in a..k {
                    info.add_at(a, b, w * row[a] * row[b]);
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                let v = info.get(b, a);
                info.set(a, b, v);
            }
        }
        let max_score = score.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let converged_score = max_score < 1e-8;
        let mut converged_step = false;
        if !converged_score {
            let step = solve(info, score)?;
            let max_step = step.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            for (b, s) in beta.iter_mut().zip(&step) {
                *b += s;
            }
            let norm = beta.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > SEPARATION_NORM {
                return Err(Error::Separation(format!(
                    "logistic coefficients diverged (norm {norm:.3e})"
                )));
            }
            converged_step = max_step < 1e-10;
        }
        if converged_score || converged_step {
            if separated(&beta) {
                return Err(Error::Separation(
                    "logistic likelihood is monotone: the classes are separated".into(),
                ));
            }
            return Ok(beta);
        }
    }
    Err(Error::NonConvergence(
        "logistic Newton-Raphson exceeded 100 iterations".into(),
    ))
}

/// Predicted probability for a full design row (intercept included),
/// clamped into `[1e-10, 1 - 1e-10]`.
pub fn predict_logistic(model: &LogisticModel, row: &[f64]) -> Result<f64> {
    if row.len() != model.coefficients.len() {
        return Err(Error::invalid(format!(
            "design row has length {}, model expects {}",
            row.len(),
            model.coefficients.len()
        )));
    }
    Ok(expit(dot(row, &model.coefficients)).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
}

impl LogisticModel {
    pub fn fit(dataset: &Dataset, design: LogisticDesign, response: Response) -> Result<Self> {
        if design.covariate_cols.iter().any(|&j| j >= dataset.p()) {
            return Err(Error::invalid("design references a covariate out of range"));
        }
        let rows: Vec<Vec<f64>> = dataset
            .subjects()
            .iter()
            .map(|s| design.build_row(s.instrument as f64, &s.covariates))
            .collect();
        let y: Vec<f64> = dataset
            .subjects()
            .iter()
            .map(|s| match response {
                Response::Treatment => s.treatment as f64,
                Response::Instrument => s.instrument as f64,
            })
            .collect();
        let coefficients = fit_logistic(&Matrix::from_rows(&rows)?, &y)?;
        Ok(LogisticModel { coefficients, design })
    }

    /// Probability that the response equals 1 at `(z, L)`.
    pub fn predict(&self, instrument: f64, covariates: &[f64]) -> f64 {
        let row = self.design.build_row(instrument, covariates);
        expit(dot(&row, &self.coefficients)).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    }
}

// ---------------------------------------------------------------------------
// Cox proportional hazards
// ---------------------------------------------------------------------------

/// Columns of a Cox design built from `(Z, L, A, A*L)` pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxDesign {
    pub use_instrument: bool,
    pub covariate_cols: Vec<usize>,
    pub use_treatment: bool,
    pub interaction_cols: Vec<usize>,
}

impl CoxDesign {
    /// `(Z, L, A, A*L)` — the instrumented conditional-hazard design.
    pub fn instrumented(p: usize) -> Self {
        CoxDesign {
            use_instrument: true,
            covariate_cols: (0..p).collect(),
            use_treatment: true,
            interaction_cols: (0..p).collect(),
        }
    }

    /// `(L, A, A*L)` — the instrument-free analogue.
    pub fn uninstrumented(p: usize) -> Self {
        CoxDesign {
            use_instrument: false,
            covariate_cols: (0..p).collect(),
            use_treatment: true,
            interaction_cols: (0..p).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        usize::from(self.use_instrument)
            + self.covariate_cols.len()
            + usize::from(self.use_treatment)
            + self.interaction_cols.len()
    }

    pub fn build_row(&self, instrument: f64, covariates: &[f64], treatment: f64) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.dim());
        if self.use_instrument {
            row.push(instrument);
        }
        for &j in &self.covariate_cols {
            row.push(covariates[j]);
        }
        if self.use_treatment {
            row.push(treatment);
        }
        for &j in &self.interaction_cols {
            row.push(treatment * covariates[j]);
        }
        row
    }
}

/// Breslow baseline cumulative hazard: jump times with their increments.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxBaseline {
    times: Vec<f64>,
    jumps: Vec<f64>,
    cum: Vec<f64>,
}

impl CoxBaseline {
    pub fn new(times: Vec<f64>, jumps: Vec<f64>) -> Result<Self> {
        if times.len() != jumps.len() {
            return Err(Error::invalid("baseline times and jumps must match"));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("baseline times must be strictly increasing"));
        }
        if jumps.iter().any(|j| !(j.is_finite() && *j >= 0.0)) {
            return Err(Error::invalid("baseline jumps must be finite and nonnegative"));
        }
        let mut cum = Vec::with_capacity(jumps.len());
        let mut acc = 0.0;
        for j in &jumps {
            acc += j;
            cum.push(acc);
        }
        Ok(CoxBaseline { times, jumps, cum })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jumps
    }

    /// Baseline cumulative hazard at `s` (jumps at `s` included).
    pub fn cum_at(&self, s: f64) -> f64 {
        match self.times.partition_point(|&t| t <= s) {
            0 => 0.0,
            k => self.cum[k - 1],
        }
    }

    /// Baseline cumulative hazard just before `s`.
    pub fn cum_left(&self, s: f64) -> f64 {
        match self.times.partition_point(|&t| t < s) {
            0 => 0.0,
            k => self.cum[k - 1],
        }
    }

    /// Jump of the baseline at exactly `s` (0 if `s` is not a jump time).
    pub fn jump_at(&self, s: f64) -> f64 {
        match self.times.binary_search_by(|t| t.total_cmp(&s)) {
            Ok(k) => self.jumps[k],
            Err(_) => 0.0,
        }
    }
}

/// Raw output of the partial-likelihood fit.
#[derive(Debug, Clone)]
pub struct CoxFit {
    pub beta: Vec<f64>,
    pub baseline: CoxBaseline,
    pub iterations: usize,
    pub final_score_norm: f64,
    /// Set when the likelihood looks monotone (coefficients diverging).
    pub flagged_monotone: bool,
}

/// Maximize the Breslow partial likelihood by Newton-Raphson (score
/// tolerance 1e-8, at most 100 iterations) and compute the Breslow
/// baseline. Ties are handled by Breslow's approximation.
pub fn fit_cox(x: &Matrix, times: &[f64], status: &[u8]) -> Result<CoxFit> {
    let n = x.nrows();
    let k = x.ncols();
    if times.len() != n || status.len() != n {
        return Err(Error::invalid("times/status length must match design rows"));
    }
    let events = status.iter().filter(|s| **s == 1).count();
    if events == 0 {
        return Err(Error::invalid("cox fit needs at least one event"));
    }
    if k >= events {
        return Err(Error::invalid(format!(
            "cox design has {k} columns but only {events} events"
        )));
    }

    // descending time order; equal times share one risk set
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));

    let mut beta = vec![0.0_f64; k];
    let mut trace: Vec<f64> = Vec::new();
    for iter in 0..100 {
        let mut score = vec![0.0_f64; k];
        let mut info = Matrix::zeros(k, k);
        let mut s0 = 0.0_f64;
        let mut s1 = vec![0.0_f64; k];
        let mut s2 = Matrix::zeros(k, k);
        let mut i = 0;
        while i < n {
            // absorb the whole tied-time group into the risk set first
            let t = times[order[i]];
            let mut j = i;
            while j < n && times[order[j]] == t {
                let row = x.row(order[j]);
                let w = dot(row, &beta).exp();
                s0 += w;
                for a in 0..k {
                    s1[a] += w * row[a];
                    for b in a..k {
                        s2.add_at(a, b, w * row[a] * row[b]);
                    }
                }
                j += 1;
            }
            for idx in i..j {
                if status[order[idx]] != 1 {
                    continue;
                }
                let row = x.row(order[idx]);
                for a in 0..k {
                    let xbar_a = s1[a] / s0;
                    score[a] += row[a] - xbar_a;
                    for b in a..k {
                        let v = s2.get(a, b) / s0 - xbar_a * (s1[b] / s0);
                        info.add_at(a, b, v);
                    }
                }
            }
            i = j;
        }
        for a in 0..k {
            for b in 0..a {
                let v = info.get(b, a);
                info.set(a, b, v);
            }
        }
        let max_score = score.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        trace.push(max_score);
        if max_score < 1e-8 {
            let baseline = breslow_baseline(x, times, status, &order, &beta)?;
            return Ok(CoxFit {
                beta,
                baseline,
                iterations: iter,
                final_score_norm: max_score,
                flagged_monotone: false,
            });
        }
        let step = solve(info, score)?;
        for (b, s) in beta.iter_mut().zip(&step) {
            *b += s;
        }
        let norm = beta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > SEPARATION_NORM {

            let baseline = breslow_baseline(x, times, status, &order, &beta)?;
            return Ok(CoxFit {
                beta,
                baseline,
                iterations: iter,
                final_score_norm: max_score,
                flagged_monotone: true,
            });
        }
    }
    Err(Error::NonConvergence(format!(
        "cox Newton-Raphson exceeded 100 iterations; score trace tail {:?}",
        &trace[trace.len().saturating_sub(5)..]
    )))
}

fn breslow_baseline(
    x: &Matrix,
    times: &[f64],
    status: &[u8],
    desc_order: &[usize],
    beta: &[f64],
) -> Result<CoxBaseline> {
    let n = x.nrows();
    let mut s0_at = Vec::new(); // (time, d, s0) for event times, descending
    let mut s0 = 0.0_f64;
    let mut i = 0;
    while i < n {
        let t = times[desc_order[i]];
        let mut j = i;
        let mut d = 0.0_f64;
        while j < n && times[desc_order[j]] == t {
            s0 += dot(x.row(desc_order[j]), beta).exp();
            if status[desc_order[j]] == 1 {
                d += 1.0;
            }
            j += 1;
        }
        if d > 0.0 {
            s0_at.push((t, d, s0));
        }
        i = j;
    }
    s0_at.reverse();
    let times: Vec<f64> = s0_at.iter().map(|v| v.0).collect();
    let jumps: Vec<f64> = s0_at.iter().map(|v| v.1 / v.2).collect();
    CoxBaseline::new(times, jumps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoxModel {
    pub beta: Vec<f64>,
    pub design: CoxDesign,
    pub baseline: CoxBaseline,
}

impl CoxModel {
    /// Fit the conditional hazard of the outcome (events = observed
    /// failures). Errors on a monotone likelihood.
    pub fn fit(dataset: &Dataset, design: CoxDesign) -> Result<Self> {
        Self::fit_with_events(dataset, design, false)
    }

    /// Fit the conditional hazard of censoring (events = censorings).
    pub fn fit_censoring(dataset: &Dataset, design: CoxDesign) -> Result<Self> {
        Self::fit_with_events(dataset, design, true)
    }

    fn fit_with_events(dataset: &Dataset, design: CoxDesign, flip: bool) -> Result<Self> {
        if design.covariate_cols.iter().chain(&design.interaction_cols).any(|&j| j >= dataset.p()) {
            return Err(Error::invalid("cox design references a covariate out of range"));
        }
        let rows: Vec<Vec<f64>> = dataset
            .subjects()
            .iter()
            .map(|s| design.build_row(s.instrument as f64, &s.covariates, s.treatment as f64))
            .collect();
        let times: Vec<f64> = dataset.subjects().iter().map(|s| s.time).collect();
        let status: Vec<u8> = dataset
            .subjects()
            .iter()
            .map(|s| if flip { 1 - s.status } else { s.status })
            .collect();
        let fit = fit_cox(&Matrix::from_rows(&rows)?, &times, &status)?;
        if fit.flagged_monotone {
            return Err(Error::Separation(
                "monotone partial likelihood in cox fit".into(),
            ));
        }
        Ok(CoxModel { beta: fit.beta, design, baseline: fit.baseline })
    }

    pub fn risk_score(&self, instrument: f64, covariates: &[f64], treatment: f64) -> f64 {
        dot(&self.design.build_row(instrument, covariates, treatment), &self.beta).exp()
    }

    pub fn cumulative_hazard(&self, s: f64, z: f64, l: &[f64], a: f64) -> f64 {
        self.baseline.cum_at(s) * self.risk_score(z, l, a)
    }

    /// `exp(-Lambda(s | z, l, a))`.
    pub fn survival(&self, s: f64, z: f64, l: &[f64], a: f64) -> f64 {
        (-self.cumulative_hazard(s, z, l, a)).exp()
    }

    /// Left-limit survival `exp(-Lambda(s- | z, l, a))`, the form entering
    /// the product-integral.
    pub fn survival_left(&self, s: f64, z: f64, l: &[f64], a: f64) -> f64 {
        (-self.baseline.cum_left(s) * self.risk_score(z, l, a)).exp()
    }
}

/// Spec-level accessor: `exp(-Lambda(s))` from a fitted Cox model.
pub fn cox_survival(model: &CoxModel, s: f64, z: f64, l: &[f64], a: f64) -> f64 {
    model.survival(s, z, l, a)
}

// ---------------------------------------------------------------------------
// Censoring survival
// ---------------------------------------------------------------------------

/// Censoring survival model: the marginal reverse Kaplan-Meier estimate
/// of `P(C >= s)` under random censoring, or a conditional Cox model on
/// `(Z, L, A)` pieces for covariate-dependent censoring.
#[derive(Debug, Clone, PartialEq)]
pub enum CensoringModel {
    Marginal(StepSurvival),
    Conditional(CoxModel),
}

impl CensoringModel {
    pub fn fit_marginal(dataset: &Dataset) -> Result<Self> {
        let times: Vec<f64> = dataset.subjects().iter().map(|s| s.time).collect();
        let events: Vec<u8> = dataset.subjects().iter().map(|s| 1 - s.status).collect();
        Ok(CensoringModel::Marginal(km_survival(&times, &events)?))
    }

    pub fn fit_conditional(dataset: &Dataset, design: CoxDesign) -> Result<Self> {
        Ok(CensoringModel::Conditional(CoxModel::fit_censoring(dataset, design)?))
    }

    pub fn is_marginal(&self) -> bool {
        matches!(self, CensoringModel::Marginal(_))
    }

    /// `P(C >= s | z, l, a)` evaluated as a left limit and floored at
    /// 1e-3 so inverse weights stay finite.
    pub fn survival_left(&self, s: f64, z: f64, l: &[f64], a: f64) -> f64 {
        let v = match self {
            CensoringModel::Marginal(step) => step.eval_left(s),
            CensoringModel::Conditional(cox) => cox.survival_left(s, z, l, a),
        };
        v.max(CENSOR_FLOOR)
    }
}

// ---------------------------------------------------------------------------
// The assembled nuisance set
// ---------------------------------------------------------------------------

/// Default truncation level for the compliance score.
pub const DEFAULT_DELTA_FLOOR: f64 = 0.05;

/// Everything the instrumented estimators need: `f(Z|L)`, `pi(A|Z,L)`,
/// the truncated compliance score, the censoring survival model, and
/// optionally the Cox outcome model for the doubly robust estimator.
#[derive(Debug, Clone)]
pub struct NuisanceSet {
    pub instrument_model: LogisticModel,
    pub treatment_model: LogisticModel,
    pub outcome_model: Option<CoxModel>,
    pub censoring: CensoringModel,
    pub delta_floor: f64,
}

/// Which censoring model to fit.
#[derive(Debug, Clone, PartialEq)]
pub enum CensoringSpec {
    Marginal,
    Conditional(CoxDesign),
}

#[derive(Debug, Clone)]
pub struct NuisanceOptions {
    /// Design for `f(Z|L)`; intercept-only reproduces the misspecified
    /// instrument-model experiments.
    pub instrument_design: LogisticDesign,
    pub censoring: CensoringSpec,
    /// Fit the Cox outcome model (required by the doubly robust
    /// estimator) on this design.
    pub outcome_design: Option<CoxDesign>,
    pub delta_floor: f64,
}

impl NuisanceOptions {
    pub fn for_dataset(p: usize) -> Self {
        NuisanceOptions {
            instrument_design: LogisticDesign::with_covariates(p),
            censoring: CensoringSpec::Marginal,
            outcome_design: None,
            delta_floor: DEFAULT_DELTA_FLOOR,
        }
    }

    pub fn with_outcome(mut self, p: usize) -> Self {
        self.outcome_design = Some(CoxDesign::instrumented(p));
        self
    }
}

impl NuisanceSet {
    pub fn fit(dataset: &Dataset, options: &NuisanceOptions) -> Result<Self> {
        if !(options.delta_floor > 0.0) {
            return Err(Error::invalid("delta floor must be positive"));
        }
        let instrument_model = LogisticModel::fit(
            dataset,
            options.instrument_design.clone(),
            Response::Instrument,
        )?;
        let treatment_model = LogisticModel::fit(
            dataset,
            LogisticDesign::with_instrument(dataset.p()),
            Response::Treatment,
        )?;
        let outcome_model = match &options.outcome_design {
            Some(design) => Some(CoxModel::fit(dataset, design.clone())?),
            None => None,
        };
        let censoring = match &options.censoring {
            CensoringSpec::Marginal => CensoringModel::fit_marginal(dataset)?,
            CensoringSpec::Conditional(design) => {
                CensoringModel::fit_conditional(dataset, design.clone())?
            }
        };
        Ok(NuisanceSet {
            instrument_model,
            treatment_model,
            outcome_model,
            censoring,
            delta_floor: options.delta_floor,
        })
    }

    /// `P(A = 1 | Z = z, L)`.
    pub fn treatment_probability(&self, z: f64, l: &[f64]) -> f64 {
        self.treatment_model.predict(z, l)
    }

    /// `f(Z = z | L)`.
    pub fn instrument_probability(&self, z: f64, l: &[f64]) -> f64 {
        let p1 = self.instrument_model.predict(0.0, l);
        if z == 1.0 {
            p1
        } else {
            1.0 - p1
        }
    }

    /// Truncated compliance score: the raw difference
    /// `pi(1|1,L) - pi(1|0,L)` pushed away from zero to `delta_floor`
    /// (sign of an exact zero counts as positive).
    pub fn delta(&self, l: &[f64]) -> f64 {
        let raw = self.treatment_probability(1.0, l) - self.treatment_probability(0.0, l);
        if raw.abs() >= self.delta_floor {
            raw
        } else if raw >= 0.0 {
            self.delta_floor
        } else {
            -self.delta_floor
        }
    }
}

/// Spec-level free function form of [`NuisanceSet::delta`].
pub fn delta_l(nuisance: &NuisanceSet, covariates: &[f64]) -> f64 {
    nuisance.delta(covariates)
}

/// Spec-level censoring survival accessor (left limit, floored at 1e-3).
pub fn censor_survival(nuisance: &NuisanceSet, s: f64, z: f64, l: &[f64], a: f64) -> f64 {
    nuisance.censoring.survival_left(s, z, l, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Subject;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn design_matrix(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn intercept_only_logistic_matches_logit_of_mean() {
        let x = design_matrix(&vec![vec![1.0]; 4]);
        let beta = fit_logistic(&x, &[0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(beta[0].abs() < 1e-8);

        let x = design_matrix(&vec![vec![1.0]; 8]);
        let y = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let beta = fit_logistic(&x, &y).unwrap();
        assert!((beta[0] - (1.0f64 / 3.0).ln()).abs() < 1e-8);
    }

    #[test]
    fn logistic_matches_grid_search_oracle() {
        // 20-row fixture; oracle: three-stage zooming grid over (b0, b1)
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..20 {
            let l: f64 = rng.random_range(-2.0..2.0);
            let p = expit(0.4 + 0.9 * l);
            rows.push(vec![1.0, l]);
            y.push(if rng.random_range(0.0..1.0) < p { 1.0 } else { 0.0 });
        }
        let loglik = |b0: f64, b1: f64| -> f64 {
            rows.iter()
                .zip(&y)
                .map(|(r, &yi)| {
                    let eta = b0 + b1 * r[1];
                    yi * eta - (1.0 + eta.exp()).ln()
                })
                .sum()
        };
        let mut center = (0.0, 0.0);
        let mut half = 5.0;
        for _ in 0..4 {
            let mut best = (f64::NEG_INFINITY, center);
            let steps = 80;
            for i in 0..=steps {
                for j in 0..=steps {
                    let b0 = center.0 - half + 2.0 * half * i as f64 / steps as f64;
                    let b1 = center.1 - half + 2.0 * half * j as f64 / steps as f64;
                    let ll = loglik(b0, b1);
                    if ll > best.0 {
                        best = (ll, (b0, b1));
                    }
                }
            }
            center = best.1;
            half = half * 2.5 / steps as f64 * 2.0;
        }
        let beta = fit_logistic(&design_matrix(&rows), &y).unwrap();
        assert!((beta[0] - center.0).abs() < 1e-4, "{beta:?} vs {center:?}");
        assert!((beta[1] - center.1).abs() < 1e-4);
    }

    #[test]
    fn logistic_score_first_order_optimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..200 {
            let l1: f64 = rng.random_range(-2.0..2.0);
            let l2: f64 = rng.random_range(-2.0..2.0);
            let p = expit(-0.3 + 0.8 * l1 - 0.5 * l2);
            rows.push(vec![1.0, l1, l2]);
            y.push(if rng.random_range(0.0..1.0) < p { 1.0 } else { 0.0 });
        }
        let beta = fit_logistic(&design_matrix(&rows), &y).unwrap();
        let mut score = vec![0.0; 3];
        for (r, yi) in rows.iter().zip(&y) {
            let p = expit(dot(r, &beta));
            for a in 0..3 {
                score[a] += r[a] * (yi - p);
            }
        }
        assert!(score.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn logistic_rejects_one_class_and_detects_separation() {
        let x = design_matrix(&vec![vec![1.0]; 3]);
        assert!(matches!(
            fit_logistic(&x, &[1.0, 1.0, 1.0]),
            Err(Error::InvalidArgument(_))
        ));

        // perfectly separated covariate
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![1.0, if i < 5 { -1.0 } else { 1.0 }])
            .collect();
        let y: Vec<f64> = (0..10).map(|i| if i >= 5 { 1.0 } else { 0.0 }).collect();
        assert!(matches!(
            fit_logistic(&design_matrix(&rows), &y),
            Err(Error::Separation(_))
        ));
    }

    #[test]
    fn predict_reference_values_and_clamp() {
        let model = LogisticModel {
            coefficients: vec![0.0],
            design: LogisticDesign::intercept_only(),
        };
        assert_eq!(predict_logistic(&model, &[1.0]).unwrap(), 0.5);

        let model = LogisticModel {
            coefficients: vec![-2.5, 1.0, 5.0, -0.5],
            design: LogisticDesign::with_instrument(2),
        };
        // row (1, L1=0, Z=1, U=0) ordered as the coefficients expect
        let p = predict_logistic(&model, &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((p - expit(2.5)).abs() < 1e-12);
        assert!((p - 0.924141819978757).abs() < 1e-12);

        let model = LogisticModel {
            coefficients: vec![50.0],
            design: LogisticDesign::intercept_only(),
        };
        assert_eq!(predict_logistic(&model, &[1.0]).unwrap(), 1.0 - 1e-10);
        assert!(predict_logistic(&model, &[1.0, 2.0]).is_err());
    }

    fn three_subject_dataset() -> (Matrix, Vec<f64>, Vec<u8>) {
        // times (1,2,3), all events, scalar covariate (0,1,0):
        // score(b) = 1 - e^b/(e^b+2) - e^b/(e^b+1); root at b = ln sqrt(2)
        let x = design_matrix(&[vec![0.0], vec![1.0], vec![0.0]]);
        (x, vec![1.0, 2.0, 3.0], vec![1, 1, 1])
    }

    #[test]
    fn cox_beta_matches_score_root_oracle() {
        let (x, times, status) = three_subject_dataset();
        let fit = fit_cox(&x, &times, &status).unwrap();
        // bisection on the closed-form score
        let score = |b: f64| 1.0 - b.exp() / (b.exp() + 2.0) - b.exp() / (b.exp() + 1.0);
        let (mut lo, mut hi) = (-5.0, 5.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if score(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let root = 0.5 * (lo + hi);
        assert!((root - 0.5 * 2.0f64.ln()).abs() < 1e-9);
        assert!((fit.beta[0] - root).abs() < 1e-6);
        assert!(!fit.flagged_monotone);
    }

    #[test]
    fn null_covariate_cox_baseline_equals_nelson_aalen() {
        let x = design_matrix(&vec![vec![0.0]; 5]);
        let times = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let status = vec![1, 0, 1, 1, 0];
        let fit = fit_cox(&x, &times, &status).unwrap();
        assert_eq!(fit.beta[0], 0.0);
        assert_eq!(fit.baseline.times(), &[1.0, 3.0, 4.0]);
        let expect = [1.0 / 5.0, 1.0 / 3.0, 1.0 / 2.0];
        for (j, e) in fit.baseline.jumps().iter().zip(expect) {
            assert!((j - e).abs() < 1e-15);
        }
    }

    #[test]
    fn cox_breslow_tie_handling_matches_hand_computation() {
        // times (1,1,2), all events, x = (1,0,1):
        // l(b) = b - 2 log(2e^b + 1) + const, maximized at b = -ln 2;
        // Breslow jumps: 2/(2e^b+1) = 1 at t=1, 1/e^b = 2 at t=2.
        let x = design_matrix(&[vec![1.0], vec![0.0], vec![1.0]]);
        let fit = fit_cox(&x, &[1.0, 1.0, 2.0], &[1, 1, 1]).unwrap();
        assert!((fit.beta[0] + 2.0f64.ln()).abs() < 1e-8);
        assert_eq!(fit.baseline.times(), &[1.0, 2.0]);
        assert!((fit.baseline.jumps()[0] - 1.0).abs() < 1e-8);
        assert!((fit.baseline.jumps()[1] - 2.0).abs() < 1e-8);
        assert!((fit.baseline.cum_at(2.0) - 3.0).abs() < 1e-7);
    }

    #[test]
    fn cox_score_first_order_optimality_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 300;
        let mut rows = Vec::new();
        let mut times = Vec::new();
        let mut status = Vec::new();
        for _ in 0..n {
            let x1: f64 = rng.random_range(-1.0..1.0);
            let x2: f64 = rng.random_range(-1.0..1.0);
            let u: f64 = rng.random_range(1e-9..1.0);
            let t = -u.ln() / (0.7 * x1 - 0.4 * x2).exp();
            rows.push(vec![x1, x2]);
            times.push(t);
            status.push(u8::from(rng.random_range(0.0..1.0) < 0.8));
        }
        if !status.contains(&1) {
            status[0] = 1;
        }
        let x = design_matrix(&rows);
        let fit = fit_cox(&x, &times, &status).unwrap();
        assert!(fit.final_score_norm < 1e-8);

        // survival is the definitional transform of the cumulative hazard
        let model = CoxModel {
            beta: fit.beta.clone(),
            design: CoxDesign {
                use_instrument: false,
                covariate_cols: vec![0, 1],
                use_treatment: false,
                interaction_cols: vec![],
            },
            baseline: fit.baseline.clone(),
        };
        for s in [0.1, 0.5, 2.0] {
            let l = [0.3, -0.2];
            let direct = (-model.cumulative_hazard(s, 0.0, &l, 0.0)).exp();
            assert!((cox_survival(&model, s, 0.0, &l, 0.0) - direct).abs() < 1e-12);
        }
        // before the first event the survival is exactly 1
        let first = model.baseline.times()[0];
        assert_eq!(model.survival(first * 0.5, 0.0, &[0.0, 0.0], 0.0), 1.0);
    }

    #[test]
    fn censoring_marginal_reverse_km_approximates_uniform_truth() {
        // C ~ U(0, c0): S_C(s) = 1 - s/c0 for s < c0
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c0 = 8.0;
        let n = 2000;
        let mut subjects = Vec::new();
        for _ in 0..n {
            let t = -f64::ln(rng.random_range(1e-12..1.0)) * 3.0;
            let c = rng.random_range(0.0..c0);
            subjects.push(Subject {
                time: t.min(c),
                status: u8::from(t <= c),
                treatment: 0,
                instrument: 0,
                covariates: vec![0.0],
            });
        }
        let d = Dataset::new(subjects).unwrap();
        let m = CensoringModel::fit_marginal(&d).unwrap();
        for s in [1.0, 2.0, 4.0] {
            let est = m.survival_left(s, 0.0, &[0.0], 0.0);
            assert!(
                (est - (1.0 - s / c0)).abs() < 0.02,
                "s={s}: {est} vs {}",
                1.0 - s / c0
            );
        }
        assert_eq!(m.survival_left(0.0, 0.0, &[0.0], 0.0), 1.0);
        // marginal model ignores covariates entirely
        assert_eq!(
            m.survival_left(2.0, 1.0, &[5.0], 1.0),
            m.survival_left(2.0, 0.0, &[-5.0], 0.0)
        );
    }

    fn toy_iv_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut subjects = Vec::new();
        for _ in 0..n {
            let l: f64 = rng.random_range(-2.0..2.0);
            let z = u8::from(rng.random_range(0.0..1.0) < 0.5);
            let pa = expit(-1.0 + 0.5 * l + 2.0 * z as f64);
            let a = u8::from(rng.random_range(0.0..1.0) < pa);
            let t = -f64::ln(rng.random_range(1e-12..1.0)) / (0.2 + 0.1 * a as f64);
            let c: f64 = rng.random_range(0.0..20.0);
            subjects.push(Subject {
                time: t.min(c),
                status: u8::from(t <= c),
                treatment: a,
                instrument: z,
                covariates: vec![l],
            });
        }
        Dataset::new(subjects).unwrap()
    }

    #[test]
    fn delta_respects_floor_and_sign() {
        let d = toy_iv_dataset(400, 7);
        let nuis = NuisanceSet::fit(&d, &NuisanceOptions::for_dataset(1)).unwrap();
        for l in [-1.5, 0.0, 1.5] {
            let val = nuis.delta(&[l]);
            assert!(val.abs() >= nuis.delta_floor);
            let raw = nuis.treatment_probability(1.0, &[l]) - nuis.treatment_probability(0.0, &[l]);
            if raw.abs() >= nuis.delta_floor {
                assert_eq!(val, raw);
            }
        }
        // identical predictions across z engage the floor with positive sign
        let flat = NuisanceSet {
            treatment_model: LogisticModel {
                coefficients: vec![0.3, 0.0, 0.1],
                design: LogisticDesign::with_instrument(1),
            },
            ..nuis
        };
        assert_eq!(flat.delta(&[0.5]), flat.delta_floor);
        assert_eq!(delta_l(&flat, &[0.5]), flat.delta_floor);
    }

    #[test]
    fn nuisance_fit_assembles_requested_models() {
        let d = toy_iv_dataset(300, 9);
        let opts = NuisanceOptions::for_dataset(1).with_outcome(1);
        let nuis = NuisanceSet::fit(&d, &opts).unwrap();
        assert!(nuis.outcome_model.is_some());
        assert!(nuis.censoring.is_marginal());
        assert!(nuis.treatment_model.design.use_instrument);
        // f(Z=1|L) and f(Z=0|L) are complementary
        let p1 = nuis.instrument_probability(1.0, &[0.3]);
        let p0 = nuis.instrument_probability(0.0, &[0.3]);
        assert!((p1 + p0 - 1.0).abs() < 1e-12);
        assert_eq!(censor_survival(&nuis, 0.0, 0.0, &[0.3], 0.0), 1.0);
    }
}
