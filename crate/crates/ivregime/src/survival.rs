//! Product-limit machinery: event grids, standard and reverse
//! Kaplan-Meier, and the generic weighted product-limit estimator that
//! the instrumented value estimators instantiate.
//!
//! Tie convention: events precede censorings at the same time, so a
//! subject censored at an event time stays at risk for that jump. This
//! falls out of defining the at-risk process with `time >= s`.
//!
//! Instrument-signed weights can push a hazard increment `D(s)/R(s)`
//! outside `[0, 1]`. Negative increments are kept (their mass cancels
//! across jumps and removing them biases the product), increments above
//! one are capped, nonpositive risk sums skip the factor, and the final
//! product is clamped to `[0, 1]`. Every such event is counted in
//! [`ProductLimitDiagnostics`] so instability stays observable.

use crate::data::Dataset;
use crate::error::{Error, Result};

/// A right-continuous survival step function: value at `s` is the last
/// step at or before `s`, and 1 before the first step time.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSurvival {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl StepSurvival {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::invalid("times and values must have equal length"));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("step times must be strictly increasing"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("step values must lie in [0, 1]"));
        }
        if values.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::invalid("step values must be nonincreasing"));
        }
        Ok(StepSurvival { times, values })
    }

    /// Constant survival 1 (no jumps).
    pub fn one() -> Self {
        StepSurvival { times: Vec::new(), values: Vec::new() }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Right-continuous evaluation at `s`.
    pub fn eval(&self, s: f64) -> f64 {
        match self.times.partition_point(|&t| t <= s) {
            0 => 1.0,
            k => self.values[k - 1],
        }
    }

    /// Left limit at `s`: the value just before `s`.
    pub fn eval_left(&self, s: f64) -> f64 {
        match self.times.partition_point(|&t| t < s) {
            0 => 1.0,
            k => self.values[k - 1],
        }
    }
}

/// Sorted unique observed event times up to a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct EventGrid {
    times: Vec<f64>,
}

impl EventGrid {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Sorted unique event times of the cohort, truncated at `horizon`.
pub fn event_grid(dataset: &Dataset, horizon: f64) -> Result<EventGrid> {
    if !(horizon > 0.0) {
        return Err(Error::invalid("horizon must be positive"));
    }
    let mut times: Vec<f64> = dataset
        .subjects()
        .iter()
        .filter(|s| s.status == 1 && s.time <= horizon)
        .map(|s| s.time)
        .collect();
    times.sort_by(|a, b| a.total_cmp(b));
    times.dedup();
    Ok(EventGrid { times })
}

/// Counters describing how far the weighted ratios strayed from a proper
/// hazard, surfaced with every estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProductLimitDiagnostics {
    /// Increments with `D(s)/R(s) < 0` (kept as-is).
    pub negative_increments: u32,
    /// Increments with `D(s)/R(s) > 1` (capped at 1).
    pub capped_increments: u32,
    /// Grid points skipped because `R(s) <= 0`.
    pub skipped_factors: u32,
    /// Whether the final product needed clamping into `[0, 1]`.
    pub final_clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductLimitValue {
    pub value: f64,
    pub diagnostics: ProductLimitDiagnostics,
}

/// Shared ratio-product core: `prod_k (1 - D(k)/R(k))` over grid indices
/// with the clamping and skipping rules above. Errors if every factor
/// was skipped on a nonempty grid.
pub(crate) fn ratio_product(
    len: usize,
    mut num: impl FnMut(usize) -> f64,
    mut den: impl FnMut(usize) -> f64,
) -> Result<ProductLimitValue> {
    let mut diags = ProductLimitDiagnostics::default();
    let mut product = 1.0_f64;
    for k in 0..len {
        let r = den(k);
        if !(r > 0.0) {
            diags.skipped_factors += 1;
            continue;
        }
        let mut ratio = num(k) / r;
        if ratio < 0.0 {
            diags.negative_increments += 1;
        } else if ratio > 1.0 {
            diags.capped_increments += 1;
            ratio = 1.0;
        }
        product *= 1.0 - ratio;
    }
    if len > 0 && diags.skipped_factors as usize == len {
        return Err(Error::DegenerateEstimate);
    }
    let clamped = product.clamp(0.0, 1.0);
    diags.final_clamped = clamped != product;
    Ok(ProductLimitValue { value: clamped, diagnostics: diags })
}

/// Weighted product-limit estimator at time `t`:
/// `prod_{s in grid, s <= t} (1 - D(s)/R(s))` with
/// `D(s) = sum_i num_weights(i, k) dN_i(s)` and
/// `R(s) = sum_i den_weights(i, k) Y_i(s)`.
///
/// Weight callbacks receive the subject index and grid index. With all
/// weights 1 this is the standard Kaplan-Meier estimator.
pub fn weighted_product_limit(
    mut num_weights: impl FnMut(usize, usize) -> f64,
    mut den_weights: impl FnMut(usize, usize) -> f64,
    dataset: &Dataset,
    grid: &EventGrid,
    t: f64,
) -> Result<ProductLimitValue> {
    if !(t > 0.0) {
        return Err(Error::invalid("evaluation time must be positive"));
    }
    let times = grid.times();
    let len = times.partition_point(|&s| s <= t);
    let subjects = dataset.subjects();
    ratio_product(
        len,
        |k| {
            let s = times[k];
            subjects
                .iter()
                .enumerate()
                .filter(|(_, sub)| sub.status == 1 && sub.time == s)
                .map(|(i, _)| num_weights(i, k))
                .sum()
        },
        |k| {
            let s = times[k];
            subjects
                .iter()
                .enumerate()
                .filter(|(_, sub)| sub.time >= s)
                .map(|(i, _)| den_weights(i, k))
                .sum()
        },
    )
}

/// Standard Kaplan-Meier product-limit estimator. With `events = 1 -
/// status` this is the reverse-KM estimator of the censoring survival
/// function.
pub fn km_survival(times: &[f64], events: &[u8]) -> Result<StepSurvival> {
    if times.is_empty() {
        return Err(Error::invalid("km_survival needs at least one observation"));
    }
    if times.len() != events.len() {
        return Err(Error::invalid("times and events must have equal length"));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    let n = times.len();
    let mut step_times = Vec::new();
    let mut step_values = Vec::new();
    let mut surv = 1.0_f64;
    let mut i = 0;
    while i < n {
        let t = times[order[i]];
        let at_risk = (n - i) as f64;
        let mut d = 0.0;
        let mut j = i;
        while j < n && times[order[j]] == t {
            if events[order[j]] == 1 {
                d += 1.0;
            }
            j += 1;
        }
        if d > 0.0 {
            surv *= 1.0 - d / at_risk;
            step_times.push(t);
            step_values.push(surv.max(0.0));
        }
        i = j;
    }
    StepSurvival::new(step_times, step_values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, Subject};
    use proptest::prelude::*;

    fn dataset(times: &[f64], status: &[u8]) -> Dataset {
        Dataset::new(
            times
                .iter()
                .zip(status)
                .map(|(&t, &s)| Subject {
                    time: t,
                    status: s,
                    treatment: 0,
                    instrument: 0,
                    covariates: vec![0.0],
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn event_grid_dedups_and_truncates() {
        let d = dataset(&[1.0, 2.0, 2.0, 3.0], &[1, 0, 1, 1]);
        let g = event_grid(&d, 2.5).unwrap();
        assert_eq!(g.times(), &[1.0, 2.0]);
        let g2 = event_grid(&d, 0.5).unwrap();
        assert!(g2.is_empty());
    }

    #[test]
    fn km_hand_examples() {
        let s = km_survival(&[1.0, 2.0], &[1, 1]).unwrap();
        assert_eq!(s.eval(1.0), 0.5);
        assert_eq!(s.eval(2.0), 0.0);
        assert_eq!(s.eval(0.5), 1.0);

        let c = km_survival(&[1.0, 2.0], &[0, 0]).unwrap();
        assert_eq!(c.eval(5.0), 1.0);

        // tie at t=1: event and censoring; censored subject stays at risk
        let s = km_survival(&[1.0, 1.0, 2.0], &[1, 0, 1]).unwrap();
        assert!((s.eval(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.eval(2.0), 0.0);
    }

    #[test]
    fn step_survival_left_limit() {
        let s = StepSurvival::new(vec![1.0, 2.0], vec![0.6, 0.4]).unwrap();
        assert_eq!(s.eval_left(1.0), 1.0);
        assert_eq!(s.eval_left(1.5), 0.6);
        assert_eq!(s.eval_left(2.0), 0.6);
        assert_eq!(s.eval(2.0), 0.4);
    }

    #[test]
    fn unweighted_product_limit_matches_hand_values() {
        // times (1,2), both events: (1-1/2)(1-1/1) = 0
        let d = dataset(&[1.0, 2.0], &[1, 1]);
        let g = event_grid(&d, 2.0).unwrap();
        let v = weighted_product_limit(|_, _| 1.0, |_, _| 1.0, &d, &g, 2.0).unwrap();
        assert_eq!(v.value, 0.0);

        // times (1,2,3,4), status (1,0,1,0), t=3: (1-1/4)(1-1/2) = 0.375
        let d = dataset(&[1.0, 2.0, 3.0, 4.0], &[1, 0, 1, 0]);
        let g = event_grid(&d, 3.0).unwrap();
        let v = weighted_product_limit(|_, _| 1.0, |_, _| 1.0, &d, &g, 3.0).unwrap();
        assert!((v.value - 0.375).abs() < 1e-15);
    }

    #[test]
    fn subject_weights_enter_both_sums() {
        // weights (2,2,1), times (1,2,3) all events:
        // (1-2/5)(1-2/3)(1-1/1) = 0
        let d = dataset(&[1.0, 2.0, 3.0], &[1, 1, 1]);
        let g = event_grid(&d, 3.0).unwrap();
        let w = [2.0, 2.0, 1.0];
        let v = weighted_product_limit(|i, _| w[i], |i, _| w[i], &d, &g, 3.0).unwrap();
        assert_eq!(v.value, 0.0);
        // at t=2 the product is (1-2/5)(1-2/3) = 0.2
        let v = weighted_product_limit(|i, _| w[i], |i, _| w[i], &d, &g, 2.0).unwrap();
        assert!((v.value - 0.2).abs() < 1e-15);
    }

    #[test]
    fn negative_increment_kept_and_counted() {
        let d = dataset(&[1.0, 2.0, 3.0], &[1, 1, 0]);
        let g = event_grid(&d, 3.0).unwrap();
        let w = [-1.0, 2.0, 2.0];
        // s=1: D=-1, R=3 -> factor 4/3; s=2: D=2, R=4 -> factor 1/2
        let v = weighted_product_limit(|i, _| w[i], |i, _| w[i], &d, &g, 3.0).unwrap();
        assert!((v.value - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(v.diagnostics.negative_increments, 1);
        assert_eq!(v.diagnostics.capped_increments, 0);
        assert!(!v.diagnostics.final_clamped);
    }

    #[test]
    fn all_factors_skipped_is_degenerate() {
        let d = dataset(&[1.0, 2.0], &[1, 1]);
        let g = event_grid(&d, 2.0).unwrap();
        let r = weighted_product_limit(|_, _| 1.0, |_, _| 0.0, &d, &g, 2.0);
        assert!(matches!(r, Err(Error::DegenerateEstimate)));
    }

    #[test]
    fn empty_grid_evaluates_to_one() {
        let d = dataset(&[1.0, 2.0], &[0, 1]);
        let g = event_grid(&d, 3.0).unwrap();
        // t before the only event: empty product
        let v = weighted_product_limit(|_, _| 1.0, |_, _| 1.0, &d, &g, 1.5).unwrap();
        assert_eq!(v.value, 1.0);
    }

    proptest! {
        // all weights 1 reproduces km_survival at every horizon
        #[test]
        fn unweighted_equals_km(
            times in proptest::collection::vec(0.1f64..10.0, 2..40),
            seed in 0u64..1000,
        ) {
            let mut status: Vec<u8> = Vec::new();
            let mut s = seed;
            for _ in &times {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                status.push(((s >> 33) & 1) as u8);
            }
            prop_assume!(status.iter().any(|&x| x == 1));
            let d = dataset(&times, &status);
            let km = km_survival(&times, &status).unwrap();
            let g = event_grid(&d, 1e9).unwrap();
            for t in [0.5, 1.0, 3.0, 7.5, 10.0] {
                let v = weighted_product_limit(|_, _| 1.0, |_, _| 1.0, &d, &g, t).unwrap();
                prop_assert!((v.value - km.eval(t)).abs() < 1e-12);
            }
        }

        // multiplying both weight arrays by a constant leaves the value unchanged
        #[test]
        fn weight_scale_invariance(
            times in proptest::collection::vec(0.1f64..10.0, 2..30),
            c in 1e-3f64..1e3,
            seed in 0u64..1000,
        ) {
            let mut status: Vec<u8> = Vec::new();
            let mut weights: Vec<f64> = Vec::new();
            let mut s = seed;
            for _ in &times {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                status.push(((s >> 33) & 1) as u8);
                weights.push(0.1 + ((s >> 11) % 1000) as f64 / 100.0);
            }
            prop_assume!(status.iter().any(|&x| x == 1));
            let d = dataset(&times, &status);
            let g = event_grid(&d, 1e9).unwrap();
            let a = weighted_product_limit(|i, _| weights[i], |i, _| weights[i], &d, &g, 5.0).unwrap();
            let b = weighted_product_limit(|i, _| c * weights[i], |i, _| c * weights[i], &d, &g, 5.0).unwrap();
            prop_assert!((a.value - b.value).abs() < 1e-9);
        }

        // value always lands in [0,1] and is nonincreasing in t for
        // nonnegative weights
        #[test]
        fn monotone_for_nonnegative_weights(
            times in proptest::collection::vec(0.1f64..10.0, 2..30),
            seed in 0u64..1000,
        ) {
            let mut status: Vec<u8> = Vec::new();
            let mut weights: Vec<f64> = Vec::new();
            let mut s = seed;
            for _ in &times {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                status.push(((s >> 33) & 1) as u8);
                weights.push(0.1 + ((s >> 11) % 1000) as f64 / 100.0);
            }
            prop_assume!(status.iter().any(|&x| x == 1));
            let d = dataset(&times, &status);
            let g = event_grid(&d, 1e9).unwrap();
            let mut last = 1.0;
            for t in [1.0, 2.0, 4.0, 6.0, 8.0, 10.0] {
                let v = weighted_product_limit(|i, _| weights[i], |i, _| weights[i], &d, &g, t).unwrap();
                prop_assert!((0.0..=1.0).contains(&v.value));
                prop_assert!(v.value <= last + 1e-12);
                last = v.value;
            }
        }
    }
}
