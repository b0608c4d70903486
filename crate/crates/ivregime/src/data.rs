//! Observed-data records, validated cohorts, and linear treatment regimes.
//!
//! A subject carries the right-censored observation (follow-up time,
//! event status) together with the binary treatment actually received,
//! the binary instrument, and the baseline covariate vector. A regime is
//! a unit-norm coefficient vector `eta` over `(1, L)`; it assigns
//! treatment 1 exactly when the linear index is nonnegative.

use crate::error::{Error, Result, ValidationIssue};

pub const UNIT_NORM_TOL: f64 = 1e-12;

/// One observed record: follow-up time, event status, treatment,
/// instrument, covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    /// Observed follow-up: minimum of the event and censoring times.
    pub time: f64,
    /// 1 if the event was observed, 0 if censored.
    pub status: u8,
    /// Treatment received.
    pub treatment: u8,
    /// Binary instrument.
    pub instrument: u8,
    pub covariates: Vec<f64>,
}

/// Unvalidated row as parsed from external input.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub time: f64,
    pub status: f64,
    pub treatment: f64,
    pub instrument: f64,
    pub covariates: Vec<f64>,
}

/// A validated, immutable cohort. Construction enforces every invariant;
/// estimators never mutate a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    subjects: Vec<Subject>,
    p: usize,
}

fn check_binary(value: f64, field: &'static str, row: usize, issues: &mut Vec<ValidationIssue>) {
    if value != 0.0 && value != 1.0 {
        issues.push(ValidationIssue {
            row: Some(row),
            field,
            message: format!("expected 0 or 1, got {value}"),
        });
    }
}

/// Validate raw rows into a [`Dataset`], or report the complete list of
/// violations. Nothing is silently dropped.
pub fn validate_dataset(rows: &[RawRow]) -> std::result::Result<Dataset, Vec<ValidationIssue>> {
    let mut issues = Vec::new();
    if rows.is_empty() {
        issues.push(ValidationIssue {
            row: None,
            field: "subjects",
            message: "empty dataset".into(),
        });
        return Err(issues);
    }
    let p = rows[0].covariates.len();
    for (i, r) in rows.iter().enumerate() {
        if !r.time.is_finite() || r.time < 0.0 {
            issues.push(ValidationIssue {
                row: Some(i),
                field: "time",
                message: format!("expected finite nonnegative time, got {}", r.time),
            });
        }
        check_binary(r.status, "status", i, &mut issues);
        check_binary(r.treatment, "treatment", i, &mut issues);
        check_binary(r.instrument, "instrument", i, &mut issues);
        if r.covariates.len() != p {
            issues.push(ValidationIssue {
                row: Some(i),
                field: "covariates",
                message: format!("expected {} covariates, got {}", p, r.covariates.len()),
            });
        }
        for (j, c) in r.covariates.iter().enumerate() {
            if !c.is_finite() {
                issues.push(ValidationIssue {
                    row: Some(i),
                    field: "covariates",
                    message: format!("covariate {} is not finite: {}", j + 1, c),
                });
            }
        }
    }
    if issues.is_empty() && !rows.iter().any(|r| r.status == 1.0) {
        issues.push(ValidationIssue {
            row: None,
            field: "status",
            message: "no events: every subject is censored".into(),
        });
    }
    if !issues.is_empty() {
        return Err(issues);
    }
    let subjects = rows
        .iter()
        .map(|r| Subject {
            time: r.time,
            status: r.status as u8,
            treatment: r.treatment as u8,
            instrument: r.instrument as u8,
            covariates: r.covariates.clone(),
        })
        .collect();
    Ok(Dataset { subjects, p })
}

impl Dataset {
    /// Validate already-typed subjects into a dataset.
    pub fn new(subjects: Vec<Subject>) -> Result<Self> {
        let rows: Vec<RawRow> = subjects
            .iter()
            .map(|s| RawRow {
                time: s.time,
                status: s.status as f64,
                treatment: s.treatment as f64,
                instrument: s.instrument as f64,
                covariates: s.covariates.clone(),
            })
            .collect();
        validate_dataset(&rows).map_err(Error::Validation)
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Covariate dimension shared by every subject.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_events(&self) -> usize {
        self.subjects.iter().filter(|s| s.status == 1).count()
    }

    pub fn censoring_fraction(&self) -> f64 {
        1.0 - self.n_events() as f64 / self.len() as f64
    }

    pub fn covariate_rows(&self) -> Vec<Vec<f64>> {
        self.subjects.iter().map(|s| s.covariates.clone()).collect()
    }
}

/// A linear treatment rule indexed by a unit-norm coefficient vector over
/// `(1, L)`. The sign of `eta` is meaningful: `eta` and `-eta` are
/// distinct regimes.
#[derive(Debug, Clone, PartialEq)]
pub struct Regime {
    eta: Vec<f64>,
}

impl Regime {
    /// Normalize a raw coefficient vector to unit Euclidean norm. The
    /// induced decision rule is invariant to positive scaling of the
    /// input.
    pub fn normalize(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::invalid("regime vector must be nonempty"));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("regime vector must be finite"));
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::invalid("regime vector must have a nonzero entry"));
        }
        Ok(Regime {
            eta: raw.iter().map(|v| v / norm).collect(),
        })
    }

    /// Accept a vector that is already unit norm to within `1e-12`.
    pub fn from_unit(eta: Vec<f64>) -> Result<Self> {
        let norm = eta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::invalid(format!(
                "regime vector norm {norm} is not 1 within {UNIT_NORM_TOL:e}"
            )));
        }
        Ok(Regime { eta })
    }

    /// The constant rule assigning treatment 1 to everyone.
    pub fn treat_all(p: usize) -> Self {
        let mut eta = vec![0.0; p + 1];
        eta[0] = 1.0;
        Regime { eta }
    }

    /// The constant rule assigning treatment 0 to everyone.
    pub fn treat_none(p: usize) -> Self {
        let mut eta = vec![0.0; p + 1];
        eta[0] = -1.0;
        Regime { eta }
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    /// Length of `eta`, i.e. `p + 1`.
    pub fn dim(&self) -> usize {
        self.eta.len()
    }

    /// Linear index `(1, L) . eta`.
    pub fn index(&self, covariates: &[f64]) -> Result<f64> {
        if covariates.len() + 1 != self.eta.len() {
            return Err(Error::invalid(format!(
                "regime has dimension {}, covariates have length {}",
                self.eta.len(),
                covariates.len()
            )));
        }
        let mut v = self.eta[0];
        for (c, e) in covariates.iter().zip(&self.eta[1..]) {
            v += c * e;
        }
        Ok(v)
    }

    /// Assigned treatment: 1 exactly when the index is nonnegative
    /// (boundary points are treated).
    pub fn decide(&self, covariates: &[f64]) -> Result<u8> {
        Ok(u8::from(self.index(covariates)? >= 0.0))
    }
}

/// Spec-level free function form of [`Regime::decide`].
pub fn regime_decide(regime: &Regime, covariates: &[f64]) -> Result<u8> {
    regime.decide(covariates)
}

/// Spec-level free function form of [`Regime::normalize`].
pub fn regime_normalize(raw: &[f64]) -> Result<Regime> {
    Regime::normalize(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn subj(time: f64, status: u8, a: u8, z: u8, covs: &[f64]) -> Subject {
        Subject {
            time,
            status,
            treatment: a,
            instrument: z,
            covariates: covs.to_vec(),
        }
    }

    #[test]
    fn decide_matches_true_regime_examples() {
        // (0, 0.707, -0.707) is only unit norm to 4 digits; from_unit is strict
        assert!(Regime::from_unit(vec![0.0, 0.707, -0.707]).is_err());
        let r = Regime::normalize(&[0.0, 1.0, -1.0]).unwrap();
        assert_eq!(r.decide(&[1.0, 0.0]).unwrap(), 1);
        // boundary assigned to treatment 1
        assert_eq!(r.decide(&[1.0, 1.0]).unwrap(), 1);
        let none = Regime::normalize(&[-1.0, 0.0, 0.0]).unwrap();
        assert_eq!(none.decide(&[3.0, -7.0]).unwrap(), 0);
        assert_eq!(none.decide(&[0.0, 0.0]).unwrap(), 0);
    }

    #[test]
    fn normalize_examples() {
        let r = Regime::normalize(&[0.0, 1.0, -1.0]).unwrap();
        let s = 0.5_f64.sqrt();
        assert!((r.eta()[1] - s).abs() < 1e-15);
        assert!((r.eta()[2] + s).abs() < 1e-15);
        // idempotence
        let r2 = Regime::normalize(r.eta()).unwrap();
        for (a, b) in r.eta().iter().zip(r2.eta()) {
            assert!((a - b).abs() < 1e-15);
        }
        let r3 = Regime::normalize(&[2.0, 0.0, 0.0]).unwrap();
        assert_eq!(r3.eta(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_rejects_zero_vector() {
        assert!(matches!(
            Regime::normalize(&[0.0, 0.0]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn decide_rejects_dimension_mismatch() {
        let r = Regime::normalize(&[1.0, 1.0]).unwrap();
        assert!(r.decide(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn validate_accepts_well_formed_rows() {
        let rows = vec![
            RawRow { time: 1.0, status: 1.0, treatment: 0.0, instrument: 1.0, covariates: vec![0.5] },
            RawRow { time: 2.0, status: 0.0, treatment: 1.0, instrument: 0.0, covariates: vec![-0.5] },
            RawRow { time: 0.5, status: 1.0, treatment: 1.0, instrument: 1.0, covariates: vec![0.0] },
        ];
        let d = validate_dataset(&rows).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.p(), 1);
        assert_eq!(d.n_events(), 2);
    }

    #[test]
    fn validate_reports_bad_treatment_with_row_and_field() {
        let rows = vec![
            RawRow { time: 1.0, status: 1.0, treatment: 2.0, instrument: 1.0, covariates: vec![0.0] },
        ];
        let issues = validate_dataset(&rows).unwrap_err();
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].row, Some(0));
        assert_eq!(issues[0].field, "treatment");
    }

    #[test]
    fn validate_rejects_all_censored() {
        let rows = vec![
            RawRow { time: 1.0, status: 0.0, treatment: 1.0, instrument: 1.0, covariates: vec![0.0] },
            RawRow { time: 2.0, status: 0.0, treatment: 0.0, instrument: 0.0, covariates: vec![0.0] },
        ];
        let issues = validate_dataset(&rows).unwrap_err();
        assert!(issues.iter().any(|i| i.row.is_none() && i.field == "status"));
    }

    #[test]
    fn dataset_new_rejects_inconsistent_dimensions() {
        let err = Dataset::new(vec![
            subj(1.0, 1, 0, 0, &[1.0]),
            subj(2.0, 0, 1, 1, &[1.0, 2.0]),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    proptest! {
        // positive-scaling invariance of the decision rule
        #[test]
        fn decision_invariant_to_positive_scaling(
            raw in proptest::collection::vec(-10.0f64..10.0, 3),
            covs in proptest::collection::vec(-5.0f64..5.0, 2),
            c in 1e-3f64..1e3,
        ) {
            prop_assume!(raw.iter().any(|v| v.abs() > 1e-6));
            let scaled: Vec<f64> = raw.iter().map(|v| v * c).collect();
            let a = Regime::normalize(&raw).unwrap().decide(&covs).unwrap();
            let b = Regime::normalize(&scaled).unwrap().decide(&covs).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn normalized_regimes_are_unit_norm(
            raw in proptest::collection::vec(-10.0f64..10.0, 1..6),
        ) {
            prop_assume!(raw.iter().any(|v| v.abs() > 1e-6));
            let r = Regime::normalize(&raw).unwrap();
            let norm: f64 = r.eta().iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() <= UNIT_NORM_TOL);
        }
    }
}
