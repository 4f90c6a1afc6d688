//! Profiles, outcomes and the three design constraints as checkable predicates.

use std::ops::Deref;

use serde::Serialize;

use crate::error::{Error, Result};

/// Absolute slack used for budget balance and individual rationality.
pub const BUDGET_TOL: f64 = 1e-9;
pub const IR_TOL: f64 = 1e-9;

/// Reported valuations, one per agent, each in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TypeProfile(Vec<f64>);

impl TypeProfile {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("a profile needs at least one agent".into()));
        }
        for &v in &values {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfDomain {
                    name: "valuation",
                    value: v,
                    domain: "[0, 1]",
                });
            }
        }
        Ok(TypeProfile(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// The same profile with agent `agent` reporting `report` instead.
    pub fn with_report(&self, agent: usize, report: f64) -> TypeProfile {
        let mut values = self.0.clone();
        values[agent] = report;
        TypeProfile(values)
    }
}

impl Deref for TypeProfile {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Per-agent release times and payments.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Outcome {
    pub release_times: Vec<f64>,
    pub payments: Vec<f64>,
    pub built: bool,
}

impl Outcome {
    /// Nobody consumes, nobody pays.
    pub fn not_built(n: usize) -> Self {
        Outcome {
            release_times: vec![1.0; n],
            payments: vec![0.0; n],
            built: false,
        }
    }

    pub fn len(&self) -> usize {
        self.release_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.release_times.is_empty()
    }

    pub fn max_delay(&self) -> f64 {
        self.release_times.iter().copied().fold(0.0, f64::max)
    }

    pub fn sum_delay(&self) -> f64 {
        self.release_times.iter().sum()
    }

    pub fn total_payment(&self) -> f64 {
        self.payments.iter().sum()
    }

    pub fn utility_of(&self, agent: usize, value: f64) -> f64 {
        utility(value, self.release_times[agent], self.payments[agent])
    }
}

/// Utility of an agent with valuation `v` who starts consuming at `t` and pays `p`.
#[inline]
pub fn utility(v: f64, t: f64, p: f64) -> f64 {
    v * (1.0 - t) - p
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Violation {
    ReleaseTimeOutOfRange {
        agent: usize,
        release_time: f64,
    },
    NegativePayment {
        agent: usize,
        payment: f64,
    },
    IndividualRationality {
        agent: usize,
        utility: f64,
    },
    /// Built, but payments do not sum to the unit cost.
    BudgetImbalance {
        total_payment: f64,
    },
    /// Not built, yet some agent consumes or pays.
    UnbuiltNotExcluded {
        agent: usize,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks an outcome against the range, individual rationality and budget
/// constraints. `budget_exempt` skips the budget rule entirely.
pub fn check_outcome(profile: &[f64], outcome: &Outcome, budget_exempt: bool) -> Result<ValidationReport> {
    let n = profile.len();
    for got in [outcome.release_times.len(), outcome.payments.len()] {
        if got != n {
            return Err(Error::LengthMismatch { expected: n, got });
        }
    }
    let mut violations = Vec::new();
    for (agent, ((&v, &t), &p)) in profile
        .iter()
        .zip(&outcome.release_times)
        .zip(&outcome.payments)
        .enumerate()
    {
        if !(0.0..=1.0).contains(&t) {
            violations.push(Violation::ReleaseTimeOutOfRange { agent, release_time: t });
        }
        if p < 0.0 {
            violations.push(Violation::NegativePayment { agent, payment: p });
        }
        let u = utility(v, t, p);
        if u < -IR_TOL {
            violations.push(Violation::IndividualRationality { agent, utility: u });
        }
        if !budget_exempt && !outcome.built && (t != 1.0 || p != 0.0) {
            violations.push(Violation::UnbuiltNotExcluded { agent });
        }
    }
    if !budget_exempt && outcome.built {
        let total = outcome.total_payment();
        if (total - 1.0).abs() > BUDGET_TOL {
            violations.push(Violation::BudgetImbalance { total_payment: total });
        }
    }
    Ok(ValidationReport { violations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utility_examples() {
        assert!((utility(0.8, 0.0, 0.5) - 0.3).abs() < 1e-12);
        assert_eq!(utility(0.7, 1.0, 0.0), 0.0);
        assert!((utility(0.5, 0.5, 0.1) - 0.15).abs() < 1e-12);
    }

    #[test]
    fn profile_rejects_out_of_range() {
        assert!(TypeProfile::new(vec![0.2, 1.2]).is_err());
        assert!(TypeProfile::new(vec![]).is_err());
        assert!(TypeProfile::new(vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn optimal_deadline_outcome_is_clean() {
        let outcome = Outcome {
            release_times: vec![0.0, 0.0, 0.625, 0.625],
            payments: vec![0.5, 0.5, 0.0, 0.0],
            built: true,
        };
        let report = check_outcome(&[0.9, 0.8, 0.26, 0.26], &outcome, false).unwrap();
        assert!(report.is_clean(), "{report:?}");
    }

    #[test]
    fn unbuilt_outcome_is_clean() {
        let report = check_outcome(&[0.3, 0.9, 0.1], &Outcome::not_built(3), false).unwrap();
        assert!(report.is_clean());
    }

    #[test]
    fn missing_payments_flag_budget() {
        let outcome = Outcome {
            release_times: vec![0.5, 0.5],
            payments: vec![0.0, 0.0],
            built: true,
        };
        let report = check_outcome(&[0.4, 0.3], &outcome, false).unwrap();
        assert_eq!(
            report.violations,
            vec![Violation::BudgetImbalance { total_payment: 0.0 }]
        );
        assert!(check_outcome(&[0.4, 0.3], &outcome, true).unwrap().is_clean());
    }

    #[test]
    fn ir_and_range_violations() {
        let outcome = Outcome {
            release_times: vec![0.0, 1.5],
            payments: vec![0.9, -0.1],
            built: true,
        };
        let report = check_outcome(&[0.5, 0.5], &outcome, true).unwrap();
        assert!(report.violations.contains(&Violation::IndividualRationality {
            agent: 0,
            utility: 0.5 - 0.9
        }));
        assert!(report.violations.contains(&Violation::ReleaseTimeOutOfRange {
            agent: 1,
            release_time: 1.5
        }));
        assert!(report.violations.contains(&Violation::NegativePayment {
            agent: 1,
            payment: -0.1
        }));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let err = check_outcome(&[0.5], &Outcome::not_built(2), false).unwrap_err();
        assert_eq!(err, Error::LengthMismatch { expected: 1, got: 2 });
    }
}
