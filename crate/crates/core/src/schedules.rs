//! Stepsize sequences for the surrogate weight `rho` and the model update
//! weight `gamma`, plus baseline learning rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleKind {
    PowerDecay,
    Constant,
}

/// `a / t^alpha` (power decay) or `a` (constant).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepsizeSchedule {
    pub coefficient: f64,
    pub exponent: f64,
    pub kind: ScheduleKind,
}

impl StepsizeSchedule {
    pub fn power(coefficient: f64, exponent: f64) -> Self {
        Self {
            coefficient,
            exponent,
            kind: ScheduleKind::PowerDecay,
        }
    }

    pub fn constant(coefficient: f64) -> Self {
        Self {
            coefficient,
            exponent: 0.0,
            kind: ScheduleKind::Constant,
        }
    }

    /// Effective decay exponent (zero for constant schedules).
    pub fn decay(&self) -> f64 {
        match self.kind {
            ScheduleKind::PowerDecay => self.exponent,
            ScheduleKind::Constant => 0.0,
        }
    }

    /// Raw schedule value with no range check, for learning rates.
    pub fn raw(&self, t: u32) -> Result<f64> {
        if t == 0 {
            return Err(Error::invalid("schedules are indexed from t = 1"));
        }
        Ok(match self.kind {
            ScheduleKind::PowerDecay => self.coefficient / f64::from(t).powf(self.exponent),
            ScheduleKind::Constant => self.coefficient,
        })
    }

    /// Schedule value as a convex-combination weight, required in `(0, 1]`.
    pub fn value(&self, t: u32) -> Result<f64> {
        let v = self.raw(t)?;
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::Range {
                value: v,
                range: "(0, 1]",
            });
        }
        Ok(v)
    }
}

/// Analytic check of a `(rho, gamma)` pair against the diminishing-stepsize
/// conditions used by the convergence theory. Report only; never blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleValidityReport {
    pub rho_ok: bool,
    pub gamma_square_summable: bool,
    pub gamma_over_rho_vanishes: bool,
    pub notes: Vec<String>,
}

impl ScheduleValidityReport {
    pub fn all_ok(&self) -> bool {
        self.rho_ok && self.gamma_square_summable && self.gamma_over_rho_vanishes
    }
}

pub fn validate_pair(rho: &StepsizeSchedule, gamma: &StepsizeSchedule) -> ScheduleValidityReport {
    let (ar, er) = (rho.coefficient, rho.decay());
    let (ag, eg) = (gamma.coefficient, gamma.decay());
    let mut notes = Vec::new();

    let rho_ok = er > 0.0 && er <= 1.0 && ar > 0.0 && ar <= 1.0;
    if !rho_ok {
        if er <= 0.0 {
            notes.push(format!("rho does not vanish (exponent {er})"));
        } else if er > 1.0 {
            notes.push(format!("rho is summable (exponent {er} > 1)"));
        } else {
            notes.push(format!("rho coefficient {ar} outside (0, 1]"));
        }
    }
    let gamma_square_summable = 2.0 * eg > 1.0;
    if !gamma_square_summable {
        notes.push(format!(
            "sum of gamma^2 diverges (p-series exponent {} <= 1)",
            2.0 * eg
        ));
    }
    let gamma_over_rho_vanishes = eg > er;
    if !gamma_over_rho_vanishes {
        notes.push(format!(
            "gamma/rho does not vanish (gamma exponent {eg} <= rho exponent {er})"
        ));
    }
    if !(ag > 0.0 && ag <= 1.0) {
        notes.push(format!("gamma coefficient {ag} outside (0, 1]"));
    }
    if eg > 1.0 {
        notes.push(format!("gamma is summable (exponent {eg} > 1)"));
    }

    ScheduleValidityReport {
        rho_ok,
        gamma_square_summable,
        gamma_over_rho_vanishes,
        notes,
    }
}
