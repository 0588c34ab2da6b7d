//! Recursively averaged quadratic surrogates.
//!
//! With the first-order-plus-proximal sample surrogate, the running average
//! of sample surrogates collapses to `const + <linear, w> + tau |w|^2`, so the
//! whole surrogate history is carried by one scalar and one vector per
//! function.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::{all_finite, axpy, dot, norm_sq};

/// `constant + <linear, w> + curvature * |w|^2`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSurrogate {
    pub constant: f64,
    pub linear: Vec<f64>,
    pub curvature: f64,
}

impl QuadraticSurrogate {
    /// The all-zero surrogate of dimension `dim` with the given curvature.
    pub fn zero(dim: usize, curvature: f64) -> Result<Self> {
        if !(curvature > 0.0) || !curvature.is_finite() {
            return Err(Error::invalid(format!(
                "curvature {curvature} must be positive"
            )));
        }
        Ok(Self {
            constant: 0.0,
            linear: vec![0.0; dim],
            curvature,
        })
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn eval(&self, omega: &[f64]) -> Result<f64> {
        check_len("surrogate eval", self.dim(), omega.len())?;
        Ok(self.constant + dot(&self.linear, omega) + self.curvature * norm_sq(omega))
    }

    pub fn gradient(&self, omega: &[f64]) -> Result<Vec<f64>> {
        check_len("surrogate gradient", self.dim(), omega.len())?;
        Ok(self
            .linear
            .iter()
            .zip(omega)
            .map(|(l, w)| l + 2.0 * self.curvature * w)
            .collect())
    }

    fn blend_linear(&mut self, rho: f64, omega: &[f64], grad: &[f64]) {
        let two_tau = 2.0 * self.curvature;
        for ((l, g), w) in self.linear.iter_mut().zip(grad).zip(omega) {
            *l = (1.0 - rho) * *l + rho * (g - two_tau * w);
        }
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::invalid(format!("rho = {rho} outside (0, 1]")));
    }
    Ok(())
}

/// Surrogates for the objective and `M` constraints, all sharing one `tau`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateBank {
    pub objective: QuadraticSurrogate,
    pub constraints: Vec<QuadraticSurrogate>,
    pub round: u64,
}

impl SurrogateBank {
    pub fn new(dim: usize, constraints: usize, tau: f64) -> Result<Self> {
        let objective = QuadraticSurrogate::zero(dim, tau)?;
        Ok(Self {
            constraints: vec![objective.clone(); constraints],
            objective,
            round: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn tau(&self) -> f64 {
        self.objective.curvature
    }

    /// `linear <- (1 - rho) linear + rho (g - 2 tau w_t)`, where `g` is the
    /// weighted batch-average objective gradient at `w_t`.
    pub fn accumulate_objective(
        &mut self,
        rho: f64,
        omega: &[f64],
        batch_avg_grad: &[f64],
    ) -> Result<()> {
        check_rho(rho)?;
        check_len("objective omega", self.dim(), omega.len())?;
        check_len("objective gradient", self.dim(), batch_avg_grad.len())?;
        self.objective.blend_linear(rho, omega, batch_avg_grad);
        finite_or_err(&self.objective)
    }

    /// Updates constraint `m` (1-based) with the batch-average value and
    /// gradient at `w_t`.
    pub fn accumulate_constraint(
        &mut self,
        m: usize,
        rho: f64,
        omega: &[f64],
        batch_avg_value: f64,
        batch_avg_grad: &[f64],
    ) -> Result<()> {
        check_rho(rho)?;
        if m == 0 || m > self.constraints.len() {
            return Err(Error::invalid(format!(
                "constraint index {m} outside 1..={}",
                self.constraints.len()
            )));
        }
        let dim = self.dim();
        check_len("constraint omega", dim, omega.len())?;
        check_len("constraint gradient", dim, batch_avg_grad.len())?;
        let s = &mut self.constraints[m - 1];
        let fresh = batch_avg_value - dot(batch_avg_grad, omega) + s.curvature * norm_sq(omega);
        s.constant = (1.0 - rho) * s.constant + rho * fresh;
        s.blend_linear(rho, omega, batch_avg_grad);
        finite_or_err(s)
    }

    /// One full round: objective plus every constraint, then bumps the round
    /// counter. `constraint_stats[m]` is `(value, gradient)` of constraint
    /// `m + 1`.
    pub fn accumulate_round(
        &mut self,
        rho: f64,
        omega: &[f64],
        objective_grad: &[f64],
        constraint_stats: &[(f64, Vec<f64>)],
    ) -> Result<()> {
        check_len(
            "constraint stats",
            self.constraints.len(),
            constraint_stats.len(),
        )?;
        self.accumulate_objective(rho, omega, objective_grad)?;
        for (m, (value, grad)) in constraint_stats.iter().enumerate() {
            self.accumulate_constraint(m + 1, rho, omega, *value, grad)?;
        }
        self.round += 1;
        Ok(())
    }
}

fn finite_or_err(s: &QuadraticSurrogate) -> Result<()> {
    if !s.constant.is_finite() || !all_finite(&s.linear) {
        let coordinate = s.linear.iter().position(|x| !x.is_finite()).unwrap_or(0);
        return Err(Error::Numeric {
            coordinate,
            detail: "surrogate coefficients overflowed".into(),
        });
    }
    Ok(())
}

/// Adds `alpha * x` into the surrogate's linear term.
pub fn shift_linear(s: &mut QuadraticSurrogate, alpha: f64, x: &[f64]) -> Result<()> {
    check_len("linear shift", s.dim(), x.len())?;
    axpy(alpha, x, &mut s.linear);
    Ok(())
}
