//! Subproblem solvers for the surrogate problems solved by the server.
//!
//! - [`solve_unconstrained`]: minimizer of a single quadratic surrogate.
//! - [`solve_penalized_ball`]: closed form for
//!   `min |w|^2 + c s  s.t.  <a, w> + tau |w|^2 + C - U <= s, s >= 0`.
//! - [`dual_bisection_oracle`]: the same problem solved through its
//!   one-dimensional dual by bisection; used to cross-check the closed form.
//! - [`solve_qcqp_barrier`]: log-barrier method for the slack-penalized QCQP
//!   with any number of quadratic constraints.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::{all_finite, dot, norm_sq};
use crate::surrogate::QuadraticSurrogate;

/// `w = -linear / (2 tau)`
pub fn solve_unconstrained(surrogate: &QuadraticSurrogate) -> Vec<f64> {
    let inv = -1.0 / (2.0 * surrogate.curvature);
    surrogate.linear.iter().map(|l| inv * l).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenalizedSolveResult {
    pub omega_bar: Vec<f64>,
    pub slack: Vec<f64>,
    pub dual: Vec<f64>,
    /// Constraint holds with equality (`F_m(w) = s_m`) at the solution.
    pub active: Vec<bool>,
}

/// Single-constraint problem with a squared-norm objective.
#[derive(Clone, Debug, PartialEq)]
pub struct BallProblem {
    pub a_lin: Vec<f64>,
    pub tau: f64,
    pub constant: f64,
    pub ubound: f64,
    pub penalty: f64,
}

impl BallProblem {
    fn validate(&self) -> Result<()> {
        let scalars = [self.tau, self.constant, self.ubound, self.penalty];
        if let Some(k) = self.a_lin.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric {
                coordinate: k,
                detail: "non-finite linear coefficient".into(),
            });
        }
        if scalars.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric {
                coordinate: 0,
                detail: format!("non-finite scalar input {scalars:?}"),
            });
        }
        if !(self.tau > 0.0) || !(self.penalty > 0.0) {
            return Err(Error::invalid(format!(
                "tau = {} and c = {} must be positive",
                self.tau, self.penalty
            )));
        }
        Ok(())
    }

    /// `b = |a|^2`
    pub fn b(&self) -> f64 {
        norm_sq(&self.a_lin)
    }

    /// Constraint value `<a, w> + tau |w|^2 + C - U` (before the slack).
    pub fn constraint_value(&self, omega: &[f64]) -> f64 {
        dot(&self.a_lin, omega) + self.tau * norm_sq(omega) + self.constant - self.ubound
    }

    /// Primal minimizer of the Lagrangian for a given multiplier.
    pub fn omega_at(&self, nu: f64) -> Vec<f64> {
        let k = -nu / (2.0 * (1.0 + nu * self.tau));
        self.a_lin.iter().map(|a| k * a).collect()
    }

    /// Dual function `h(nu) = nu (C - U - b nu / (4 (1 + tau nu)))`.
    pub fn dual_value(&self, nu: f64) -> f64 {
        nu * (self.constant - self.ubound - self.b() * nu / (4.0 * (1.0 + self.tau * nu)))
    }

    /// `h'(nu)`, decreasing in `nu`.
    pub fn dual_slope(&self, nu: f64) -> f64 {
        let q = 1.0 + self.tau * nu;
        self.constant - self.ubound - self.b() * nu * (2.0 + self.tau * nu) / (4.0 * q * q)
    }

    /// Objective `[|w|^2]` and constraint `[C - U + <a, w> + tau |w|^2]` as
    /// quadratic surrogates, for the general barrier solver.
    pub fn as_qcqp(&self) -> (QuadraticSurrogate, QuadraticSurrogate) {
        let objective = QuadraticSurrogate {
            constant: 0.0,
            linear: vec![0.0; self.a_lin.len()],
            curvature: 1.0,
        };
        let constraint = QuadraticSurrogate {
            constant: self.constant - self.ubound,
            linear: self.a_lin.clone(),
            curvature: self.tau,
        };
        (objective, constraint)
    }

    fn finish(&self, nu: f64) -> PenalizedSolveResult {
        let omega_bar = self.omega_at(nu);
        let slack = self.constraint_value(&omega_bar).max(0.0);
        PenalizedSolveResult {
            omega_bar,
            slack: vec![slack],
            dual: vec![nu],
            active: vec![nu > 0.0],
        }
    }
}

/// Closed-form multiplier for [`BallProblem`].
///
/// With `D = b + 4 tau (U - C)`: if `D > 0`,
/// `nu = clamp((sqrt(b / D) - 1) / tau, 0, c)`, otherwise `nu = c`.
pub fn closed_form_multiplier(p: &BallProblem) -> f64 {
    let b = p.b();
    let disc = b + 4.0 * p.tau * (p.ubound - p.constant);
    if disc > 0.0 {
        (((b / disc).sqrt() - 1.0) / p.tau).clamp(0.0, p.penalty)
    } else {
        p.penalty
    }
}

pub fn solve_penalized_ball(p: &BallProblem) -> Result<PenalizedSolveResult> {
    p.validate()?;
    Ok(p.finish(closed_form_multiplier(p)))
}

/// Maximizes the concave dual over `[0, c]` by bisection on its slope.
pub fn dual_bisection_oracle(p: &BallProblem) -> Result<PenalizedSolveResult> {
    p.validate()?;
    let nu = if p.dual_slope(0.0) <= 0.0 {
        0.0
    } else if p.dual_slope(p.penalty) >= 0.0 {
        p.penalty
    } else {
        let (mut lo, mut hi) = (0.0f64, p.penalty);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if p.dual_slope(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    Ok(p.finish(nu))
}

/// First-order optimality residuals of a penalized QCQP solution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktResiduals {
    /// `|grad F_0 + sum nu_m grad F_m|_inf`, plus any violation of `0 <= nu <= c`.
    pub stationarity: f64,
    /// Largest violation of `F_m(w) <= s_m` or `s_m >= 0`.
    pub primal: f64,
    /// Largest of `|nu_m (F_m(w) - s_m)|` and `|(c - nu_m) s_m|`.
    pub complementarity: f64,
}

pub fn kkt_residuals(
    objective: &QuadraticSurrogate,
    constraints: &[QuadraticSurrogate],
    penalty: f64,
    sol: &PenalizedSolveResult,
) -> Result<KktResiduals> {
    let w = &sol.omega_bar;
    let mut grad = objective.gradient(w)?;
    let mut primal = 0.0f64;
    let mut comp = 0.0f64;
    let mut dual_violation = 0.0f64;
    for ((con, &nu), &s) in constraints.iter().zip(&sol.dual).zip(&sol.slack) {
        let g = con.gradient(w)?;
        for (acc, gi) in grad.iter_mut().zip(&g) {
            *acc += nu * gi;
        }
        let v = con.eval(w)?;
        primal = primal.max(v - s).max(-s);
        comp = comp
            .max((nu * (v - s)).abs())
            .max(((penalty - nu) * s).abs());
        dual_violation = dual_violation.max(-nu).max(nu - penalty);
    }
    let stationarity = grad.iter().fold(0.0f64, |m, x| m.max(x.abs())) + dual_violation.max(0.0);
    Ok(KktResiduals {
        stationarity,
        primal: primal.max(0.0),
        complementarity: comp,
    })
}

/// Barrier settings. Defaults: initial barrier weight at least 1 (raised to
/// `c sum s_0 / 2M` when larger), decrease factor 10,
/// Newton tolerance `tol / 10`, at most 200 Newton steps per centering.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarrierOptions {
    pub tol: f64,
    pub initial_weight: f64,
    pub decrease: f64,
    pub max_newton: usize,
}

impl BarrierOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            initial_weight: 1.0,
            decrease: 10.0,
            max_newton: 200,
        }
    }
}

/// `min F_0(w) + c sum s_m  s.t.  F_m(w) <= s_m, s_m >= 0` by the log-barrier
/// method, started from `w = 0`, `s_m = max(0, F_m(0)) + 1`. Stops once the
/// duality gap is below `tol * max(1, |objective|)`.
pub fn solve_qcqp_barrier(
    objective: &QuadraticSurrogate,
    constraints: &[QuadraticSurrogate],
    penalty: f64,
    tol: f64,
) -> Result<PenalizedSolveResult> {
    solve_qcqp_barrier_with(
        objective,
        constraints,
        penalty,
        BarrierOptions::with_tol(tol),
    )
}

pub fn solve_qcqp_barrier_with(
    objective: &QuadraticSurrogate,
    constraints: &[QuadraticSurrogate],
    penalty: f64,
    opts: BarrierOptions,
) -> Result<PenalizedSolveResult> {
    let d = objective.dim();
    let m = constraints.len();
    if m == 0 {
        return Err(Error::invalid(
            "barrier solver needs at least one constraint",
        ));
    }
    if !(objective.curvature > 0.0) {
        return Err(Error::invalid("objective curvature must be positive"));
    }
    if !(penalty > 0.0) || !(opts.tol > 0.0) {
        return Err(Error::invalid(format!(
            "c = {penalty}, tol = {} must be positive",
            opts.tol
        )));
    }
    for con in constraints {
        check_len("barrier constraint", d, con.dim())?;
        if !(con.curvature >= 0.0) {
            return Err(Error::invalid("constraint curvature must be nonnegative"));
        }
    }
    let problem = Barrier {
        objective,
        constraints,
        penalty,
    };
    let mut omega = vec![0.0; d];
    let mut slack: Vec<f64> = constraints
        .iter()
        .map(|c| c.constant.max(0.0) + 1.0)
        .collect();

    // Starting near the scale of the penalty term keeps the first centering
    // short when c is large.
    let mut mu = opts
        .initial_weight
        .max(penalty * slack.iter().sum::<f64>() / (2.0 * m as f64));
    loop {
        problem.center(&mut omega, &mut slack, mu, opts)?;
        // Relative duality gap: with a large penalty on an infeasible
        // constraint an absolute gap below the ulp of the objective cannot be
        // resolved.
        let value = objective.eval(&omega)? + penalty * slack.iter().sum::<f64>();
        if 2.0 * m as f64 * mu <= opts.tol * value.abs().max(1.0) {
            break;
        }
        mu /= opts.decrease;
    }

    let mut dual = Vec::with_capacity(m);
    let mut active = Vec::with_capacity(m);
    let mut final_slack = Vec::with_capacity(m);
    for (con, s) in constraints.iter().zip(&slack) {
        let v = con.eval(&omega)?;
        let r = s - v;
        dual.push((mu / r).min(penalty));
        active.push(r <= opts.tol.sqrt() || v >= -opts.tol.sqrt());
        final_slack.push(v.max(0.0));
    }
    refine_duals(objective, constraints, &omega, &active, penalty, &mut dual)?;
    Ok(PenalizedSolveResult {
        omega_bar: omega,
        slack: final_slack,
        dual,
        active,
    })
}

/// Near tight constraints `mu / r` is a poor multiplier estimate even when
/// `w` is accurate, because `r` and `s` vanish together. Active multipliers
/// are recomputed as the least-squares solution of the stationarity
/// condition, clamped to `[0, c]`.
fn refine_duals(
    objective: &QuadraticSurrogate,
    constraints: &[QuadraticSurrogate],
    omega: &[f64],
    active: &[bool],
    penalty: f64,
    dual: &mut [f64],
) -> Result<()> {
    let idx: Vec<usize> = (0..constraints.len()).filter(|&k| active[k]).collect();
    if idx.is_empty() {
        return Ok(());
    }
    let d = omega.len();
    let mut target = DVector::from_vec(objective.gradient(omega)?);
    for (k, con) in constraints.iter().enumerate() {
        if !active[k] {
            let g = con.gradient(omega)?;
            for i in 0..d {
                target[i] += dual[k] * g[i];
            }
        }
    }
    let mut gmat = DMatrix::zeros(d, idx.len());
    for (col, &k) in idx.iter().enumerate() {
        gmat.set_column(col, &DVector::from_vec(constraints[k].gradient(omega)?));
    }
    let svd = gmat.svd(true, true);
    let Ok(nu) = svd.solve(&(-target), 1e-12) else {
        return Ok(());
    };
    for (col, &k) in idx.iter().enumerate() {
        if nu[col].is_finite() {
            dual[k] = nu[col].clamp(0.0, penalty);
        }
    }
    Ok(())
}

struct Barrier<'a> {
    objective: &'a QuadraticSurrogate,
    constraints: &'a [QuadraticSurrogate],
    penalty: f64,
}

impl Barrier<'_> {
    /// `F_0(w) + c sum s - mu sum (ln(s - F_m(w)) + ln s)`, or `None` outside
    /// the domain.
    fn phi(&self, omega: &[f64], slack: &[f64], mu: f64) -> Option<f64> {
        let w2 = norm_sq(omega);
        let mut val = self.objective.constant
            + dot(&self.objective.linear, omega)
            + self.objective.curvature * w2;
        for (con, &s) in self.constraints.iter().zip(slack) {
            let r = s - (con.constant + dot(&con.linear, omega) + con.curvature * w2);
            if !(r > 0.0) || !(s > 0.0) {
                return None;
            }
            val += self.penalty * s - mu * (r.ln() + s.ln());
        }
        val.is_finite().then_some(val)
    }

    fn center(
        &self,
        omega: &mut Vec<f64>,
        slack: &mut Vec<f64>,
        mu: f64,
        opts: BarrierOptions,
    ) -> Result<()> {
        let d = omega.len();
        let m = slack.len();
        let newton_tol = opts.tol / 10.0;
        let mut last_decrement = f64::INFINITY;

        for iter in 0..opts.max_newton {
            // Per-constraint gradients and residuals at the current point.
            let mut grads: Vec<Vec<f64>> = Vec::with_capacity(m);
            let mut r = Vec::with_capacity(m);
            for (con, &s) in self.constraints.iter().zip(slack.iter()) {
                grads.push(con.gradient(omega)?);
                r.push(s - con.eval(omega)?);
            }

            let mut grad_w = self.objective.gradient(omega)?;
            let mut alpha = 2.0 * self.objective.curvature;
            for k in 0..m {
                let coef = mu / r[k];
                for (gw, gk) in grad_w.iter_mut().zip(&grads[k]) {
                    *gw += coef * gk;
                }
                alpha += 2.0 * self.constraints[k].curvature * mu / r[k];
            }
            let grad_s: Vec<f64> = (0..m)
                .map(|k| self.penalty - mu / r[k] - mu / slack[k])
                .collect();

            // Eliminate the slacks; what remains is alpha I + G W G^T, which
            // Woodbury reduces to an m x m system.
            let ratio: Vec<f64> = (0..m)
                .map(|k| slack[k] * slack[k] / (slack[k] * slack[k] + r[k] * r[k]))
                .collect();
            let weight: Vec<f64> = (0..m)
                .map(|k| mu / (slack[k] * slack[k] + r[k] * r[k]))
                .collect();
            let mut rhs: Vec<f64> = grad_w.iter().map(|g| -g).collect();
            for k in 0..m {
                let coef = -ratio[k] * grad_s[k];
                for (v, gk) in rhs.iter_mut().zip(&grads[k]) {
                    *v += coef * gk;
                }
            }
            let scaled = DMatrix::from_fn(d, m, |i, k| weight[k].sqrt() * grads[k][i]);
            let rhs_vec = DVector::from_vec(rhs);
            let kmat = DMatrix::identity(m, m) * alpha + scaled.transpose() * &scaled;
            let chol = kmat.cholesky().ok_or_else(|| Error::Solver {
                iterations: iter,
                residual: last_decrement,
                detail: "reduced Newton system not positive definite".into(),
            })?;
            let inner = chol.solve(&(scaled.transpose() * &rhs_vec));
            let dw_vec = (rhs_vec - &scaled * inner) / alpha;
            let dw: Vec<f64> = dw_vec.iter().copied().collect();
            let ds: Vec<f64> = (0..m)
                .map(|k| {
                    let e = mu * (1.0 / (r[k] * r[k]) + 1.0 / (slack[k] * slack[k]));
                    (-grad_s[k] + mu / (r[k] * r[k]) * dot(&grads[k], &dw)) / e
                })
                .collect();
            if !all_finite(&dw) || !all_finite(&ds) {
                return Err(Error::Solver {
                    iterations: iter,
                    residual: last_decrement,
                    detail: "non-finite Newton step".into(),
                });
            }

            let slope = dot(&grad_w, &dw) + dot(&grad_s, &ds);
            let decrement = -slope;
            last_decrement = decrement;
            let phi0 = self
                .phi(omega, slack, mu)
                .expect("barrier iterate left the domain");
            // Below a few ulps of the barrier value no step can be resolved.
            let floor = 16.0 * f64::EPSILON * (1.0 + phi0.abs());
            if decrement / 2.0 <= newton_tol.max(floor) {
                return Ok(());
            }

            let mut step = 1.0;
            let mut trial_w = vec![0.0; d];
            let mut trial_s = vec![0.0; m];
            let mut accepted = false;
            for _ in 0..80 {
                for i in 0..d {
                    trial_w[i] = omega[i] + step * dw[i];
                }
                for k in 0..m {
                    trial_s[k] = slack[k] + step * ds[k];
                }
                if let Some(phi) = self.phi(&trial_w, &trial_s, mu) {
                    let slack_room = 1e-14 * (1.0 + phi0.abs());
                    if phi <= phi0 + 0.25 * step * slope + slack_room {
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                // Roundoff floor: the decrement is as small as the objective
                // scale allows.
                if decrement <= 1e-9 * (1.0 + phi0.abs()) {
                    return Ok(());
                }
                return Err(Error::Solver {
                    iterations: iter,
                    residual: decrement,
                    detail: "line search failed".into(),
                });
            }
            std::mem::swap(omega, &mut trial_w);
            std::mem::swap(slack, &mut trial_s);
        }
        Err(Error::Solver {
            iterations: opts.max_newton,
            residual: last_decrement,
            detail: format!("centering at barrier weight {mu:e} did not converge"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    fn ball(a: &[f64], tau: f64, u_minus_c: f64, c: f64) -> BallProblem {
        BallProblem {
            a_lin: a.to_vec(),
            tau,
            constant: 0.0,
            ubound: u_minus_c,
            penalty: c,
        }
    }

    #[test]
    fn unconstrained_examples() {
        let s = QuadraticSurrogate::zero(3, 0.7).unwrap();
        assert_eq!(solve_unconstrained(&s), vec![0.0; 3]);
        let s = QuadraticSurrogate {
            constant: 0.0,
            linear: vec![1.0, -2.0],
            curvature: 0.5,
        };
        assert_eq!(solve_unconstrained(&s), vec![-1.0, 2.0]);
    }

    #[test]
    fn unconstrained_matches_gradient_descent() {
        let mut rng = SeededRng::new(5, 0);
        let s = QuadraticSurrogate {
            constant: 0.0,
            linear: (0..5).map(|_| rng.uniform(-3.0, 3.0)).collect(),
            curvature: 0.35,
        };
        let mut w = vec![0.0; 5];
        let lr = 1.0 / (4.0 * s.curvature);
        for _ in 0..500 {
            let g = s.gradient(&w).unwrap();
            for (wi, gi) in w.iter_mut().zip(&g) {
                *wi -= lr * gi;
            }
        }
        let closed = solve_unconstrained(&s);
        for (a, b) in w.iter().zip(&closed) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn slack_constraint_is_inactive() {
        let r = solve_penalized_ball(&ball(&[2.0, 0.0], 1.0, 10.0, 10.0)).unwrap();
        assert_eq!(r.dual, vec![0.0]);
        assert_eq!(r.omega_bar, vec![0.0, 0.0]);
        assert_eq!(r.slack, vec![0.0]);
        assert_eq!(r.active, vec![false]);
    }

    #[test]
    fn interior_multiplier_makes_constraint_tight() {
        let p = ball(&[2.0, 0.0], 1.0, -0.5, 10.0);
        let r = solve_penalized_ball(&p).unwrap();
        assert!((r.dual[0] - (2f64.sqrt() - 1.0)).abs() < 1e-12);
        assert!((r.omega_bar[0] + 0.292_893_218_813_452_5).abs() < 1e-12);
        assert!(p.constraint_value(&r.omega_bar).abs() < 1e-9);
        assert_eq!(r.slack[0], 0.0);
        let o = dual_bisection_oracle(&p).unwrap();
        assert!((o.dual[0] - r.dual[0]).abs() < 1e-9);
    }

    #[test]
    fn nonpositive_discriminant_clamps_to_penalty() {
        let p = ball(&[2.0, 0.0], 1.0, -2.0, 10.0);
        let r = solve_penalized_ball(&p).unwrap();
        assert_eq!(r.dual, vec![10.0]);
        assert!((r.omega_bar[0] + 10.0 / 11.0).abs() < 1e-15);
        assert_eq!(r.omega_bar[1], 0.0);
        assert!(r.slack[0] > 0.0);
        let o = dual_bisection_oracle(&p).unwrap();
        assert_eq!(o.dual, vec![10.0]);
    }

    #[test]
    fn ball_rejects_bad_inputs() {
        assert!(matches!(
            solve_penalized_ball(&ball(&[f64::NAN], 1.0, 0.0, 1.0)),
            Err(Error::Numeric { .. })
        ));
        assert!(matches!(
            solve_penalized_ball(&ball(&[1.0], 1.0, f64::INFINITY, 1.0)),
            Err(Error::Numeric { .. })
        ));
        assert!(solve_penalized_ball(&ball(&[1.0], 0.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn zero_dual_instances_give_zero_model() {
        let mut rng = SeededRng::new(17, 0);
        for _ in 0..50 {
            let a: Vec<f64> = (0..3).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let p = ball(&a, rng.uniform(0.1, 2.0), rng.uniform(0.0, 5.0), 10.0);
            let o = dual_bisection_oracle(&p).unwrap();
            assert_eq!(o.dual[0], 0.0);
            assert!(o.omega_bar.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn branch_is_continuous_at_boundary() {
        // As D = b + 4 tau (U - C) decreases to 0 the multiplier grows to c.
        let a = [1.5, -0.5];
        let tau = 0.8;
        let b = norm_sq(&a);
        let boundary = -b / (4.0 * tau);
        let c = 50.0;
        let mut prev = 0.0;
        for k in (1..=12).rev() {
            let eps = 10f64.powi(-k).max(1e-12) * 10f64.powi(-(12 - k) / 2);
            let nu = closed_form_multiplier(&ball(&a, tau, boundary + eps, c));
            assert!(nu >= prev - 1e-12);
            prev = nu;
        }
        assert_eq!(
            closed_form_multiplier(&ball(&a, tau, boundary + 1e-14, c)),
            c
        );
        assert_eq!(closed_form_multiplier(&ball(&a, tau, boundary, c)), c);
    }

    #[test]
    fn larger_penalty_never_lowers_multiplier() {
        let mut rng = SeededRng::new(23, 0);
        for _ in 0..500 {
            let a: Vec<f64> = (0..3).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let tau = rng.uniform(0.05, 2.0);
            let gap = rng.uniform(-3.0, 1.0);
            let c1 = rng.uniform(0.01, 5.0);
            let c2 = c1 + rng.uniform(0.0, 5.0);
            let n1 = closed_form_multiplier(&ball(&a, tau, gap, c1));
            let n2 = closed_form_multiplier(&ball(&a, tau, gap, c2));
            assert!(n2 >= n1);
        }
    }

    #[test]
    fn closed_form_kkt_residuals() {
        let mut rng = SeededRng::new(31, 0);
        for _ in 0..300 {
            let a: Vec<f64> = (0..4).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let p = ball(
                &a,
                rng.uniform(0.05, 2.0),
                rng.uniform(-4.0, 2.0),
                rng.uniform(0.1, 10.0),
            );
            let r = solve_penalized_ball(&p).unwrap();
            let (obj, con) = p.as_qcqp();
            let k = kkt_residuals(&obj, std::slice::from_ref(&con), p.penalty, &r).unwrap();
            assert!(k.stationarity <= 1e-6, "{k:?}");
            assert!(k.primal <= 1e-12, "{k:?}");
            assert!(k.complementarity <= 1e-6, "{k:?} {p:?}");
        }
    }

    #[test]
    fn barrier_matches_closed_form_on_ball() {
        let mut rng = SeededRng::new(41, 0);
        for _ in 0..40 {
            let a: Vec<f64> = (0..3).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let p = ball(
                &a,
                rng.uniform(0.1, 2.0),
                rng.uniform(-3.0, 1.0),
                rng.uniform(0.5, 10.0),
            );
            let r = solve_penalized_ball(&p).unwrap();
            let (obj, con) = p.as_qcqp();
            let b = solve_qcqp_barrier(&obj, std::slice::from_ref(&con), p.penalty, 1e-11).unwrap();
            for (x, y) in r.omega_bar.iter().zip(&b.omega_bar) {
                assert!((x - y).abs() < 1e-5, "{p:?}\n{r:?}\n{b:?}");
            }
            let k = kkt_residuals(&obj, &[con], p.penalty, &b).unwrap();
            assert!(
                k.stationarity <= 1e-6 && k.complementarity <= 1e-6,
                "{k:?}\n{p:?}\n{r:?}\n{b:?}"
            );
            assert_eq!(k.primal, 0.0);
        }
    }

    #[test]
    fn barrier_slack_vanishes_for_large_penalty() {
        // Feasible: F_1(w) = 1 - w_1 + 0.1 |w|^2 <= 0 has solutions.
        let obj = QuadraticSurrogate {
            constant: 0.0,
            linear: vec![0.0, 0.0],
            curvature: 1.0,
        };
        let con = QuadraticSurrogate {
            constant: 1.0,
            linear: vec![-1.0, 0.0],
            curvature: 0.1,
        };
        let mut last = f64::INFINITY;
        for c in [0.1, 1.0, 10.0, 1e3, 1e5] {
            let r = solve_qcqp_barrier(&obj, std::slice::from_ref(&con), c, 1e-10).unwrap();
            assert!(r.slack[0] <= last + 1e-9);
            last = r.slack[0];
        }
        assert!(last <= 1e-4);
    }

    #[test]
    fn inactive_constraints_reduce_to_unconstrained() {
        let obj = QuadraticSurrogate {
            constant: 0.5,
            linear: vec![1.0, -3.0, 0.25],
            curvature: 0.4,
        };
        let expected = solve_unconstrained(&obj);
        // Zero constraint surrogate (zero curvature) and a strongly slack one.
        let zero = QuadraticSurrogate {
            constant: 0.0,
            linear: vec![0.0; 3],
            curvature: 0.0,
        };
        let slack = QuadraticSurrogate {
            constant: -1e3,
            linear: vec![0.0; 3],
            curvature: 0.2,
        };
        for con in [zero, slack] {
            let r = solve_qcqp_barrier(&obj, &[con], 10.0, 1e-10).unwrap();
            for (x, y) in r.omega_bar.iter().zip(&expected) {
                assert!((x - y).abs() < 1e-6, "{r:?}");
            }
            assert!(r.slack[0] <= 1e-9);
        }
    }

    #[test]
    fn barrier_handles_several_constraints() {
        let mut rng = SeededRng::new(43, 0);
        for _ in 0..20 {
            let obj = QuadraticSurrogate {
                constant: 0.0,
                linear: (0..4).map(|_| rng.uniform(-2.0, 2.0)).collect(),
                curvature: rng.uniform(0.2, 1.0),
            };
            let cons: Vec<QuadraticSurrogate> = (0..3)
                .map(|_| QuadraticSurrogate {
                    constant: rng.uniform(-1.0, 1.0),
                    linear: (0..4).map(|_| rng.uniform(-2.0, 2.0)).collect(),
                    curvature: rng.uniform(0.1, 1.0),
                })
                .collect();
            let c = rng.uniform(1.0, 20.0);
            let r = solve_qcqp_barrier(&obj, &cons, c, 1e-10).unwrap();
            let k = kkt_residuals(&obj, &cons, c, &r).unwrap();
            assert!(k.stationarity <= 1e-6, "{k:?}");
            assert!(k.complementarity <= 1e-6, "{k:?}");
            assert_eq!(k.primal, 0.0);
            assert!(r.dual.iter().all(|&n| (0.0..=c).contains(&n)));
        }
    }

    #[test]
    fn barrier_rejects_bad_inputs() {
        let obj = QuadraticSurrogate::zero(2, 1.0).unwrap();
        assert!(solve_qcqp_barrier(&obj, &[], 1.0, 1e-8).is_err());
        let bad = QuadraticSurrogate::zero(3, 1.0).unwrap();
        assert!(matches!(
            solve_qcqp_barrier(&obj, &[bad], 1.0, 1e-8),
            Err(Error::Shape { .. })
        ));
    }
}
