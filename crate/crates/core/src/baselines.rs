//! SGD-family comparison algorithms and the SSCA / momentum-SGD
//! equivalence harness.
//!
//! Sample-partitioned baselines run `E` local (heavy-ball) steps per round on
//! each client and the server averages the local models with weights
//! `N_i / N`. Feature-partitioned baselines take one global step per round
//! on the gradient assembled from the clients' statistics.

use serde::{Deserialize, Serialize};

use crate::data::RawDataset;
use crate::error::{Error, Result};
use crate::model::{
    mean_stats, regularized_gradient, solve_unconstrained_app, update_app_surrogate,
    AppSurrogateState, NnParams, NnShape,
};
use crate::numerics::max_abs_diff;
use crate::schedules::StepsizeSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    /// Learning rate `r_t`, indexed by communication round.
    pub lr: StepsizeSchedule,
    /// `E`, local steps per round (sample-partitioned runs only).
    pub local_steps: usize,
    /// Heavy-ball coefficient in `[0, 1)`.
    pub momentum: f64,
}

impl SgdConfig {
    /// `r = 0.3 / t^0.3`, no momentum, one local step.
    pub fn sgd() -> Self {
        Self {
            lr: StepsizeSchedule::power(0.3, 0.3),
            local_steps: 1,
            momentum: 0.0,
        }
    }

    /// Constant `r = 0.3` with momentum 0.1, one local step.
    pub fn sgdm() -> Self {
        Self {
            lr: StepsizeSchedule::constant(0.3),
            local_steps: 1,
            momentum: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.local_steps == 0 {
            return Err(Error::config("baseline.E must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!(
                "baseline.momentum = {} outside [0, 1)",
                self.momentum
            )));
        }
        if !(self.lr.coefficient > 0.0) || !(self.lr.exponent >= 0.0) {
            return Err(Error::config(format!(
                "learning rate {}/t^{} needs a positive coefficient and nonnegative exponent",
                self.lr.coefficient, self.lr.exponent
            )));
        }
        Ok(())
    }
}

/// `v <- momentum v + g`, `w <- w - rate v`.
pub fn heavy_ball_step(
    omega: &mut [f64],
    velocity: &mut [f64],
    grad: &[f64],
    rate: f64,
    momentum: f64,
) {
    for ((w, v), g) in omega.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v + g;
        *w -= rate * *v;
    }
}

/// One heavy-ball step per mini-batch on `mean loss + lambda |w|^2`.
#[allow(clippy::too_many_arguments)]
pub fn local_sgd(
    shape: &NnShape,
    data: &RawDataset,
    omega: &mut [f64],
    velocity: &mut [f64],
    batches: &[Vec<usize>],
    lambda: f64,
    rate: f64,
    momentum: f64,
) -> Result<()> {
    for batch in batches {
        let params = NnParams::from_flat(*shape, omega)?;
        let grad = regularized_gradient(&params, batch.iter().map(|&n| data.sample(n)), lambda)?;
        heavy_ball_step(omega, velocity, &grad, rate, momentum);
    }
    Ok(())
}

/// `(1 - rho_t)(1 - gamma_(t-1)) v_(t-1) + rho_t g / (2 tau)`
pub fn momentum_direction(
    prev: &[f64],
    rho: f64,
    gamma_prev: f64,
    tau: f64,
    grad: &[f64],
) -> Vec<f64> {
    let keep = (1.0 - rho) * (1.0 - gamma_prev);
    let k = rho / (2.0 * tau);
    prev.iter()
        .zip(grad)
        .map(|(v, g)| keep * v + k * g)
        .collect()
}

/// Inputs of the equivalence harness. Both recursions see the same
/// mini-batch sequence `batches`.
#[derive(Clone, Debug)]
pub struct EquivalenceSetup<'a> {
    pub shape: NnShape,
    pub data: &'a RawDataset,
    pub batches: &'a [Vec<usize>],
    pub init: Vec<f64>,
    pub rho: StepsizeSchedule,
    pub gamma: StepsizeSchedule,
    pub tau: f64,
    pub lambda: f64,
    /// Use `rho = 1` in round 1. With a zero initial surrogate the two
    /// recursions agree from round 1 only when `rho_1 = 1` or `w_1 = 0`.
    pub full_first_round: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport {
    pub max_deviation: f64,
    pub ssca_final: Vec<f64>,
    pub momentum_final: Vec<f64>,
}

/// Runs the surrogate recursion (closed-form update on the application
/// model) next to the momentum recursion `w_(t+1) = w_t - gamma_t v_t`, and
/// returns the largest `|w_a - w_b|_inf` seen along the way.
pub fn ssca_momentum_equivalence(setup: &EquivalenceSetup<'_>) -> Result<EquivalenceReport> {
    let shape = setup.shape;
    let mut state = AppSurrogateState::new(shape);
    let mut w_a = setup.init.clone();
    let mut w_b = setup.init.clone();
    let mut v = vec![0.0; shape.dim()];
    let mut gamma_prev = 0.0;
    let mut max_dev = 0.0f64;
    for (k, batch) in setup.batches.iter().enumerate() {
        let t = k as u32 + 1;
        let rho = if t == 1 && setup.full_first_round {
            1.0
        } else {
            setup.rho.value(t)?
        };
        let gamma = setup.gamma.value(t)?;
        let samples = || batch.iter().map(|&n| setup.data.sample(n));

        let pa = NnParams::from_flat(shape, &w_a)?;
        let avg = mean_stats(&pa, samples())?;
        update_app_surrogate(&mut state, rho, setup.tau, &w_a, &avg)?;
        let bar = solve_unconstrained_app(&state, setup.lambda, setup.tau);
        for (w, b) in w_a.iter_mut().zip(&bar) {
            *w = (1.0 - gamma) * *w + gamma * b;
        }

        let pb = NnParams::from_flat(shape, &w_b)?;
        let grad = regularized_gradient(&pb, samples(), setup.lambda)?;
        v = momentum_direction(&v, rho, gamma_prev, setup.tau, &grad);
        for (w, vi) in w_b.iter_mut().zip(&v) {
            *w -= gamma * vi;
        }
        gamma_prev = gamma;
        max_dev = max_dev.max(max_abs_diff(&w_a, &w_b));
    }
    Ok(EquivalenceReport {
        max_deviation: max_dev,
        ssca_final: w_a,
        momentum_final: w_b,
    })
}
