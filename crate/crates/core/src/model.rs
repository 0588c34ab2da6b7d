//! Two-layer classifier with a swish hidden layer and softmax output, its
//! cross-entropy loss, and the per-sample statistics that feed the surrogate
//! recursions.
//!
//! Parameters are stored flat as `omega0` (L x J, row-major) followed by
//! `omega1` (J x P, row-major), so `d = J (P + L)`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::{all_finite, dot, norm_sq, SeededRng};
use crate::solvers::{solve_penalized_ball, BallProblem, PenalizedSolveResult};
use crate::surrogate::QuadraticSurrogate;

/// Layer sizes: `inputs` = P, `hidden` = J, `classes` = L.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NnShape {
    pub inputs: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl NnShape {
    pub fn new(inputs: usize, hidden: usize, classes: usize) -> Result<Self> {
        if inputs == 0 || hidden == 0 || classes == 0 {
            return Err(Error::invalid(format!(
                "network sizes P={inputs}, J={hidden}, L={classes} must be positive"
            )));
        }
        Ok(Self {
            inputs,
            hidden,
            classes,
        })
    }

    pub fn dim(&self) -> usize {
        self.hidden * (self.inputs + self.classes)
    }

    pub fn omega0_len(&self) -> usize {
        self.classes * self.hidden
    }

    pub fn omega1_len(&self) -> usize {
        self.hidden * self.inputs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NnParams {
    pub shape: NnShape,
    /// Output weights, `omega0[l * J + j]`.
    pub omega0: Vec<f64>,
    /// Hidden weights, `omega1[j * P + p]`.
    pub omega1: Vec<f64>,
}

impl NnParams {
    pub fn zeros(shape: NnShape) -> Self {
        Self {
            shape,
            omega0: vec![0.0; shape.omega0_len()],
            omega1: vec![0.0; shape.omega1_len()],
        }
    }

    /// Every entry uniform in `(-scale, scale)`.
    pub fn random(shape: NnShape, rng: &mut SeededRng, scale: f64) -> Self {
        let flat: Vec<f64> = (0..shape.dim())
            .map(|_| rng.uniform(-scale, scale))
            .collect();
        Self::from_flat(shape, &flat).expect("length matches shape")
    }

    pub fn from_flat(shape: NnShape, flat: &[f64]) -> Result<Self> {
        check_len("flat parameters", shape.dim(), flat.len())?;
        if let Some(k) = flat.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric {
                coordinate: k,
                detail: "non-finite parameter".into(),
            });
        }
        let (w0, w1) = flat.split_at(shape.omega0_len());
        Ok(Self {
            shape,
            omega0: w0.to_vec(),
            omega1: w1.to_vec(),
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.shape.dim());
        v.extend_from_slice(&self.omega0);
        v.extend_from_slice(&self.omega1);
        v
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `S(z) = z / (1 + exp(-z))`
pub fn swish(z: f64) -> f64 {
    z * sigmoid(z)
}

/// `S'(z) = sigma(z) (1 + z exp(-z) / (1 + exp(-z)))`, written as
/// `sigma(z) (1 + z (1 - sigma(z)))`.
pub fn swish_prime(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Hidden pre-activations `u_j = sum_p omega1[j, p] z_p` restricted to a
/// block of inputs. `block` is the J x P_i row-major sub-matrix.
pub fn partial_pre_activations(block: &[f64], hidden: usize, z: &[f64]) -> Result<Vec<f64>> {
    check_len("hidden block", hidden * z.len(), block.len())?;
    if z.is_empty() {
        return Ok(vec![0.0; hidden]);
    }
    Ok(block.chunks_exact(z.len()).map(|row| dot(row, z)).collect())
}

pub fn pre_activations(params: &NnParams, z: &[f64]) -> Result<Vec<f64>> {
    check_len("input features", params.shape.inputs, z.len())?;
    partial_pre_activations(&params.omega1, params.shape.hidden, z)
}

/// Log-probabilities from hidden pre-activations, via max-subtracted
/// log-sum-exp.
pub fn log_softmax_from_hidden(omega0: &[f64], shape: &NnShape, u: &[f64]) -> Result<Vec<f64>> {
    check_len("pre-activations", shape.hidden, u.len())?;
    let act: Vec<f64> = u.iter().map(|&x| swish(x)).collect();
    let logits: Vec<f64> = omega0
        .chunks_exact(shape.hidden)
        .map(|row| dot(row, &act))
        .collect();
    if let Some(k) = logits.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numeric {
            coordinate: k,
            detail: "non-finite logit".into(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|x| x - lse).collect())
}

/// Class probabilities `Q`.
pub fn forward(params: &NnParams, z: &[f64]) -> Result<Vec<f64>> {
    let u = pre_activations(params, z)?;
    Ok(log_softmax_from_hidden(&params.omega0, &params.shape, &u)?
        .into_iter()
        .map(f64::exp)
        .collect())
}

/// A labelled sample: features `z` and one-hot label `y`.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub z: &'a [f64],
    pub y: &'a [f64],
}

/// `-sum_l y_l log Q_l` for one sample.
pub fn sample_loss(params: &NnParams, s: Sample<'_>) -> Result<f64> {
    check_len("label", params.shape.classes, s.y.len())?;
    let u = pre_activations(params, s.z)?;
    let logq = log_softmax_from_hidden(&params.omega0, &params.shape, &u)?;
    Ok(-dot(s.y, &logq))
}

/// Mean cross-entropy over `samples`.
pub fn loss<'a, I>(params: &NnParams, samples: I) -> Result<f64>
where
    I: IntoIterator<Item = Sample<'a>>,
{
    let mut total = 0.0;
    let mut count = 0usize;
    for s in samples {
        total += sample_loss(params, s)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid("loss over an empty batch"));
    }
    Ok(total / count as f64)
}

/// Output-layer residual `Q - y` and `c = sum_l y_l log Q_l` from hidden
/// pre-activations.
pub fn output_residual(
    omega0: &[f64],
    shape: &NnShape,
    u: &[f64],
    y: &[f64],
) -> Result<(Vec<f64>, f64)> {
    check_len("label", shape.classes, y.len())?;
    let logq = log_softmax_from_hidden(omega0, shape, u)?;
    let c = dot(y, &logq);
    let resid = logq.iter().zip(y).map(|(lq, yl)| lq.exp() - yl).collect();
    Ok((resid, c))
}

/// `a[l, j] += weight * (Q_l - y_l) S(u_j)`
pub fn add_a_bar(a: &mut [f64], resid: &[f64], u: &[f64], weight: f64) {
    let act: Vec<f64> = u.iter().map(|&x| swish(x)).collect();
    for (row, r) in a.chunks_exact_mut(u.len()).zip(resid) {
        let k = weight * r;
        for (aj, sj) in row.iter_mut().zip(&act) {
            *aj += k * sj;
        }
    }
}

/// `b[j, p] += weight * sum_l (Q_l - y_l) S'(u_j) omega0[l, j] z_p` over the
/// features `z` of one block (`b` is J x z.len()).
pub fn add_b_bar(b: &mut [f64], omega0: &[f64], resid: &[f64], u: &[f64], z: &[f64], weight: f64) {
    let hidden = u.len();
    if z.is_empty() {
        return;
    }
    for (j, row) in b.chunks_exact_mut(z.len()).enumerate() {
        let back: f64 = resid
            .iter()
            .enumerate()
            .map(|(l, r)| r * omega0[l * hidden + j])
            .sum();
        let k = weight * back * swish_prime(u[j]);
        for (bp, zp) in row.iter_mut().zip(z) {
            *bp += k * zp;
        }
    }
}

/// Per-sample (or summed / averaged) statistics: `a_bar` (L x J), `b_bar`
/// (J x P) and `c_bar = sum_l y_l log Q_l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
    pub c_bar: f64,
}

impl SampleStats {
    pub fn zeros(shape: &NnShape) -> Self {
        Self {
            a_bar: vec![0.0; shape.omega0_len()],
            b_bar: vec![0.0; shape.omega1_len()],
            c_bar: 0.0,
        }
    }

    /// `self += weight * other`
    pub fn add_scaled(&mut self, other: &SampleStats, weight: f64) -> Result<()> {
        check_len("a_bar", self.a_bar.len(), other.a_bar.len())?;
        check_len("b_bar", self.b_bar.len(), other.b_bar.len())?;
        for (x, y) in self.a_bar.iter_mut().zip(&other.a_bar) {
            *x += weight * y;
        }
        for (x, y) in self.b_bar.iter_mut().zip(&other.b_bar) {
            *x += weight * y;
        }
        self.c_bar += weight * other.c_bar;
        Ok(())
    }

    /// `(a_bar, b_bar)` in flat parameter order: the gradient of the
    /// cross-entropy term.
    pub fn stacked(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.a_bar.len() + self.b_bar.len());
        v.extend_from_slice(&self.a_bar);
        v.extend_from_slice(&self.b_bar);
        v
    }
}

pub fn sample_stats(params: &NnParams, s: Sample<'_>) -> Result<SampleStats> {
    let mut out = SampleStats::zeros(&params.shape);
    add_sample_stats(&mut out, params, s, 1.0)?;
    Ok(out)
}

/// `acc += weight * stats(sample)` without allocating a full stats value.
pub fn add_sample_stats(
    acc: &mut SampleStats,
    params: &NnParams,
    s: Sample<'_>,
    weight: f64,
) -> Result<()> {
    let u = pre_activations(params, s.z)?;
    let (resid, c) = output_residual(&params.omega0, &params.shape, &u, s.y)?;
    add_a_bar(&mut acc.a_bar, &resid, &u, weight);
    add_b_bar(&mut acc.b_bar, &params.omega0, &resid, &u, s.z, weight);
    acc.c_bar += weight * c;
    if !all_finite(&acc.a_bar) || !all_finite(&acc.b_bar) || !acc.c_bar.is_finite() {
        return Err(Error::Numeric {
            coordinate: 0,
            detail: "sample statistics overflowed".into(),
        });
    }
    Ok(())
}

/// Mean over `samples` of the statistics (unit weights `1/|batch|`).
pub fn mean_stats<'a, I>(params: &NnParams, samples: I) -> Result<SampleStats>
where
    I: IntoIterator<Item = Sample<'a>>,
{
    let samples: Vec<Sample<'a>> = samples.into_iter().collect();
    if samples.is_empty() {
        return Err(Error::invalid("statistics over an empty batch"));
    }
    let w = 1.0 / samples.len() as f64;
    let mut acc = SampleStats::zeros(&params.shape);
    for s in samples {
        add_sample_stats(&mut acc, params, s, w)?;
    }
    Ok(acc)
}

/// Gradient of `mean loss + lambda |w|^2` in flat order.
pub fn regularized_gradient<'a, I>(params: &NnParams, samples: I, lambda: f64) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = Sample<'a>>,
{
    let mut g = mean_stats(params, samples)?.stacked();
    for (gi, wi) in g.iter_mut().zip(params.to_flat()) {
        *gi += 2.0 * lambda * wi;
    }
    Ok(g)
}

/// Index of the most probable class.
pub fn predict(params: &NnParams, z: &[f64]) -> Result<usize> {
    let u = pre_activations(params, z)?;
    let logq = log_softmax_from_hidden(&params.omega0, &params.shape, &u)?;
    Ok(logq
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (l, &v)| {
            if v > best.1 {
                (l, v)
            } else {
                best
            }
        })
        .0)
}

/// Accumulated surrogate coefficients for the application problems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppSurrogateState {
    pub shape: NnShape,
    pub beta: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
    pub round: u64,
}

impl AppSurrogateState {
    pub fn new(shape: NnShape) -> Self {
        Self {
            shape,
            beta: vec![0.0; shape.dim()],
            a: vec![0.0; shape.omega0_len()],
            b: vec![0.0; shape.omega1_len()],
            c: 0.0,
            round: 0,
        }
    }

    /// `(A, B)` in flat parameter order.
    pub fn stacked(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.shape.dim());
        v.extend_from_slice(&self.a);
        v.extend_from_slice(&self.b);
        v
    }

    /// Loss surrogate `<A, w0> + <B, w1> + tau |w|^2 + C`.
    pub fn loss_surrogate(&self, tau: f64) -> QuadraticSurrogate {
        QuadraticSurrogate {
            constant: self.c,
            linear: self.stacked(),
            curvature: tau,
        }
    }

    /// Objective surrogate of the regularized problem:
    /// linear term `stack(A, B) + 2 lambda beta`.
    pub fn objective_surrogate(&self, lambda: f64, tau: f64) -> QuadraticSurrogate {
        let mut linear = self.stacked();
        for (l, b) in linear.iter_mut().zip(&self.beta) {
            *l += 2.0 * lambda * b;
        }
        QuadraticSurrogate {
            constant: 0.0,
            linear,
            curvature: tau,
        }
    }

    /// Norm objective and loss constraint `F_bar + C - U` of the constrained
    /// problem, in the form taken by the barrier solver.
    pub fn constrained_qcqp(
        &self,
        ubound: f64,
        tau: f64,
    ) -> (QuadraticSurrogate, QuadraticSurrogate) {
        let objective = QuadraticSurrogate {
            constant: 0.0,
            linear: vec![0.0; self.shape.dim()],
            curvature: 1.0,
        };
        let mut constraint = self.loss_surrogate(tau);
        constraint.constant -= ubound;
        (objective, constraint)
    }
}

/// One recursion step with the weighted batch averages `avg` at `omega`.
///
/// `c_bar` averages `sum y log Q`, i.e. minus the loss, so the loss
/// surrogate's constant uses `-avg.c_bar + tau |w|^2`; this keeps the loss
/// surrogate equal to the batch loss at the expansion point.
pub fn update_app_surrogate(
    state: &mut AppSurrogateState,
    rho: f64,
    tau: f64,
    omega: &[f64],
    avg: &SampleStats,
) -> Result<()> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::invalid(format!("rho = {rho} outside (0, 1]")));
    }
    let shape = state.shape;
    check_len("omega", shape.dim(), omega.len())?;
    check_len("A bar", shape.omega0_len(), avg.a_bar.len())?;
    check_len("B bar", shape.omega1_len(), avg.b_bar.len())?;
    let (w0, w1) = omega.split_at(shape.omega0_len());

    for (b, w) in state.beta.iter_mut().zip(omega) {
        *b = (1.0 - rho) * *b + rho * w;
    }
    for ((a, g), w) in state.a.iter_mut().zip(&avg.a_bar).zip(w0) {
        *a = (1.0 - rho) * *a + rho * (g - 2.0 * tau * w);
    }
    for ((b, g), w) in state.b.iter_mut().zip(&avg.b_bar).zip(w1) {
        *b = (1.0 - rho) * *b + rho * (g - 2.0 * tau * w);
    }
    let c_bar = -avg.c_bar + tau * norm_sq(omega);
    let fresh = c_bar - dot(&avg.a_bar, w0) - dot(&avg.b_bar, w1);
    state.c = (1.0 - rho) * state.c + rho * fresh;
    state.round += 1;

    if !all_finite(&state.a) || !all_finite(&state.b) || !state.c.is_finite() {
        return Err(Error::Numeric {
            coordinate: 0,
            detail: "surrogate state became non-finite".into(),
        });
    }
    Ok(())
}

/// `w0 = -(A + 2 lambda beta0) / (2 tau)`, `w1 = -(B + 2 lambda beta1) / (2 tau)`.
pub fn solve_unconstrained_app(state: &AppSurrogateState, lambda: f64, tau: f64) -> Vec<f64> {
    let inv = -1.0 / (2.0 * tau);
    state
        .a
        .iter()
        .chain(&state.b)
        .zip(&state.beta)
        .map(|(ab, beta)| inv * (ab + 2.0 * lambda * beta))
        .collect()
}

pub fn solve_constrained_app(
    state: &AppSurrogateState,
    ubound: f64,
    tau: f64,
    penalty: f64,
) -> Result<PenalizedSolveResult> {
    solve_penalized_ball(&BallProblem {
        a_lin: state.stacked(),
        tau,
        constant: state.c,
        ubound,
        penalty,
    })
}
