//! Deterministic randomness, mini-batch sampling and small dense-vector
//! helpers shared by every other module.

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Stream identifiers for roles that are not clients. Clients use their id;
/// the server draws feature-partitioned batches from stream 0, so a
/// single-client run sees the same batches in either partition mode.
pub mod streams {
    /// Model initialization.
    pub const INIT: u64 = 1 << 40;
    /// Synthetic data generation.
    pub const DATA: u64 = (1 << 40) + 1;
}

/// A ChaCha8 generator keyed by `(master_seed, stream_id)`.
///
/// Streams with distinct ids are independent, so every worker can own its
/// generator and the order in which workers run never changes the draws.
#[derive(Clone, Debug)]
pub struct SeededRng {
    master_seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master_seed);
        inner.set_stream(stream_id);
        Self {
            master_seed,
            stream_id,
            inner,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Draws `batch` distinct indices from `0..pool_size`, uniformly without
/// replacement. The result is returned in ascending order.
pub fn sample_minibatch(rng: &mut SeededRng, pool_size: usize, batch: usize) -> Result<Vec<usize>> {
    if batch == 0 || batch > pool_size {
        return Err(Error::invalid(format!(
            "mini-batch of {batch} from a pool of {pool_size}"
        )));
    }
    let mut picked = index::sample(rng, pool_size, batch).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// `count` disjoint mini-batches of size `batch` from one draw of
/// `batch * count` distinct indices; each mini-batch is sorted.
pub fn sample_minibatches(
    rng: &mut SeededRng,
    pool_size: usize,
    batch: usize,
    count: usize,
) -> Result<Vec<Vec<usize>>> {
    let total = batch.saturating_mul(count);
    if batch == 0 || count == 0 || total > pool_size {
        return Err(Error::invalid(format!(
            "{count} mini-batches of {batch} from a pool of {pool_size}"
        )));
    }
    let drawn = index::sample(rng, pool_size, total).into_vec();
    Ok(drawn
        .chunks(batch)
        .map(|c| {
            let mut c = c.to_vec();
            c.sort_unstable();
            c
        })
        .collect())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Central-difference gradient estimate of `f` at `omega`.
///
/// Coordinate `k` is `(f(omega + h e_k) - f(omega - h e_k)) / (2h)`.
pub fn finite_diff_grad<F>(f: F, omega: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("finite-difference step {h}")));
    }
    let mut probe = omega.to_vec();
    let mut grad = Vec::with_capacity(omega.len());
    for k in 0..omega.len() {
        let base = probe[k];
        probe[k] = base + h;
        let up = f(&probe);
        probe[k] = base - h;
        let down = f(&probe);
        probe[k] = base;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric {
                coordinate: k,
                detail: format!("f(+h) = {up}, f(-h) = {down}"),
            });
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}
