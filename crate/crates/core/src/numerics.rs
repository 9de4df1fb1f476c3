//! Stable softmax kernels, the probability floor, and the seeded generator
//! used everywhere randomness is needed.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Floor applied to every probability before it reaches a logarithm.
pub const PROB_FLOOR: f64 = 1e-7;

/// Tolerance on the total mass of a [`ProbVector`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Raw network scores for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 logits, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "logit {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A point on the probability simplex with every entry at or above
/// [`PROB_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates an already-normalized vector.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 classes, got {}",
                values.len()
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            if !(PROB_FLOOR..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "probability {i} = {v} outside [{PROB_FLOOR}, 1]"
                )));
            }
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self(values))
    }

    /// Normalizes nonnegative weights onto the simplex and applies the
    /// probability floor.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 classes, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidInput("weights sum to zero".into()));
        }
        let mut values: Vec<f64> = weights.iter().map(|w| w / total).collect();
        floor_and_renormalize(&mut values);
        Ok(Self(values))
    }

    /// The uniform distribution over `k` classes.
    pub fn uniform(k: usize) -> Result<Self> {
        Self::from_weights(&vec![1.0; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, k: usize) -> f64 {
        self.0[k]
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Smallest entry; used to keep randomized gradient checks away from
    /// the floor, where the map from logits is only piecewise smooth.
    pub fn min_entry(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Raises entries below the floor to it and rescales the rest so the total
/// stays 1. Repeats until no rescaled entry drops under the floor.
fn floor_and_renormalize(values: &mut [f64]) {
    let k = values.len();
    let mut floored = vec![false; k];
    loop {
        let mut changed = false;
        for (v, f) in values.iter_mut().zip(floored.iter_mut()) {
            if !*f && *v < PROB_FLOOR {
                *f = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let n_floored = floored.iter().filter(|f| **f).count();
        let free_mass: f64 = values
            .iter()
            .zip(&floored)
            .filter(|(_, f)| !**f)
            .map(|(v, _)| *v)
            .sum();
        let target = 1.0 - n_floored as f64 * PROB_FLOOR;
        let scale = target / free_mass;
        for (v, f) in values.iter_mut().zip(&floored) {
            *v = if *f { PROB_FLOOR } else { *v * scale };
        }
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp_shifted(z: &[f64]) -> (f64, f64) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
    (m, s.ln())
}

/// Softmax without the probability floor. Entries may underflow to zero.
pub fn softmax_raw(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for v in &mut out {
        *v /= s;
    }
    out
}

pub fn softmax(z: &LogitVector) -> ProbVector {
    let mut p = softmax_raw(z.as_slice());
    floor_and_renormalize(&mut p);
    ProbVector(p)
}

pub fn log_softmax(z: &LogitVector) -> Vec<f64> {
    let (m, lse) = log_sum_exp_shifted(z.as_slice());
    z.as_slice().iter().map(|v| v - m - lse).collect()
}

/// `log(max(p, eps))`.
pub fn clamped_log(p: f64, eps: f64) -> Result<f64> {
    if p.is_nan() || p < 0.0 {
        return Err(Error::InvalidInput(format!(
            "clamped_log of negative value {p}"
        )));
    }
    Ok(p.max(eps).ln())
}

/// Seeded generator backed by ChaCha8, so streams are identical across
/// platforms and releases of the standard library.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// An independent generator on stream `stream` of the same seed.
    pub fn derive(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Self {
            seed: self.seed,
            inner,
        }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Draws an index with probability proportional to `weights`.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        let mut last_positive = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            last_positive = i;
            if u < w {
                return i;
            }
            u -= w;
        }
        last_positive
    }

    /// A random point on the simplex, Dirichlet(1, ..., 1) distributed.
    pub fn simplex_point(&mut self, k: usize) -> Vec<f64> {
        let mut w: Vec<f64> = (0..k).map(|_| -(1.0 - self.uniform()).ln()).collect();
        let s: f64 = w.iter().sum();
        for v in &mut w {
            *v /= s;
        }
        w
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}
