//! Hand-derived loss gradients with respect to logits, and an independent
//! central-difference oracle to check them.

use crate::error::{Error, Result};
use crate::losses::{Loss, LossSpec};
use crate::numerics::{softmax, LogitVector, ProbVector, Rng, PROB_FLOOR};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const PASS_REL_ERR: f64 = 1e-4;

/// Points with a probability below this are on the floor's kink and are
/// excluded from pass/fail.
pub const SMOOTH_FLOOR: f64 = 10.0 * PROB_FLOOR;

/// `dL/dp` for a single spec, treating `p` as free coordinates.
fn grad_prob(spec: &LossSpec, p: &ProbVector, y: usize) -> Vec<f64> {
    let k = p.len();
    let mut g = vec![0.0; k];
    if !spec.is_normalized() {
        g[y] = spec.dphi(p.get(y));
        return g;
    }
    // N = phi(p_y) / D,  D = sum_j phi(p_j)
    let denom: f64 = p.as_slice().iter().map(|&v| spec.phi(v)).sum();
    let num = spec.phi(p.get(y));
    let d2 = denom * denom;
    for (j, slot) in g.iter_mut().enumerate() {
        *slot = -num * spec.dphi(p.get(j)) / d2;
    }
    g[y] += spec.dphi(p.get(y)) / denom;
    g
}

/// Pulls `dL/dp` back through the softmax Jacobian.
fn through_softmax(p: &ProbVector, g: &[f64]) -> Vec<f64> {
    let mean: f64 = p.as_slice().iter().zip(g).map(|(pi, gi)| pi * gi).sum();
    p.as_slice()
        .iter()
        .zip(g)
        .map(|(pi, gi)| pi * (gi - mean))
        .collect()
}

fn check_label(k: usize, y: usize) -> Result<()> {
    if y >= k {
        return Err(Error::InvalidInput(format!(
            "label {y} out of range for {k} classes"
        )));
    }
    Ok(())
}

/// `dL/dz` given the already-computed softmax output.
pub fn grad_logits_from_probs(loss: &Loss, p: &ProbVector, y: usize) -> Result<Vec<f64>> {
    check_label(p.len(), y)?;
    let g = match loss {
        Loss::Single(s) => grad_prob(s, p, y),
        Loss::Combined(apl) => {
            let a = grad_prob(&apl.active, p, y);
            let b = grad_prob(&apl.passive, p, y);
            a.iter()
                .zip(&b)
                .map(|(ga, gb)| apl.alpha * ga + apl.beta * gb)
                .collect()
        }
    };
    Ok(through_softmax(p, &g))
}

pub fn grad_logits(loss: &Loss, z: &LogitVector, y: usize) -> Result<Vec<f64>> {
    grad_logits_from_probs(loss, &softmax(z), y)
}

/// Central differences of an arbitrary scalar function.
pub fn central_difference<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("step must be > 0, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Loss as a function of raw logits.
pub fn loss_at_logits(loss: &Loss, z: &[f64], y: usize) -> Result<f64> {
    let z = LogitVector::new(z.to_vec())?;
    loss.eval(&softmax(&z), y)
}

pub fn finite_diff_grad(loss: &Loss, z: &LogitVector, y: usize, h: f64) -> Result<Vec<f64>> {
    check_label(z.len(), y)?;
    central_difference(|zz| loss_at_logits(loss, zz, y), z.as_slice(), h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Some probability sits within [`SMOOTH_FLOOR`] of the floor.
    pub near_floor: bool,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= PASS_REL_ERR
    }

    /// Passed, or excluded because the point is on the floor's kink.
    pub fn acceptable(&self) -> bool {
        self.near_floor || self.passed()
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

pub fn check_gradient(loss: &Loss, z: &LogitVector, y: usize) -> Result<GradReport> {
    let analytic = grad_logits(loss, z, y)?;
    let numeric = finite_diff_grad(loss, z, y, DEFAULT_STEP)?;
    let mut max_rel_err: f64 = 0.0;
    let mut max_abs_err: f64 = 0.0;
    for (a, n) in analytic.iter().zip(&numeric) {
        max_rel_err = max_rel_err.max(relative_error(*a, *n));
        max_abs_err = max_abs_err.max((a - n).abs());
    }
    let near_floor = softmax(z).min_entry() < SMOOTH_FLOOR;
    Ok(GradReport {
        analytic,
        numeric,
        max_rel_err,
        max_abs_err,
        near_floor,
    })
}

/// Random logits in `[-scale, scale]^k`, resampled until every softmax
/// probability is clear of the floor.
pub fn sample_smooth_logits(rng: &mut Rng, k: usize, scale: f64) -> LogitVector {
    loop {
        let z: Vec<f64> = (0..k).map(|_| rng.uniform_range(-scale, scale)).collect();
        let z = LogitVector::new(z).expect("finite logits");
        if softmax(&z).min_entry() >= SMOOTH_FLOOR {
            return z;
        }
    }
}

/// Outcome of a batch of randomized gradient checks for one loss.
#[derive(Debug, Clone)]
pub struct GradSweep {
    pub loss: String,
    pub k: usize,
    pub trials: usize,
    pub failures: usize,
    pub worst_rel_err: f64,
}

impl GradSweep {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

pub fn gradient_sweep(loss: &Loss, k: usize, trials: usize, seed: u64) -> Result<GradSweep> {
    let mut rng = Rng::new(seed);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let z = sample_smooth_logits(&mut rng, k, 4.0);
        let y = rng.below(k);
        let report = check_gradient(loss, &z, y)?;
        worst = worst.max(report.max_rel_err);
        if !report.acceptable() {
            failures += 1;
        }
    }
    Ok(GradSweep {
        loss: loss.to_string(),
        k,
        trials,
        failures,
        worst_rel_err: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::AplSpec;

    fn z(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn ce_gradient_is_p_minus_q() {
        let zz = z(&[1.0, 2.0, 3.0]);
        let g = grad_logits(&LossSpec::ce().into(), &zz, 0).unwrap();
        let p = softmax(&zz);
        for (k, gk) in g.iter().enumerate() {
            let q = if k == 0 { 1.0 } else { 0.0 };
            assert!((gk - (p.get(k) - q)).abs() < 1e-15);
        }
        let n = finite_diff_grad(&LossSpec::ce().into(), &zz, 0, DEFAULT_STEP).unwrap();
        for (k, nk) in n.iter().enumerate() {
            let q = if k == 0 { 1.0 } else { 0.0 };
            assert!((nk - (p.get(k) - q)).abs() < 1e-7);
        }
    }

    #[test]
    fn symmetric_binary_logits_give_opposite_components() {
        for spec in LossSpec::all_default() {
            let g = grad_logits(&spec.into(), &z(&[0.0, 0.0]), 0).unwrap();
            assert!((g[0] + g[1]).abs() < 1e-15, "{spec}");
        }
    }

    #[test]
    fn nce_matches_finite_differences() {
        let loss: Loss = LossSpec::ce().normalized().into();
        let r = check_gradient(&loss, &z(&[1.0, 2.0, 3.0]), 0).unwrap();
        assert!(r.max_rel_err < 1e-5, "{r:?}");
    }

    #[test]
    fn oracle_self_check_on_quadratic() {
        let x = [0.3, -1.2, 2.5];
        let g = central_difference(|v| Ok(v.iter().map(|a| a * a).sum()), &x, 1e-4).unwrap();
        for (gi, xi) in g.iter().zip(x) {
            assert!((gi - 2.0 * xi).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_step_rejected() {
        let loss: Loss = LossSpec::ce().into();
        assert!(finite_diff_grad(&loss, &z(&[0.0, 1.0]), 0, 0.0).is_err());
        assert!(central_difference(|_| Ok(0.0), &[1.0], -1.0).is_err());
    }

    #[test]
    fn focal_gamma_two_and_weighted_apl_pass() {
        let mut rng = Rng::new(11);
        let nfl2: Loss = LossSpec::focal(2.0).unwrap().normalized().into();
        let apl: Loss = AplSpec::new(LossSpec::ce().normalized(), LossSpec::rce(-4.0).unwrap(), 10.0, 0.1)
            .unwrap()
            .into();
        for _ in 0..50 {
            let zz = sample_smooth_logits(&mut rng, 5, 4.0);
            let y = rng.below(5);
            assert!(check_gradient(&nfl2, &zz, y).unwrap().passed());
            assert!(check_gradient(&apl, &zz, y).unwrap().passed());
        }
    }

    #[test]
    fn near_floor_points_are_flagged() {
        let loss: Loss = LossSpec::ce().into();
        let r = check_gradient(&loss, &z(&[40.0, 0.0, 0.0]), 1).unwrap();
        assert!(r.near_floor);
        assert!(r.acceptable());
    }
}
