//! Exact-enumeration checks of the noise-tolerance identities.
//!
//! Nothing here samples noisy labels: noisy risks are expectations taken
//! row by row over the transition matrix, so the identities can be checked
//! to rounding error.

use crate::error::{Error, Result};
use crate::losses::{AplSpec, Loss, LossSpec};
use crate::noise::{symmetric_bound, NoiseModel};
use crate::numerics::ProbVector;

pub const RESIDUAL_TOL: f64 = 1e-9;

/// `sum_j L(p, j)`.
pub fn constant_sum(loss: &Loss, p: &ProbVector) -> Result<f64> {
    Ok(loss.per_label(p)?.iter().sum())
}

fn check_set(probs: &[ProbVector], labels: &[usize]) -> Result<usize> {
    let Some(first) = probs.first() else {
        return Err(Error::Config("empty prediction set".into()));
    };
    if probs.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let k = first.len();
    if probs.iter().any(|p| p.len() != k) {
        return Err(Error::InvalidInput("predictions disagree on class count".into()));
    }
    if let Some(y) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidInput(format!("label {y} out of range for K={k}")));
    }
    Ok(k)
}

/// Mean loss against the clean labels.
pub fn empirical_clean_risk(probs: &[ProbVector], labels: &[usize], loss: &Loss) -> Result<f64> {
    check_set(probs, labels)?;
    let mut total = 0.0;
    for (p, &y) in probs.iter().zip(labels) {
        total += loss.eval(p, y)?;
    }
    Ok(total / probs.len() as f64)
}

/// `(1/n) sum_i sum_k T[y_i][k] L(p_i, k)`, computed exactly.
pub fn noisy_risk_enumerated(
    probs: &[ProbVector],
    labels: &[usize],
    model: &NoiseModel,
    loss: &Loss,
) -> Result<f64> {
    let k = check_set(probs, labels)?;
    if model.num_classes() != k {
        return Err(Error::InvalidInput(format!(
            "noise model has {} classes, predictions have {k}",
            model.num_classes()
        )));
    }
    let mut total = 0.0;
    for (p, &y) in probs.iter().zip(labels) {
        let row = &model.transition()[y];
        let per_label = loss.per_label(p)?;
        total += row.iter().zip(&per_label).map(|(t, l)| t * l).sum::<f64>();
    }
    Ok(total / probs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskReport {
    pub clean_risk: f64,
    pub noisy_risk_enumerated: f64,
    /// `R(f) (1 - eta K / (K-1)) + eta / (K-1)`.
    pub noisy_risk_predicted: f64,
    pub residual: f64,
    pub eta: f64,
    pub k: usize,
    /// Spread (max - min) of `sum_j L(p, j)` over the prediction set.
    pub constant_sum_spread: f64,
}

impl RiskReport {
    pub fn passed(&self) -> bool {
        self.residual <= RESIDUAL_TOL
    }

    pub fn has_constant_sum(&self) -> bool {
        self.constant_sum_spread <= RESIDUAL_TOL
    }
}

/// Compares enumerated symmetric-noise risk against the closed-form
/// prediction for any loss; the prediction only holds when the loss sums
/// to 1 over labels.
pub fn symmetric_risk_report(
    probs: &[ProbVector],
    labels: &[usize],
    loss: &Loss,
    eta: f64,
) -> Result<RiskReport> {
    let k = check_set(probs, labels)?;
    let model = NoiseModel::symmetric(k, eta, true)?;
    let clean = empirical_clean_risk(probs, labels, loss)?;
    let noisy = noisy_risk_enumerated(probs, labels, &model, loss)?;
    let kf = k as f64;
    let predicted = clean * (1.0 - eta * kf / (kf - 1.0)) + eta / (kf - 1.0);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in probs {
        let s = constant_sum(loss, p)?;
        lo = lo.min(s);
        hi = hi.max(s);
    }
    Ok(RiskReport {
        clean_risk: clean,
        noisy_risk_enumerated: noisy,
        noisy_risk_predicted: predicted,
        residual: (noisy - predicted).abs(),
        eta,
        k,
        constant_sum_spread: hi - lo,
    })
}

/// Symmetric-noise risk identity for a normalized loss.
pub fn verify_lemma1(
    probs: &[ProbVector],
    labels: &[usize],
    loss: &Loss,
    eta: f64,
) -> Result<RiskReport> {
    if !loss.is_normalized() {
        return Err(Error::Contract(format!(
            "`{loss}` is not a normalized loss"
        )));
    }
    let k = check_set(probs, labels)?;
    if !(0.0..symmetric_bound(k)).contains(&eta) {
        return Err(Error::Config(format!(
            "noise rate {eta} must lie in [0, (K-1)/K) for K={k}"
        )));
    }
    symmetric_risk_report(probs, labels, loss, eta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundViolation {
    pub point: usize,
    pub class: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    pub bound: f64,
    pub checked: usize,
    pub violations: Vec<BoundViolation>,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `0 <= L(p, k) <= 1/(K-1)` for every grid point and class.
pub fn verify_lemma2_hypotheses(loss: &Loss, grid: &[ProbVector]) -> Result<BoundCheck> {
    let Some(first) = grid.first() else {
        return Err(Error::Config("empty grid".into()));
    };
    let k = first.len();
    let bound = 1.0 / (k as f64 - 1.0);
    let tol = 1e-12;
    let mut violations = Vec::new();
    let mut checked = 0;
    for (i, p) in grid.iter().enumerate() {
        if p.len() != k {
            return Err(Error::InvalidInput("grid points disagree on class count".into()));
        }
        for (class, value) in loss.per_label(p)?.into_iter().enumerate() {
            checked += 1;
            if value < -tol || value > bound + tol {
                violations.push(BoundViolation {
                    point: i,
                    class,
                    value,
                });
            }
        }
    }
    Ok(BoundCheck {
        bound,
        checked,
        violations,
    })
}

/// Range of `sum_j L(p, j)` over a set; returns the first sum and the
/// spread.
fn sum_spread(spec: &LossSpec, probs: &[ProbVector]) -> Result<(f64, f64)> {
    let loss = Loss::Single(*spec);
    let first = constant_sum(&loss, &probs[0])?;
    let mut spread: f64 = 0.0;
    for p in probs {
        spread = spread.max((constant_sum(&loss, p)? - first).abs());
    }
    Ok((first, spread))
}

/// Largest deviation of `sum_j L_apl(p, j)` from `alpha C_a + beta C_p`.
pub fn verify_lemma3(apl: &AplSpec, probs: &[ProbVector]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Config("empty prediction set".into()));
    }
    let (c_active, spread_a) = sum_spread(&apl.active, probs)?;
    if spread_a > RESIDUAL_TOL {
        return Err(Error::Contract(format!(
            "`{}` has no constant label sum (spread {spread_a:.3e})",
            apl.active
        )));
    }
    let (c_passive, spread_p) = sum_spread(&apl.passive, probs)?;
    if spread_p > RESIDUAL_TOL {
        return Err(Error::Contract(format!(
            "`{}` has no constant label sum (spread {spread_p:.3e})",
            apl.passive
        )));
    }
    let expected = apl.alpha * c_active + apl.beta * c_passive;
    let loss = Loss::Combined(*apl);
    let mut worst: f64 = 0.0;
    for p in probs {
        worst = worst.max((constant_sum(&loss, p)? - expected).abs());
    }
    Ok(worst)
}

/// Every point of the simplex whose coordinates are multiples of `step`,
/// with the probability floor applied.
pub fn simplex_grid(k: usize, step: f64) -> Result<Vec<ProbVector>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {k}")));
    }
    let n = (1.0 / step).round();
    if !(step > 0.0) || (n * step - 1.0).abs() > 1e-9 || n < 1.0 {
        return Err(Error::Config(format!("grid step {step} must divide 1")));
    }
    let n = n as usize;
    let mut out = Vec::new();
    let mut parts = vec![0usize; k];
    compositions(n, 0, &mut parts, &mut |c| {
        let w: Vec<f64> = c.iter().map(|&v| v as f64).collect();
        out.push(ProbVector::from_weights(&w).expect("nonzero composition"));
    });
    Ok(out)
}

fn compositions(remaining: usize, idx: usize, parts: &mut [usize], emit: &mut dyn FnMut(&[usize])) {
    if idx == parts.len() - 1 {
        parts[idx] = remaining;
        emit(parts);
        return;
    }
    for v in (0..=remaining).rev() {
        parts[idx] = v;
        compositions(remaining - v, idx + 1, parts, emit);
    }
}

/// Result of an exhaustive search over prediction tables.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimizerCheck {
    pub tables: u64,
    pub clean_min: f64,
    pub noisy_min: f64,
    /// Every table (one grid index per sample) attaining the clean minimum.
    pub clean_argmin: Vec<Vec<usize>>,
    pub noisy_argmin: Vec<Vec<usize>>,
}

impl MinimizerCheck {
    pub fn preserved(&self) -> bool {
        self.clean_argmin == self.noisy_argmin
    }
}

const TIE_TOL: f64 = 1e-12;

/// Enumerates all `grid.len()^n` assignments of grid points to the `n`
/// samples and returns the minimizing set of the summed costs.
fn exhaustive_argmin(costs: &[Vec<f64>]) -> (f64, Vec<Vec<usize>>, u64) {
    let n = costs.len();
    let g = costs[0].len();
    let mut idx = vec![0usize; n];
    let mut best = f64::INFINITY;
    let mut argmin: Vec<Vec<usize>> = Vec::new();
    let mut count = 0u64;
    loop {
        count += 1;
        let mut total = 0.0;
        for (i, &j) in idx.iter().enumerate() {
            total += costs[i][j];
        }
        let risk = total / n as f64;
        if risk < best - TIE_TOL {
            best = risk;
            argmin.clear();
            argmin.push(idx.clone());
        } else if (risk - best).abs() <= TIE_TOL {
            argmin.push(idx.clone());
            best = best.min(risk);
        }
        // odometer increment
        let mut pos = n;
        loop {
            if pos == 0 {
                return (best, argmin, count);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < g {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// Brute-force check that the clean-risk minimizer over a finite hypothesis
/// space (every assignment of simplex-grid predictions to the samples) is
/// also the noisy-risk minimizer.
pub fn minimizer_preservation(
    loss: &Loss,
    labels: &[usize],
    model: &NoiseModel,
    grid: &[ProbVector],
) -> Result<MinimizerCheck> {
    if labels.is_empty() || grid.is_empty() {
        return Err(Error::Config("need samples and grid points".into()));
    }
    let k = model.num_classes();
    let mut clean_costs = Vec::with_capacity(labels.len());
    let mut noisy_costs = Vec::with_capacity(labels.len());
    let per_point: Vec<Vec<f64>> = grid
        .iter()
        .map(|p| {
            if p.len() != k {
                return Err(Error::InvalidInput("grid and noise model disagree on K".into()));
            }
            loss.per_label(p)
        })
        .collect::<Result<_>>()?;
    for &y in labels {
        if y >= k {
            return Err(Error::InvalidInput(format!("label {y} out of range for K={k}")));
        }
        let row = &model.transition()[y];
        clean_costs.push(per_point.iter().map(|l| l[y]).collect::<Vec<f64>>());
        noisy_costs.push(
            per_point
                .iter()
                .map(|l| row.iter().zip(l).map(|(t, v)| t * v).sum())
                .collect::<Vec<f64>>(),
        );
    }
    let (clean_min, clean_argmin, tables) = exhaustive_argmin(&clean_costs);
    let (noisy_min, noisy_argmin, _) = exhaustive_argmin(&noisy_costs);
    Ok(MinimizerCheck {
        tables,
        clean_min,
        noisy_min,
        clean_argmin,
        noisy_argmin,
    })
}
