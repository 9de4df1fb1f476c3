//! Closed-form loss evaluation, the generic ratio normalizer, per-class
//! decomposition, and the active/passive combiner.
//!
//! Every base family here can be written as `L(p, y) = phi(p_y)` once `p`
//! lies on the simplex, which is what makes the closed normalized forms and
//! the hand-written gradients short. The literal per-class sums are still
//! used for [`decompose`] and checked against the closed forms in tests.

mod spec;

pub use spec::{
    Activity, AplSpec, FamilyParams, Loss, LossFamily, LossSpec, DEFAULT_A, DEFAULT_GAMMA,
    DEFAULT_RHO,
};

use crate::error::{Error, Result};
use crate::numerics::{ProbVector, Rng};

/// Per-class terms of a loss; they sum to the loss value.
#[derive(Debug, Clone, PartialEq)]
pub struct LossDecomposition {
    pub per_class: Vec<f64>,
}

impl LossDecomposition {
    pub fn total(&self) -> f64 {
        self.per_class.iter().sum()
    }

    /// Largest absolute term away from the labelled class.
    pub fn off_label_mass(&self, y: usize) -> f64 {
        self.per_class
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != y)
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max)
    }
}

fn check_label(p: &ProbVector, y: usize) -> Result<()> {
    if y >= p.len() {
        return Err(Error::InvalidInput(format!(
            "label {y} out of range for {} classes",
            p.len()
        )));
    }
    Ok(())
}

impl LossSpec {
    /// `phi(p_y)`: the unnormalized loss as a function of the labelled
    /// class probability alone.
    pub(crate) fn phi(&self, py: f64) -> f64 {
        let prm = self.params();
        match self.family() {
            LossFamily::CrossEntropy => -py.ln(),
            LossFamily::Focal => -(1.0 - py).powf(prm.gamma) * py.ln(),
            LossFamily::MeanAbsoluteError => 2.0 * (1.0 - py),
            LossFamily::ReverseCrossEntropy => -prm.a * (1.0 - py),
            // expm1 keeps small rho accurate: (1 - p^rho) / rho -> -ln p
            LossFamily::GeneralizedCrossEntropy => -(prm.rho * py.ln()).exp_m1() / prm.rho,
        }
    }

    /// `d phi / d p_y`.
    pub(crate) fn dphi(&self, py: f64) -> f64 {
        let prm = self.params();
        match self.family() {
            LossFamily::CrossEntropy => -1.0 / py,
            LossFamily::Focal => {
                let g = prm.gamma;
                let rest = 1.0 - py;
                let modulated = if g == 0.0 || rest <= 0.0 {
                    0.0
                } else {
                    g * rest.powf(g - 1.0) * py.ln()
                };
                modulated - rest.powf(g) / py
            }
            LossFamily::MeanAbsoluteError => -2.0,
            LossFamily::ReverseCrossEntropy => prm.a,
            LossFamily::GeneralizedCrossEntropy => -py.powf(prm.rho - 1.0),
        }
    }

    /// The unnormalized family's value, ignoring the normalized flag.
    pub fn eval_base(&self, p: &ProbVector, y: usize) -> Result<f64> {
        check_label(p, y)?;
        Ok(self.phi(p.get(y)))
    }

    /// Ratio normalization computed generically: the base loss divided by
    /// its sum over every hypothetical label.
    pub fn normalize_eval(&self, p: &ProbVector, y: usize) -> Result<f64> {
        check_label(p, y)?;
        let mut denom = 0.0;
        for j in 0..p.len() {
            denom += self.eval_base(p, j)?;
        }
        if denom == 0.0 {
            return Err(Error::DegeneratePrediction(format!(
                "every per-label `{}` loss is zero",
                self.base()
            )));
        }
        Ok(self.eval_base(p, y)? / denom)
    }

    /// Closed-form normalized value, ignoring the normalized flag.
    pub fn eval_closed_normalized(&self, p: &ProbVector, y: usize) -> Result<f64> {
        check_label(p, y)?;
        let k = p.len() as f64;
        let py = p.get(y);
        let prm = self.params();
        let (num, den) = match self.family() {
            LossFamily::CrossEntropy => (py.ln(), p.as_slice().iter().map(|v| v.ln()).sum()),
            LossFamily::Focal => {
                let term = |v: f64| (1.0 - v).powf(prm.gamma) * v.ln();
                (term(py), p.as_slice().iter().map(|&v| term(v)).sum())
            }
            LossFamily::MeanAbsoluteError | LossFamily::ReverseCrossEntropy => (1.0 - py, k - 1.0),
            LossFamily::GeneralizedCrossEntropy => {
                // 1 - v^rho, i.e. the numerator of K - sum_j p_j^rho
                let term = |v: f64| -(prm.rho * v.ln()).exp_m1();
                (term(py), p.as_slice().iter().map(|&v| term(v)).sum())
            }
        };
        if den == 0.0 {
            return Err(Error::DegeneratePrediction(format!(
                "normalizer of `{}` is zero",
                self.normalized()
            )));
        }
        Ok(num / den)
    }

    /// Loss value honoring the normalized flag.
    pub fn eval(&self, p: &ProbVector, y: usize) -> Result<f64> {
        if self.is_normalized() {
            self.eval_closed_normalized(p, y)
        } else {
            self.eval_base(p, y)
        }
    }

    /// Sum of the per-class summands in the loss's defining expression.
    pub fn decompose(&self, p: &ProbVector, y: usize) -> Result<LossDecomposition> {
        check_label(p, y)?;
        let mut per_class = vec![0.0; p.len()];
        match self.family() {
            LossFamily::CrossEntropy
            | LossFamily::Focal
            | LossFamily::GeneralizedCrossEntropy => per_class[y] = self.phi(p.get(y)),
            LossFamily::MeanAbsoluteError => {
                for (k, slot) in per_class.iter_mut().enumerate() {
                    let q = if k == y { 1.0 } else { 0.0 };
                    *slot = (p.get(k) - q).abs();
                }
            }
            LossFamily::ReverseCrossEntropy => {
                // log q_y = 0; every other log q_k is truncated to A
                let a = self.params().a;
                for (k, slot) in per_class.iter_mut().enumerate() {
                    if k != y {
                        *slot = -a * p.get(k);
                    }
                }
            }
        }
        if self.is_normalized() {
            let mut denom = 0.0;
            for j in 0..p.len() {
                denom += self.eval_base(p, j)?;
            }
            if denom == 0.0 {
                return Err(Error::DegeneratePrediction(format!(
                    "every per-label `{}` loss is zero",
                    self.base()
                )));
            }
            for v in &mut per_class {
                *v /= denom;
            }
        }
        Ok(LossDecomposition { per_class })
    }
}

fn table_activity(spec: &LossSpec) -> Activity {
    match spec.family() {
        LossFamily::CrossEntropy | LossFamily::Focal | LossFamily::GeneralizedCrossEntropy => {
            Activity::Active
        }
        LossFamily::MeanAbsoluteError | LossFamily::ReverseCrossEntropy => Activity::Passive,
    }
}

const CERTIFICATE_SAMPLES: usize = 1000;
const CERTIFICATE_SEED: u64 = 0x5eed_ac71;

/// Checks the per-class decomposition on random `(p, y)` pairs. Returns
/// `Active` when no pair shows mass off the labelled class.
pub fn certify_activity(spec: &LossSpec, samples: usize, seed: u64) -> Activity {
    let mut rng = Rng::new(seed);
    for _ in 0..samples {
        let k = 2 + rng.below(9);
        let Ok(p) = ProbVector::from_weights(&rng.simplex_point(k)) else {
            continue;
        };
        let y = rng.below(k);
        if let Ok(d) = spec.decompose(&p, y) {
            if d.off_label_mass(y) > 0.0 {
                return Activity::Passive;
            }
        }
    }
    Activity::Active
}

/// Active when both the analytic table and the randomized certificate agree
/// that all mass sits on the labelled class.
pub fn classify_activity(spec: &LossSpec) -> Activity {
    let table = table_activity(spec);
    let certificate = certify_activity(spec, CERTIFICATE_SAMPLES, CERTIFICATE_SEED);
    if table == Activity::Active && certificate == Activity::Active {
        Activity::Active
    } else {
        Activity::Passive
    }
}

impl AplSpec {
    pub fn eval(&self, p: &ProbVector, y: usize) -> Result<f64> {
        Ok(self.alpha * self.active.eval(p, y)? + self.beta * self.passive.eval(p, y)?)
    }
}

impl Loss {
    pub fn eval(&self, p: &ProbVector, y: usize) -> Result<f64> {
        match self {
            Loss::Single(s) => s.eval(p, y),
            Loss::Combined(s) => s.eval(p, y),
        }
    }

    /// The loss against every hypothetical label.
    pub fn per_label(&self, p: &ProbVector) -> Result<Vec<f64>> {
        (0..p.len()).map(|j| self.eval(p, j)).collect()
    }

    pub fn is_normalized(&self) -> bool {
        matches!(self, Loss::Single(s) if s.is_normalized())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    const P3: [f64; 3] = [0.7, 0.2, 0.1];

    /// Literal definitions straight from the one-hot target `q`.
    fn literal(spec: &LossSpec, p: &[f64], y: usize) -> f64 {
        let q = |k: usize| if k == y { 1.0 } else { 0.0 };
        let prm = spec.params();
        let k = p.len();
        match spec.family() {
            LossFamily::CrossEntropy => -(0..k).map(|i| q(i) * p[i].ln()).sum::<f64>(),
            LossFamily::Focal => -(0..k)
                .map(|i| q(i) * (1.0 - p[i]).powf(prm.gamma) * p[i].ln())
                .sum::<f64>(),
            LossFamily::MeanAbsoluteError => (0..k).map(|i| (p[i] - q(i)).abs()).sum(),
            LossFamily::ReverseCrossEntropy => {
                let floor = prm.a.exp();
                -(0..k).map(|i| p[i] * q(i).max(floor).ln()).sum::<f64>()
            }
            LossFamily::GeneralizedCrossEntropy => (1.0 - p[y].powf(prm.rho)) / prm.rho,
        }
    }

    #[test]
    fn base_examples() {
        assert_eq!(LossSpec::ce().eval(&pv(&[1.0 - 1e-7, 1e-7]), 0).unwrap(), -(1.0f64 - 1e-7).ln());
        let mae = LossSpec::mae().eval(&pv(&P3), 0).unwrap();
        assert!((mae - 0.6).abs() < 1e-15);
        let rce = LossSpec::rce(-4.0).unwrap().eval(&pv(&P3), 0).unwrap();
        assert!((rce - 1.2).abs() < 1e-14);
        // (1 - 0.5^0.7) / 0.7, mpmath
        let gce = LossSpec::gce(0.7).unwrap().eval(&pv(&[0.5, 0.5]), 0).unwrap();
        assert!((gce - 0.549182561896488368).abs() < 1e-14);
    }

    #[test]
    fn ce_at_certainty_is_zero() {
        let p = ProbVector::from_weights(&[1.0, 0.0, 0.0]).unwrap();
        assert!(LossSpec::ce().eval(&p, 0).unwrap() < 1e-6);
    }

    #[test]
    fn closed_forms_match_literal_sums() {
        let mut rng = Rng::new(3);
        for spec in LossSpec::all_default().into_iter().filter(|s| !s.is_normalized()) {
            for _ in 0..200 {
                let k = 2 + rng.below(8);
                let p = ProbVector::from_weights(&rng.simplex_point(k)).unwrap();
                let y = rng.below(k);
                let a = spec.eval(&p, y).unwrap();
                let b = literal(&spec, p.as_slice(), y);
                assert!((a - b).abs() < 1e-12, "{spec}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn normalized_examples() {
        let p = pv(&P3);
        let nce = LossSpec::ce().normalize_eval(&p, 0).unwrap();
        // -ln 0.7 / (-ln 0.7 - ln 0.2 - ln 0.1), mpmath
        assert!((nce - 0.0835559105304308138).abs() < 1e-15);
        let closed = LossSpec::ce().normalized().eval(&p, 0).unwrap();
        assert!((closed - nce).abs() < 1e-15);

        let nmae = LossSpec::mae().normalize_eval(&p, 0).unwrap();
        assert!((nmae - 0.15).abs() < 1e-15);

        let ngce = LossSpec::gce(0.7).unwrap().normalized().eval(&p, 0).unwrap();
        assert!((ngce - 0.130174889495046422).abs() < 1e-14);

        for spec in LossSpec::all_default() {
            for k in [2, 3, 10] {
                let u = ProbVector::uniform(k).unwrap();
                let v = spec.normalize_eval(&u, k - 1).unwrap();
                assert!((v - 1.0 / k as f64).abs() < 1e-12, "{spec} K={k}");
            }
        }
    }

    #[test]
    fn nfl_with_zero_gamma_is_nce() {
        let nfl = LossSpec::focal(0.0).unwrap().normalized();
        let nce = LossSpec::ce().normalized();
        let mut rng = Rng::new(5);
        for _ in 0..100 {
            let k = 2 + rng.below(8);
            let p = ProbVector::from_weights(&rng.simplex_point(k)).unwrap();
            let y = rng.below(k);
            assert_eq!(nfl.eval(&p, y).unwrap(), nce.eval(&p, y).unwrap());
        }
    }

    #[test]
    fn label_out_of_range() {
        let p = pv(&P3);
        assert!(matches!(LossSpec::ce().eval(&p, 3), Err(Error::InvalidInput(_))));
        assert!(LossSpec::mae().decompose(&p, 5).is_err());
    }

    #[test]
    fn decomposition_examples() {
        let p = pv(&P3);
        let d = LossSpec::mae().decompose(&p, 0).unwrap();
        for (a, b) in d.per_class.iter().zip([0.3, 0.2, 0.1]) {
            assert!((a - b).abs() < 1e-15);
        }
        let d = LossSpec::rce(-4.0).unwrap().decompose(&p, 0).unwrap();
        for (a, b) in d.per_class.iter().zip([0.0, 0.8, 0.4]) {
            assert!((a - b).abs() < 1e-15);
        }
        let d = LossSpec::ce().decompose(&p, 1).unwrap();
        assert_eq!(d.off_label_mass(1), 0.0);
        assert!(d.per_class[1] > 0.0);
    }

    #[test]
    fn activity_table() {
        use Activity::*;
        let cases = [
            ("ce", Active),
            ("nce", Active),
            ("fl", Active),
            ("nfl", Active),
            ("gce", Active),
            ("ngce", Active),
            ("mae", Passive),
            ("nmae", Passive),
            ("rce", Passive),
            ("nrce", Passive),
        ];
        for (s, expected) in cases {
            let spec: LossSpec = s.parse().unwrap();
            assert_eq!(classify_activity(&spec), expected, "{s}");
            assert_eq!(table_activity(&spec), certify_activity(&spec, 1000, 9), "{s}");
        }
    }

    #[test]
    fn apl_examples() {
        let apl = AplSpec::new(LossSpec::ce().normalized(), LossSpec::rce(-4.0).unwrap(), 1.0, 1.0)
            .unwrap();
        let u = ProbVector::uniform(10).unwrap();
        assert!((apl.eval(&u, 0).unwrap() - 3.7).abs() < 1e-12);

        assert!(AplSpec::new(LossSpec::ce().normalized(), LossSpec::mae(), 0.0, 1.0).is_err());

        let nfl0 = AplSpec::new(LossSpec::focal(0.0).unwrap().normalized(), LossSpec::mae(), 2.0, 3.0)
            .unwrap();
        let nce = AplSpec::new(LossSpec::ce().normalized(), LossSpec::mae(), 2.0, 3.0).unwrap();
        let p = pv(&P3);
        for y in 0..3 {
            assert_eq!(nfl0.eval(&p, y).unwrap(), nce.eval(&p, y).unwrap());
        }
    }

    #[test]
    fn sce_requires_waiver() {
        assert!(AplSpec::new(LossSpec::ce(), LossSpec::rce(-4.0).unwrap(), 0.1, 1.0).is_err());
        let sce = AplSpec::unconstrained(LossSpec::ce(), LossSpec::rce(-4.0).unwrap(), 0.1, 1.0)
            .unwrap();
        let p = pv(&P3);
        let expected = 0.1 * -(0.7f64).ln() + 1.2;
        assert!((sce.eval(&p, 0).unwrap() - expected).abs() < 1e-14);
    }
}
