//! Loss descriptors and their string syntax.
//!
//! ```text
//! ce | fl:gamma=0.5 | mae | rce:A=-4 | gce:rho=0.7
//! nce | nfl:gamma=0.5 | nmae | nrce:A=-4 | ngce:rho=0.7
//! apl:<active>+<passive>[:alpha=..,beta=..]
//! sum:<first>+<second>[:alpha=..,beta=..]     (no activity checks, e.g. SCE)
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 0.5;
pub const DEFAULT_A: f64 = -4.0;
pub const DEFAULT_RHO: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossFamily {
    CrossEntropy,
    Focal,
    MeanAbsoluteError,
    ReverseCrossEntropy,
    GeneralizedCrossEntropy,
}

impl LossFamily {
    pub const ALL: [LossFamily; 5] = [
        LossFamily::CrossEntropy,
        LossFamily::Focal,
        LossFamily::MeanAbsoluteError,
        LossFamily::ReverseCrossEntropy,
        LossFamily::GeneralizedCrossEntropy,
    ];

    pub(crate) fn short_name(self) -> &'static str {
        match self {
            LossFamily::CrossEntropy => "ce",
            LossFamily::Focal => "fl",
            LossFamily::MeanAbsoluteError => "mae",
            LossFamily::ReverseCrossEntropy => "rce",
            LossFamily::GeneralizedCrossEntropy => "gce",
        }
    }

    fn from_short_name(name: &str) -> Option<Self> {
        LossFamily::ALL
            .into_iter()
            .find(|f| f.short_name() == name)
    }
}

/// Hyperparameters shared by all families; each family reads only its own.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyParams {
    /// Focal exponent.
    pub gamma: f64,
    /// Log of the truncated zero entries of the one-hot target (RCE).
    pub a: f64,
    /// GCE exponent.
    pub rho: f64,
}

impl Default for FamilyParams {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            a: DEFAULT_A,
            rho: DEFAULT_RHO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activity {
    Active,
    Passive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    family: LossFamily,
    params: FamilyParams,
    normalized: bool,
}

impl LossSpec {
    pub fn new(family: LossFamily, params: FamilyParams, normalized: bool) -> Result<Self> {
        match family {
            LossFamily::Focal if !(params.gamma >= 0.0 && params.gamma.is_finite()) => {
                Err(Error::Config(format!("focal gamma must be >= 0, got {}", params.gamma)))
            }
            LossFamily::ReverseCrossEntropy if !(params.a < 0.0 && params.a.is_finite()) => {
                Err(Error::Config(format!("RCE A must be < 0, got {}", params.a)))
            }
            LossFamily::GeneralizedCrossEntropy if !(params.rho > 0.0 && params.rho <= 1.0) => {
                Err(Error::Config(format!("GCE rho must be in (0, 1], got {}", params.rho)))
            }
            _ => Ok(Self {
                family,
                params,
                normalized,
            }),
        }
    }

    pub fn ce() -> Self {
        Self::plain(LossFamily::CrossEntropy)
    }

    pub fn mae() -> Self {
        Self::plain(LossFamily::MeanAbsoluteError)
    }

    pub fn rce(a: f64) -> Result<Self> {
        Self::new(
            LossFamily::ReverseCrossEntropy,
            FamilyParams {
                a,
                ..Default::default()
            },
            false,
        )
    }

    pub fn focal(gamma: f64) -> Result<Self> {
        Self::new(
            LossFamily::Focal,
            FamilyParams {
                gamma,
                ..Default::default()
            },
            false,
        )
    }

    pub fn gce(rho: f64) -> Result<Self> {
        Self::new(
            LossFamily::GeneralizedCrossEntropy,
            FamilyParams {
                rho,
                ..Default::default()
            },
            false,
        )
    }

    fn plain(family: LossFamily) -> Self {
        Self {
            family,
            params: FamilyParams::default(),
            normalized: false,
        }
    }

    /// The same family and parameters, normalized.
    pub fn normalized(self) -> Self {
        Self {
            normalized: true,
            ..self
        }
    }

    /// The same family and parameters, unnormalized.
    pub fn base(self) -> Self {
        Self {
            normalized: false,
            ..self
        }
    }

    pub fn family(&self) -> LossFamily {
        self.family
    }

    pub fn params(&self) -> FamilyParams {
        self.params
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Whether the loss summed over all labels is the same for every
    /// prediction: true for normalized losses, MAE and RCE.
    pub fn has_constant_sum(&self) -> bool {
        self.normalized
            || matches!(
                self.family,
                LossFamily::MeanAbsoluteError | LossFamily::ReverseCrossEntropy
            )
    }

    /// The five base families and their normalized forms, default parameters.
    pub fn all_default() -> Vec<LossSpec> {
        let mut out = Vec::with_capacity(10);
        for normalized in [false, true] {
            for family in LossFamily::ALL {
                out.push(Self {
                    family,
                    params: FamilyParams::default(),
                    normalized,
                });
            }
        }
        out
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.normalized {
            f.write_str("n")?;
        }
        f.write_str(self.family.short_name())?;
        match self.family {
            LossFamily::Focal => write!(f, ":gamma={}", self.params.gamma),
            LossFamily::ReverseCrossEntropy => write!(f, ":A={}", self.params.a),
            LossFamily::GeneralizedCrossEntropy => write!(f, ":rho={}", self.params.rho),
            _ => Ok(()),
        }
    }
}

fn parse_number(key: &str, value: &str) -> Result<f64> {
    value
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Config(format!("`{key}` expects a number, got `{value}`")))
}

fn split_kv(pair: &str) -> Result<(&str, &str)> {
    pair.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Error::Config(format!("expected key=value, got `{pair}`")))
}

impl FromStr for LossSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let name = name.to_ascii_lowercase();
        let (family, normalized) = match LossFamily::from_short_name(&name) {
            Some(f) => (f, false),
            None => match name
                .strip_prefix('n')
                .and_then(LossFamily::from_short_name)
            {
                Some(f) => (f, true),
                None => return Err(Error::Config(format!("unknown loss `{s}`"))),
            },
        };
        let mut params = FamilyParams::default();
        if let Some(args) = args {
            for pair in args.split(',').filter(|p| !p.trim().is_empty()) {
                let (key, value) = split_kv(pair)?;
                match (family, key) {
                    (LossFamily::Focal, "gamma") => params.gamma = parse_number(key, value)?,
                    (LossFamily::ReverseCrossEntropy, "A" | "a") => {
                        params.a = parse_number(key, value)?
                    }
                    (LossFamily::GeneralizedCrossEntropy, "rho") => {
                        params.rho = parse_number(key, value)?
                    }
                    _ => {
                        return Err(Error::Config(format!(
                            "loss `{name}` has no parameter `{key}`"
                        )))
                    }
                }
            }
        }
        LossSpec::new(family, params, normalized)
    }
}

/// Weighted sum `alpha * first + beta * second`.
///
/// Built with [`AplSpec::new`] the first term must be active and the second
/// passive. [`AplSpec::unconstrained`] skips those checks, which is how
/// non-APL sums such as symmetric cross entropy (CE + RCE) are expressed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AplSpec {
    pub active: LossSpec,
    pub passive: LossSpec,
    pub alpha: f64,
    pub beta: f64,
    constrained: bool,
}

fn check_weights(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) || !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!(
            "alpha and beta must be positive, got alpha={alpha}, beta={beta}"
        )));
    }
    Ok(())
}

impl AplSpec {
    pub fn new(active: LossSpec, passive: LossSpec, alpha: f64, beta: f64) -> Result<Self> {
        check_weights(alpha, beta)?;
        if super::classify_activity(&active) != Activity::Active {
            return Err(Error::Config(format!("`{active}` is not an active loss")));
        }
        if super::classify_activity(&passive) != Activity::Passive {
            return Err(Error::Config(format!("`{passive}` is not a passive loss")));
        }
        for term in [&active, &passive] {
            if !term.has_constant_sum() {
                return Err(Error::Config(format!(
                    "`{term}` is not robust; normalize it first (e.g. `n{}`)",
                    term.family().short_name()
                )));
            }
        }
        Ok(Self {
            active,
            passive,
            alpha,
            beta,
            constrained: true,
        })
    }

    pub fn unconstrained(first: LossSpec, second: LossSpec, alpha: f64, beta: f64) -> Result<Self> {
        check_weights(alpha, beta)?;
        Ok(Self {
            active: first,
            passive: second,
            alpha,
            beta,
            constrained: false,
        })
    }

    /// Whether the active/passive split was enforced at construction.
    pub fn is_constrained(&self) -> bool {
        self.constrained
    }
}

impl fmt::Display for AplSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = if self.constrained { "apl" } else { "sum" };
        write!(
            f,
            "{prefix}:{}+{}:alpha={},beta={}",
            self.active, self.passive, self.alpha, self.beta
        )
    }
}

/// Anything the evaluators and the trainer accept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loss {
    Single(LossSpec),
    Combined(AplSpec),
}

impl From<LossSpec> for Loss {
    fn from(s: LossSpec) -> Self {
        Loss::Single(s)
    }
}

impl From<AplSpec> for Loss {
    fn from(s: AplSpec) -> Self {
        Loss::Combined(s)
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Loss::Single(s) => s.fmt(f),
            Loss::Combined(s) => s.fmt(f),
        }
    }
}

fn is_weight_segment(seg: &str) -> bool {
    !seg.trim().is_empty()
        && seg.split(',').all(|pair| {
            matches!(
                pair.split_once('=').map(|(k, _)| k.trim()),
                Some("alpha" | "beta")
            )
        })
}

fn parse_combined(body: &str, constrained: bool, original: &str) -> Result<Loss> {
    let (first, rest) = body
        .split_once('+')
        .ok_or_else(|| Error::Config(format!("`{original}` needs two terms joined by `+`")))?;
    let mut second_segs = Vec::new();
    let (mut alpha, mut beta) = (1.0, 1.0);
    for seg in rest.split(':') {
        if is_weight_segment(seg) {
            for pair in seg.split(',') {
                let (key, value) = split_kv(pair)?;
                let v = parse_number(key, value)?;
                if key == "alpha" {
                    alpha = v;
                } else {
                    beta = v;
                }
            }
        } else {
            second_segs.push(seg);
        }
    }
    let first: LossSpec = first.parse()?;
    let second: LossSpec = second_segs.join(":").parse()?;
    let spec = if constrained {
        AplSpec::new(first, second, alpha, beta)?
    } else {
        AplSpec::unconstrained(first, second, alpha, beta)?
    };
    Ok(Loss::Combined(spec))
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if let Some(body) = t.strip_prefix("apl:") {
            parse_combined(body, true, t)
        } else if let Some(body) = t.strip_prefix("sum:") {
            parse_combined(body, false, t)
        } else {
            Ok(Loss::Single(t.parse()?))
        }
    }
}
