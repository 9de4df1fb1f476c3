//! Class-conditional label noise: transition matrices and seeded label
//! corruption.
//!
//! Entry `[j][k]` of a transition matrix is the probability that a sample
//! whose true class is `j` is labelled `k`.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::Rng;

const ROW_TOL: f64 = 1e-12;

/// Flip pairs used for asymmetric CIFAR-10 noise: truck to automobile, bird
/// to airplane, deer to horse, cat and dog swapped.
pub const CIFAR10_PAIRS: [(usize, usize); 5] = [(9, 1), (2, 0), (4, 7), (3, 5), (5, 3)];

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    Symmetric { eta: f64 },
    PairwiseAsymmetric { pairs: Vec<(usize, usize)>, eta: f64 },
    GroupCircular { groups: Vec<Vec<usize>>, eta: f64 },
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    transition: Vec<Vec<f64>>,
    kind: NoiseKind,
}

fn check_classes(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {k}")));
    }
    Ok(())
}

fn identity(k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|j| (0..k).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Noise rate above which symmetric noise stops being tolerable: (K-1)/K.
pub fn symmetric_bound(k: usize) -> f64 {
    (k as f64 - 1.0) / k as f64
}

impl NoiseModel {
    /// Uniform flips: `1 - eta` on the diagonal, `eta / (K - 1)` elsewhere.
    ///
    /// Rates at or above `(K-1)/K` are rejected unless `allow_over_bound`
    /// is set, which exists for negative tests.
    pub fn symmetric(k: usize, eta: f64, allow_over_bound: bool) -> Result<Self> {
        check_classes(k)?;
        if !(0.0..1.0).contains(&eta) {
            return Err(Error::Config(format!("noise rate {eta} outside [0, 1)")));
        }
        if eta >= symmetric_bound(k) && !allow_over_bound {
            return Err(Error::Config(format!(
                "symmetric noise rate {eta} is not below (K-1)/K = {} for K={k}",
                symmetric_bound(k)
            )));
        }
        let off = eta / (k as f64 - 1.0);
        let transition = (0..k)
            .map(|j| {
                (0..k)
                    .map(|i| if i == j { 1.0 - eta } else { off })
                    .collect()
            })
            .collect();
        Ok(Self {
            transition,
            kind: NoiseKind::Symmetric { eta },
        })
    }

    /// Each listed source class flips to its destination with probability
    /// `eta`; unlisted classes are untouched.
    pub fn pairwise(k: usize, pairs: &[(usize, usize)], eta: f64) -> Result<Self> {
        check_classes(k)?;
        if !(0.0..=0.5).contains(&eta) {
            return Err(Error::Config(format!("pairwise noise rate {eta} outside [0, 0.5]")));
        }
        let mut transition = identity(k);
        let mut seen = vec![false; k];
        for &(src, dst) in pairs {
            if src >= k || dst >= k {
                return Err(Error::Config(format!("pair {src}->{dst} out of range for K={k}")));
            }
            if src == dst {
                return Err(Error::Config(format!("pair {src}->{dst} maps a class to itself")));
            }
            if std::mem::replace(&mut seen[src], true) {
                return Err(Error::Config(format!("class {src} listed as a source twice")));
            }
            transition[src][src] = 1.0 - eta;
            transition[src][dst] = eta;
        }
        Ok(Self {
            transition,
            kind: NoiseKind::PairwiseAsymmetric {
                pairs: pairs.to_vec(),
                eta,
            },
        })
    }

    /// Within each ordered group, class `g[i]` flips to `g[(i+1) % len]`
    /// with probability `eta`.
    pub fn group_circular(k: usize, groups: &[Vec<usize>], eta: f64) -> Result<Self> {
        check_classes(k)?;
        if !(0.0..1.0).contains(&eta) {
            return Err(Error::Config(format!("noise rate {eta} outside [0, 1)")));
        }
        let mut seen = vec![false; k];
        for g in groups {
            if g.len() < 2 {
                return Err(Error::Config(format!("group {g:?} has fewer than 2 classes")));
            }
            for &c in g {
                if c >= k {
                    return Err(Error::Config(format!("class {c} out of range for K={k}")));
                }
                if std::mem::replace(&mut seen[c], true) {
                    return Err(Error::Config(format!("class {c} appears in two groups")));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("class {missing} is in no group")));
        }
        let mut transition = identity(k);
        for g in groups {
            for (i, &src) in g.iter().enumerate() {
                let dst = g[(i + 1) % g.len()];
                transition[src][src] = 1.0 - eta;
                transition[src][dst] += eta;
            }
        }
        Ok(Self {
            transition,
            kind: NoiseKind::GroupCircular {
                groups: groups.to_vec(),
                eta,
            },
        })
    }

    pub fn custom(transition: Vec<Vec<f64>>) -> Result<Self> {
        let k = transition.len();
        check_classes(k)?;
        for (j, row) in transition.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Config(format!("row {j} has {} entries, expected {k}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Config(format!("row {j} has a negative or non-finite entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_TOL {
                return Err(Error::Config(format!("row {j} sums to {s}")));
            }
        }
        Ok(Self {
            transition,
            kind: NoiseKind::Custom,
        })
    }

    pub fn identity(k: usize) -> Result<Self> {
        Self::symmetric(k, 0.0, false)
    }

    pub fn num_classes(&self) -> usize {
        self.transition.len()
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn kind(&self) -> &NoiseKind {
        &self.kind
    }

    /// Largest `|row sum - 1|`.
    pub fn max_row_error(&self) -> f64 {
        self.transition
            .iter()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Symmetric structure with `eta < (K-1)/K`.
    pub fn satisfies_symmetric_condition(&self) -> bool {
        let k = self.num_classes();
        let eta = 1.0 - self.transition[0][0];
        let off = eta / (k as f64 - 1.0);
        let uniform = self.transition.iter().enumerate().all(|(j, row)| {
            row.iter().enumerate().all(|(i, &v)| {
                let want = if i == j { 1.0 - eta } else { off };
                (v - want).abs() <= ROW_TOL
            })
        });
        uniform && eta < symmetric_bound(k)
    }

    /// Every off-diagonal entry is strictly below its row's diagonal, i.e.
    /// `eta_jk < 1 - eta_j` where `eta_j` is the total flip rate of class j.
    pub fn satisfies_class_conditional_condition(&self) -> bool {
        self.transition.iter().enumerate().all(|(j, row)| {
            row.iter()
                .enumerate()
                .all(|(k, &v)| k == j || v < row[j])
        })
    }

    /// Entries that break [`Self::satisfies_class_conditional_condition`].
    pub fn class_conditional_violations(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (j, row) in self.transition.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                if k != j && v >= row[j] {
                    out.push((j, k));
                }
            }
        }
        out
    }
}

/// `K/size` consecutive blocks of `size` classes, as used for the CIFAR-100
/// super-class scheme (20 blocks of 5).
pub fn consecutive_groups(k: usize, size: usize) -> Result<Vec<Vec<usize>>> {
    if size < 2 || k % size != 0 {
        return Err(Error::Config(format!(
            "cannot split {k} classes into groups of {size}"
        )));
    }
    Ok((0..k / size)
        .map(|g| (g * size..(g + 1) * size).collect())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorruptionMode {
    /// Per class, exactly `round(n_j * (1 - T[j][j]))` labels flip.
    #[default]
    ExactFraction,
    /// Every label is redrawn independently from its row.
    Bernoulli,
}

impl FromStr for CorruptionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" | "exact_fraction" => Ok(CorruptionMode::ExactFraction),
            "bernoulli" => Ok(CorruptionMode::Bernoulli),
            _ => Err(Error::Config(format!("unknown corruption mode `{s}`"))),
        }
    }
}

impl fmt::Display for CorruptionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorruptionMode::ExactFraction => "exact",
            CorruptionMode::Bernoulli => "bernoulli",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionRecord {
    pub clean_labels: Vec<usize>,
    pub noisy_labels: Vec<usize>,
    pub flipped_mask: Vec<bool>,
    pub realized_rate: f64,
}

impl CorruptionRecord {
    fn from_labels(clean_labels: Vec<usize>, noisy_labels: Vec<usize>) -> Self {
        let flipped_mask: Vec<bool> = clean_labels
            .iter()
            .zip(&noisy_labels)
            .map(|(c, n)| c != n)
            .collect();
        let flips = flipped_mask.iter().filter(|f| **f).count();
        let realized_rate = if clean_labels.is_empty() {
            0.0
        } else {
            flips as f64 / clean_labels.len() as f64
        };
        Self {
            clean_labels,
            noisy_labels,
            flipped_mask,
            realized_rate,
        }
    }

    /// Row-normalized empirical transition frequencies.
    pub fn empirical_transition(&self, k: usize) -> Vec<Vec<f64>> {
        let mut counts = vec![vec![0usize; k]; k];
        for (&c, &n) in self.clean_labels.iter().zip(&self.noisy_labels) {
            counts[c][n] += 1;
        }
        counts
            .into_iter()
            .map(|row| {
                let total: usize = row.iter().sum();
                row.into_iter()
                    .map(|c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                    .collect()
            })
            .collect()
    }

    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "index,clean,noisy,flipped")?;
        for (i, ((c, n), f)) in self
            .clean_labels
            .iter()
            .zip(&self.noisy_labels)
            .zip(&self.flipped_mask)
            .enumerate()
        {
            writeln!(out, "{i},{c},{n},{}", u8::from(*f))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// Corrupts `labels` under `model`, deterministically for a given seed.
pub fn corrupt(
    labels: &[usize],
    model: &NoiseModel,
    seed: u64,
    mode: CorruptionMode,
) -> Result<CorruptionRecord> {
    let k = model.num_classes();
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidInput(format!(
            "label {bad} out of range for K={k}"
        )));
    }
    let mut rng = Rng::new(seed);
    let mut noisy = labels.to_vec();
    match mode {
        CorruptionMode::Bernoulli => {
            for (slot, &y) in noisy.iter_mut().zip(labels) {
                *slot = rng.categorical(&model.transition[y]);
            }
        }
        CorruptionMode::ExactFraction => {
            for j in 0..k {
                let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == j).collect();
                if members.is_empty() {
                    continue;
                }
                let row = &model.transition[j];
                let flip_rate = 1.0 - row[j];
                let flips = (members.len() as f64 * flip_rate).round_ties_even() as usize;
                let flips = flips.min(members.len());
                if flips == 0 {
                    continue;
                }
                let off: Vec<f64> = row
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| if i == j { 0.0 } else { v })
                    .collect();
                rng.shuffle(&mut members);
                for &i in &members[..flips] {
                    noisy[i] = rng.categorical(&off);
                }
            }
        }
    }
    Ok(CorruptionRecord::from_labels(labels.to_vec(), noisy))
}

/// Where the circular-noise groups come from.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupSource {
    /// Consecutive blocks of 5 (CIFAR-100 super-classes).
    Cifar100,
    File(PathBuf),
}

/// Textual noise description:
/// `none`, `sym:<eta>[:override]`, `pair:<eta>:cifar10`,
/// `pair:<eta>:map=<src>><dst>,...`, `circ:<eta>:groups=<file|cifar100>`.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    Symmetric { eta: f64, allow_over_bound: bool },
    Pairwise { eta: f64, pairs: Vec<(usize, usize)>, map_name: String },
    Circular { eta: f64, groups: GroupSource },
}

impl NoiseSpec {
    pub fn eta(&self) -> f64 {
        match self {
            NoiseSpec::Symmetric { eta, .. }
            | NoiseSpec::Pairwise { eta, .. }
            | NoiseSpec::Circular { eta, .. } => *eta,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            NoiseSpec::Symmetric { .. } => "symmetric",
            NoiseSpec::Pairwise { .. } => "pairwise",
            NoiseSpec::Circular { .. } => "circular",
        }
    }

    /// Short tag suitable for file names.
    pub fn tag(&self) -> String {
        match self {
            NoiseSpec::Symmetric { eta, .. } => format!("sym{eta}"),
            NoiseSpec::Pairwise { eta, map_name, .. } => format!("pair{eta}-{map_name}"),
            NoiseSpec::Circular { eta, .. } => format!("circ{eta}"),
        }
    }

    pub fn build(&self, k: usize) -> Result<NoiseModel> {
        match self {
            NoiseSpec::Symmetric {
                eta,
                allow_over_bound,
            } => NoiseModel::symmetric(k, *eta, *allow_over_bound),
            NoiseSpec::Pairwise { eta, pairs, .. } => NoiseModel::pairwise(k, pairs, *eta),
            NoiseSpec::Circular { eta, groups } => {
                let groups = match groups {
                    GroupSource::Cifar100 => consecutive_groups(k, 5)?,
                    GroupSource::File(path) => read_groups(path)?,
                };
                NoiseModel::group_circular(k, &groups, *eta)
            }
        }
    }
}

/// One group per line; classes separated by commas or whitespace; `#`
/// starts a comment.
pub fn read_groups(path: &Path) -> Result<Vec<Vec<usize>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_groups(&text).map_err(|m| Error::format(path, m))
}

fn parse_groups(text: &str) -> std::result::Result<Vec<Vec<usize>>, String> {
    let mut groups = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let group = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<usize>().map_err(|_| format!("line {}: bad class `{t}`", n + 1)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        groups.push(group);
    }
    Ok(groups)
}

fn parse_eta(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Config(format!("bad noise rate `{s}`")))
}

impl FromStr for NoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().splitn(3, ':').collect();
        match parts.as_slice() {
            ["none"] => Ok(NoiseSpec::Symmetric {
                eta: 0.0,
                allow_over_bound: false,
            }),
            ["sym", eta] => Ok(NoiseSpec::Symmetric {
                eta: parse_eta(eta)?,
                allow_over_bound: false,
            }),
            ["sym", eta, "override"] => Ok(NoiseSpec::Symmetric {
                eta: parse_eta(eta)?,
                allow_over_bound: true,
            }),
            ["pair", eta, "cifar10"] => Ok(NoiseSpec::Pairwise {
                eta: parse_eta(eta)?,
                pairs: CIFAR10_PAIRS.to_vec(),
                map_name: "cifar10".into(),
            }),
            ["pair", eta, map] if map.starts_with("map=") => {
                let pairs = map["map=".len()..]
                    .split(',')
                    .map(|p| {
                        let (a, b) = p
                            .split_once('>')
                            .ok_or_else(|| Error::Config(format!("bad pair `{p}`, expected src>dst")))?;
                        let parse = |t: &str| {
                            t.trim()
                                .parse::<usize>()
                                .map_err(|_| Error::Config(format!("bad class `{t}`")))
                        };
                        Ok((parse(a)?, parse(b)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(NoiseSpec::Pairwise {
                    eta: parse_eta(eta)?,
                    pairs,
                    map_name: "custom".into(),
                })
            }
            ["circ", eta, groups] if groups.starts_with("groups=") => {
                let src = &groups["groups=".len()..];
                let groups = if src == "cifar100" {
                    GroupSource::Cifar100
                } else {
                    GroupSource::File(PathBuf::from(src))
                };
                Ok(NoiseSpec::Circular {
                    eta: parse_eta(eta)?,
                    groups,
                })
            }
            _ => Err(Error::Config(format!("unrecognized noise spec `{s}`"))),
        }
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseSpec::Symmetric {
                eta,
                allow_over_bound,
            } => {
                write!(f, "sym:{eta}")?;
                if *allow_over_bound {
                    f.write_str(":override")?;
                }
                Ok(())
            }
            NoiseSpec::Pairwise {
                eta,
                pairs,
                map_name,
            } => {
                if map_name == "cifar10" {
                    write!(f, "pair:{eta}:cifar10")
                } else {
                    let m: Vec<String> = pairs.iter().map(|(a, b)| format!("{a}>{b}")).collect();
                    write!(f, "pair:{eta}:map={}", m.join(","))
                }
            }
            NoiseSpec::Circular { eta, groups } => match groups {
                GroupSource::Cifar100 => write!(f, "circ:{eta}:groups=cifar100"),
                GroupSource::File(p) => write!(f, "circ:{eta}:groups={}", p.display()),
            },
        }
    }
}
