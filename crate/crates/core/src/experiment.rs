//! Config-driven experiment runner: datasets, noise, losses and training
//! wired into reproducible runs that emit CSV histories and summaries.
//!
//! # Config format (TOML)
//!
//! ```toml
//! seed = 0                      # run r uses seed + r for noise, init, shuffling
//! repeats = 3
//! output_dir = "results/mnist"  # relative to the output root (cwd by default)
//! losses = ["ce", "nce", "apl:nce+rce:alpha=1,beta=100"]
//! # validation_fraction = 0.2  # optional noisy hold-out from the training set
//!
//! [dataset]
//! kind = "mnist"               # or "blobs"
//! images = "../data/mnist/pool-images-idx3-ubyte.gz"   # relative to this file
//! labels = "../data/mnist/pool-labels-idx1-ubyte.gz"
//! train_per_class = 800         # stratified; the remainder is the test set
//!
//! [noise]
//! spec = "sym:0.6"
//! mode = "exact"                # or "bernoulli"
//!
//! [train]
//! epochs = 25
//! batch_size = 128
//! lr0 = 0.01
//! momentum = 0.9
//! weight_decay = 1e-3
//! hidden = [128, 128]
//! ```
//!
//! # Outputs
//!
//! * `{loss}_{noise}_{rep}.csv` — `epoch,lr,train_loss,train_acc,test_acc`
//! * `noise_{noise}_{rep}.csv` — `index,clean,noisy,flipped`
//! * `summary.csv` — one [`SummaryRow`] per loss
//! * `grid.csv` — one [`GridRow`] per (α, β) for [`alpha_beta_grid`]
//! * `config.resolved.toml` — the config after defaults were applied
//!
//! Standard deviations are population deviations (divisor n).

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{gen_blobs, holdout_fraction, load_mnist_idx, split_stratified, subset, Dataset};
use crate::error::{Error, Result};
use crate::losses::{AplSpec, Loss};
use crate::network::{evaluate_accuracy, train, MlpModel, TrainConfig, TrainingHistory};
use crate::noise::{corrupt, CorruptionMode, NoiseSpec};

pub const OUTPUT_ROOT_ENV: &str = "NORMLOSS_OUTPUT_ROOT";
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.2;
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const GRID_FILE: &str = "grid.csv";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    repeats: Option<usize>,
    output_dir: Option<PathBuf>,
    losses: Option<Vec<String>>,
    validation_fraction: Option<f64>,
    dataset: Option<DatasetSection>,
    noise: Option<NoiseSection>,
    train: Option<TrainSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum DatasetSection {
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        test_images: Option<PathBuf>,
        test_labels: Option<PathBuf>,
        train_per_class: Option<usize>,
        split_seed: Option<u64>,
    },
    Blobs {
        classes: Option<usize>,
        per_class: Option<usize>,
        test_per_class: Option<usize>,
        dim: Option<usize>,
        spread: Option<f64>,
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct NoiseSection {
    spec: Option<String>,
    mode: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr0: Option<f64>,
    momentum: Option<f64>,
    weight_decay: Option<f64>,
    hidden: Option<Vec<usize>>,
    shuffle: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetConfig {
    /// An IDX image/label pair. With `test` unset, `train_per_class`
    /// samples per class are drawn for training and the rest is the test set.
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        test: Option<(PathBuf, PathBuf)>,
        train_per_class: Option<usize>,
        split_seed: u64,
    },
    Blobs {
        classes: usize,
        per_class: usize,
        test_per_class: usize,
        dim: usize,
        spread: f64,
        seed: u64,
    },
}

impl DatasetConfig {
    pub fn num_classes(&self) -> usize {
        match self {
            DatasetConfig::Mnist { .. } => 10,
            DatasetConfig::Blobs { classes, .. } => *classes,
        }
    }

    /// `(train, test)` with clean labels.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetConfig::Mnist {
                images,
                labels,
                test,
                train_per_class,
                split_seed,
            } => {
                let pool = load_mnist_idx(images, labels)?;
                match (test, train_per_class) {
                    (Some((ti, tl)), per_class) => {
                        let train = match per_class {
                            Some(n) => subset(&pool, *n, *split_seed)?,
                            None => pool,
                        };
                        Ok((train, load_mnist_idx(ti, tl)?))
                    }
                    (None, Some(n)) => match split_stratified(&pool, *n, *split_seed)? {
                        (train, Some(test)) => Ok((train, test)),
                        (_, None) => Err(Error::Config(
                            "dataset.train_per_class leaves no test samples".into(),
                        )),
                    },
                    (None, None) => Err(Error::Config(
                        "dataset needs either train_per_class or test_images/test_labels".into(),
                    )),
                }
            }
            DatasetConfig::Blobs {
                classes,
                per_class,
                test_per_class,
                dim,
                spread,
                seed,
            } => {
                let all = gen_blobs(*classes, per_class + test_per_class, *dim, *spread, *seed)?;
                match split_stratified(&all, *per_class, *seed)? {
                    (train, Some(test)) => Ok((train, test)),
                    (_, None) => Err(Error::Config("dataset.test_per_class must be >= 1".into())),
                }
            }
        }
    }
}

/// Training hyperparameters shared by every run of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub hidden: Vec<usize>,
    pub shuffle: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 25,
            batch_size: 128,
            lr0: 0.01,
            momentum: 0.9,
            weight_decay: 1e-3,
            hidden: vec![128, 128],
            shuffle: true,
        }
    }
}

impl TrainSettings {
    pub fn train_config(&self, loss: Loss, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr0: self.lr0,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            loss,
            seed,
            shuffle: self.shuffle,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub repeats: usize,
    pub output_dir: PathBuf,
    pub losses: Vec<Loss>,
    pub dataset: DatasetConfig,
    pub noise: NoiseSpec,
    pub corruption: CorruptionMode,
    pub train: TrainSettings,
    pub validation_fraction: Option<f64>,
}

fn field_err(field: &str, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {e}"))
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

/// Reads and validates a TOML experiment config. Dataset paths are resolved
/// relative to the config file's directory.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config_str(&text, base)
}

/// Parses config text; relative dataset paths are joined onto `base_dir`.
pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<ExperimentConfig> {
    let raw: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    let dataset = match raw.dataset.ok_or_else(|| field_err("dataset", "missing section"))? {
        DatasetSection::Mnist {
            images,
            labels,
            test_images,
            test_labels,
            train_per_class,
            split_seed,
        } => {
            let test = match (test_images, test_labels) {
                (Some(i), Some(l)) => Some((resolve(base_dir, i), resolve(base_dir, l))),
                (None, None) => None,
                _ => {
                    return Err(field_err(
                        "dataset.test_images",
                        "test_images and test_labels must be given together",
                    ))
                }
            };
            if test.is_none() && train_per_class.is_none() {
                return Err(field_err(
                    "dataset.train_per_class",
                    "required when no test_images/test_labels are given",
                ));
            }
            DatasetConfig::Mnist {
                images: resolve(base_dir, images),
                labels: resolve(base_dir, labels),
                test,
                train_per_class,
                split_seed: split_seed.unwrap_or(0),
            }
        }
        DatasetSection::Blobs {
            classes,
            per_class,
            test_per_class,
            dim,
            spread,
            seed,
        } => {
            let cfg = DatasetConfig::Blobs {
                classes: classes.unwrap_or(3),
                per_class: per_class.unwrap_or(100),
                test_per_class: test_per_class.unwrap_or(50),
                dim: dim.unwrap_or(2),
                spread: spread.unwrap_or(0.3),
                seed: seed.unwrap_or(0),
            };
            if let DatasetConfig::Blobs {
                classes,
                per_class,
                test_per_class,
                dim,
                spread,
                ..
            } = &cfg
            {
                if *classes < 2 || *dim < 2 {
                    return Err(field_err("dataset", "blobs need classes >= 2 and dim >= 2"));
                }
                if *per_class == 0 || *test_per_class == 0 {
                    return Err(field_err("dataset.per_class", "per_class and test_per_class must be >= 1"));
                }
                if !(*spread >= 0.0 && spread.is_finite()) {
                    return Err(field_err("dataset.spread", "must be finite and >= 0"));
                }
            }
            cfg
        }
    };

    let loss_strings = raw.losses.ok_or_else(|| field_err("losses", "missing"))?;
    if loss_strings.is_empty() {
        return Err(field_err("losses", "at least one loss is required"));
    }
    let mut losses: Vec<Loss> = Vec::with_capacity(loss_strings.len());
    for s in &loss_strings {
        let loss: Loss = s.parse().map_err(|e| field_err("losses", e))?;
        if losses.contains(&loss) {
            return Err(field_err("losses", format!("`{loss}` listed twice")));
        }
        losses.push(loss);
    }

    let repeats = raw.repeats.unwrap_or(1);
    if repeats == 0 {
        return Err(field_err("repeats", "must be >= 1"));
    }

    let noise_section = raw.noise.unwrap_or_default();
    let noise: NoiseSpec = noise_section
        .spec
        .as_deref()
        .unwrap_or("none")
        .parse()
        .map_err(|e| field_err("noise.spec", e))?;
    noise
        .build(dataset.num_classes())
        .map_err(|e| field_err("noise.spec", e))?;
    let corruption: CorruptionMode = match noise_section.mode.as_deref() {
        Some(m) => m.parse().map_err(|e| field_err("noise.mode", e))?,
        None => CorruptionMode::default(),
    };

    let t = raw.train.unwrap_or_default();
    let d = TrainSettings::default();
    let train = TrainSettings {
        epochs: t.epochs.unwrap_or(d.epochs),
        batch_size: t.batch_size.unwrap_or(d.batch_size),
        lr0: t.lr0.unwrap_or(d.lr0),
        momentum: t.momentum.unwrap_or(d.momentum),
        weight_decay: t.weight_decay.unwrap_or(d.weight_decay),
        hidden: t.hidden.unwrap_or(d.hidden),
        shuffle: t.shuffle.unwrap_or(d.shuffle),
    };
    train
        .train_config(losses[0], 0)
        .validate()
        .map_err(|e| field_err("train", e))?;
    if train.hidden.contains(&0) {
        return Err(field_err("train.hidden", "layer widths must be >= 1"));
    }

    if let Some(f) = raw.validation_fraction {
        if !(f > 0.0 && f < 1.0) {
            return Err(field_err("validation_fraction", format!("{f} outside (0, 1)")));
        }
    }

    Ok(ExperimentConfig {
        seed: raw.seed.unwrap_or(0),
        repeats,
        output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("results")),
        losses,
        dataset,
        noise,
        corruption,
        train,
        validation_fraction: raw.validation_fraction,
    })
}

impl ExperimentConfig {
    /// Places a relative `output_dir` under `root`.
    pub fn with_output_root(mut self, root: &Path) -> Self {
        self.output_dir = resolve(root, self.output_dir);
        self
    }

    /// The config with every default made explicit, as TOML.
    pub fn to_toml(&self) -> String {
        let dataset = match &self.dataset {
            DatasetConfig::Mnist {
                images,
                labels,
                test,
                train_per_class,
                split_seed,
            } => DatasetSection::Mnist {
                images: images.clone(),
                labels: labels.clone(),
                test_images: test.as_ref().map(|t| t.0.clone()),
                test_labels: test.as_ref().map(|t| t.1.clone()),
                train_per_class: *train_per_class,
                split_seed: Some(*split_seed),
            },
            DatasetConfig::Blobs {
                classes,
                per_class,
                test_per_class,
                dim,
                spread,
                seed,
            } => DatasetSection::Blobs {
                classes: Some(*classes),
                per_class: Some(*per_class),
                test_per_class: Some(*test_per_class),
                dim: Some(*dim),
                spread: Some(*spread),
                seed: Some(*seed),
            },
        };
        let file = ConfigFile {
            seed: Some(self.seed),
            repeats: Some(self.repeats),
            output_dir: Some(self.output_dir.clone()),
            losses: Some(self.losses.iter().map(|l| l.to_string()).collect()),
            validation_fraction: self.validation_fraction,
            dataset: Some(dataset),
            noise: Some(NoiseSection {
                spec: Some(self.noise.to_string()),
                mode: Some(self.corruption.to_string()),
            }),
            train: Some(TrainSection {
                epochs: Some(self.train.epochs),
                batch_size: Some(self.train.batch_size),
                lr0: Some(self.train.lr0),
                momentum: Some(self.train.momentum),
                weight_decay: Some(self.train.weight_decay),
                hidden: Some(self.train.hidden.clone()),
                shuffle: Some(self.train.shuffle),
            }),
        };
        toml::to_string(&file).expect("config serializes")
    }

    pub fn run_seed(&self, repeat: usize) -> u64 {
        self.seed.wrapping_add(repeat as u64)
    }
}

/// File-name-safe rendering of a loss spec.
pub fn loss_file_tag(loss: &Loss) -> String {
    loss.to_string()
        .chars()
        .filter(|&c| c != '=')
        .map(|c| match c {
            ':' | ',' => '-',
            c if c.is_ascii_alphanumeric() || c == '.' || c == '+' || c == '-' => c,
            _ => '_',
        })
        .collect()
}

pub fn history_file_name(loss: &Loss, noise: &NoiseSpec, repeat: usize) -> String {
    format!("{}_{}_{repeat}.csv", loss_file_tag(loss), noise.tag())
}

/// One loss aggregated over repeats. Accuracies are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub loss: String,
    pub noise: String,
    pub eta: f64,
    pub repeats: usize,
    pub final_acc_mean: f64,
    pub final_acc_std: f64,
    /// Mean over repeats of the best epoch's test accuracy.
    pub best_acc_mean: f64,
    /// `best_acc_mean - final_acc_mean`.
    pub robustness_gap: f64,
    /// Mean accuracy on the noisy validation hold-out, when one is used.
    pub val_acc_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub loss: Loss,
    pub repeat: usize,
    pub history: TrainingHistory,
    pub val_acc: Option<f64>,
    pub history_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub rows: Vec<SummaryRow>,
    /// Runs in config order: loss-major, then repeat.
    pub runs: Vec<RunResult>,
}

/// `(mean, population std)` by the two-pass formula.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn summarize(loss: &Loss, noise: &NoiseSpec, runs: &[&RunResult]) -> SummaryRow {
    let finals: Vec<f64> = runs
        .iter()
        .map(|r| r.history.final_test_acc().expect("at least one epoch"))
        .collect();
    let bests: Vec<f64> = runs
        .iter()
        .map(|r| r.history.best_test_acc().expect("at least one epoch"))
        .collect();
    let (final_mean, final_std) = mean_std(&finals);
    let (best_mean, _) = mean_std(&bests);
    let vals: Option<Vec<f64>> = runs.iter().map(|r| r.val_acc).collect();
    SummaryRow {
        loss: loss.to_string(),
        noise: noise.kind_name().to_string(),
        eta: noise.eta(),
        repeats: runs.len(),
        final_acc_mean: final_mean,
        final_acc_std: final_std,
        best_acc_mean: best_mean,
        robustness_gap: (best_mean - final_mean).max(0.0),
        val_acc_mean: vals.map(|v| mean_std(&v).0),
    }
}

/// Corrupted training data for one repeat.
struct RepeatData {
    train: Dataset,
    validation: Option<Dataset>,
}

struct Prepared {
    test: Dataset,
    repeats: Vec<RepeatData>,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn prepare(config: &ExperimentConfig, validation_fraction: Option<f64>) -> Result<Prepared> {
    let (train_set, test) = config.dataset.load()?;
    let model = config.noise.build(train_set.num_classes)?;
    let mut repeats = Vec::with_capacity(config.repeats);
    for r in 0..config.repeats {
        let seed = config.run_seed(r);
        let record = corrupt(&train_set.labels, &model, seed, config.corruption)?;
        record.save_csv(&config.output_dir.join(format!("noise_{}_{r}.csv", config.noise.tag())))?;
        let noisy = train_set.with_labels(record.noisy_labels)?;
        let (train, validation) = match validation_fraction {
            Some(f) => {
                let (kept, held) = holdout_fraction(&noisy, f, seed)?;
                (kept, Some(held))
            }
            None => (noisy, None),
        };
        repeats.push(RepeatData { train, validation });
    }
    Ok(Prepared { test, repeats })
}

fn run_one(
    config: &ExperimentConfig,
    prepared: &Prepared,
    loss: &Loss,
    repeat: usize,
) -> Result<RunResult> {
    let data = &prepared.repeats[repeat];
    let seed = config.run_seed(repeat);
    let mut sizes = vec![data.train.dim()];
    sizes.extend(&config.train.hidden);
    sizes.push(data.train.num_classes);
    let mut model = MlpModel::init(&sizes, seed)?;
    let history = train(
        &mut model,
        &data.train,
        &prepared.test,
        &config.train.train_config(*loss, seed),
    )?;
    let val_acc = match &data.validation {
        Some(v) => Some(evaluate_accuracy(&model, v)?),
        None => None,
    };
    let path = config
        .output_dir
        .join(history_file_name(loss, &config.noise, repeat));
    let mut buf = Vec::new();
    history.write_csv(&mut buf).expect("writing to memory");
    fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
    Ok(RunResult {
        loss: *loss,
        repeat,
        history,
        val_acc,
        history_path: path,
    })
}

fn execute(config: &ExperimentConfig, prepared: &Prepared, losses: &[Loss]) -> Result<Vec<RunResult>> {
    let jobs: Vec<(&Loss, usize)> = losses
        .iter()
        .flat_map(|l| (0..config.repeats).map(move |r| (l, r)))
        .collect();
    // collect() keeps job order regardless of scheduling
    jobs.par_iter()
        .map(|&(loss, r)| {
            run_one(config, prepared, loss, r)
                .map_err(|e| e.context(format!("run `{loss}` repeat {r}")))
        })
        .collect()
}

fn summarize_all(config: &ExperimentConfig, losses: &[Loss], runs: &[RunResult]) -> Vec<SummaryRow> {
    losses
        .iter()
        .map(|loss| {
            let mine: Vec<&RunResult> = runs.iter().filter(|r| &r.loss == loss).collect();
            summarize(loss, &config.noise, &mine)
        })
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_resolved(config: &ExperimentConfig) -> Result<()> {
    let path = config.output_dir.join(RESOLVED_CONFIG_FILE);
    fs::write(&path, config.to_toml()).map_err(|e| Error::io(&path, e))
}

/// Trains every (loss, repeat) pair and writes histories plus `summary.csv`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    create_dir(&config.output_dir)?;
    write_resolved(config)?;
    let prepared = prepare(config, config.validation_fraction)?;
    let runs = execute(config, &prepared, &config.losses)?;
    let rows = summarize_all(config, &config.losses, &runs);
    write_rows(&config.output_dir.join(SUMMARY_FILE), &rows)?;
    Ok(ExperimentResult { rows, runs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub alpha: f64,
    pub beta: f64,
    pub summary: SummaryRow,
    /// Highest mean validation accuracy (first pair on ties).
    pub best: bool,
}

/// `grid.csv` record: the weights, the summary columns, then the flag.
#[derive(Serialize)]
struct GridRecord<'a> {
    alpha: f64,
    beta: f64,
    loss: &'a str,
    noise: &'a str,
    eta: f64,
    repeats: usize,
    final_acc_mean: f64,
    final_acc_std: f64,
    best_acc_mean: f64,
    robustness_gap: f64,
    val_acc_mean: Option<f64>,
    best: bool,
}

impl<'a> From<&'a GridRow> for GridRecord<'a> {
    fn from(r: &'a GridRow) -> Self {
        let s = &r.summary;
        GridRecord {
            alpha: r.alpha,
            beta: r.beta,
            loss: &s.loss,
            noise: &s.noise,
            eta: s.eta,
            repeats: s.repeats,
            final_acc_mean: s.final_acc_mean,
            final_acc_std: s.final_acc_std,
            best_acc_mean: s.best_acc_mean,
            robustness_gap: s.robustness_gap,
            val_acc_mean: s.val_acc_mean,
            best: r.best,
        }
    }
}

fn grid_base(config: &ExperimentConfig) -> Result<AplSpec> {
    match config.losses.as_slice() {
        [Loss::Combined(apl)] => Ok(*apl),
        [other] => Err(Error::Config(format!(
            "losses: the grid needs an APL loss, got `{other}`"
        ))),
        _ => Err(Error::Config(
            "losses: the grid needs exactly one APL loss".into(),
        )),
    }
}

/// Sweeps the APL weights, selecting on a noisy validation hold-out
/// (`validation_fraction`, default 0.2) of the training set.
pub fn alpha_beta_grid(config: &ExperimentConfig, alphas: &[f64], betas: &[f64]) -> Result<Vec<GridRow>> {
    let base = grid_base(config)?;
    if alphas.is_empty() || betas.is_empty() {
        return Err(Error::Config("alpha and beta sets must be nonempty".into()));
    }
    let mut losses = Vec::with_capacity(alphas.len() * betas.len());
    let mut pairs = Vec::with_capacity(losses.capacity());
    for &a in alphas {
        for &b in betas {
            let apl = if base.is_constrained() {
                AplSpec::new(base.active, base.passive, a, b)?
            } else {
                AplSpec::unconstrained(base.active, base.passive, a, b)?
            };
            let loss = Loss::Combined(apl);
            if losses.contains(&loss) {
                return Err(Error::Config(format!("duplicate grid point alpha={a}, beta={b}")));
            }
            losses.push(loss);
            pairs.push((a, b));
        }
    }
    let fraction = config.validation_fraction.unwrap_or(DEFAULT_VALIDATION_FRACTION);
    create_dir(&config.output_dir)?;
    let resolved = ExperimentConfig {
        validation_fraction: Some(fraction),
        ..config.clone()
    };
    write_resolved(&resolved)?;
    let prepared = prepare(&resolved, Some(fraction))?;
    let runs = execute(&resolved, &prepared, &losses)?;
    let summaries = summarize_all(&resolved, &losses, &runs);

    let mut best = 0;
    for (i, s) in summaries.iter().enumerate() {
        if s.val_acc_mean > summaries[best].val_acc_mean {
            best = i;
        }
    }
    let rows: Vec<GridRow> = pairs
        .into_iter()
        .zip(summaries)
        .enumerate()
        .map(|(i, ((alpha, beta), summary))| GridRow {
            alpha,
            beta,
            summary,
            best: i == best,
        })
        .collect();
    let records: Vec<GridRecord> = rows.iter().map(GridRecord::from).collect();
    write_rows(&config.output_dir.join(GRID_FILE), &records)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossSpec;

    const MINIMAL: &str = r#"
        losses = ["ce"]
        [dataset]
        kind = "blobs"
    "#;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        parse_config_str(text, Path::new("/cfg"))
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.repeats, 1);
        assert_eq!(c.losses, vec![Loss::from(LossSpec::ce())]);
        assert_eq!(c.train, TrainSettings::default());
        assert_eq!(c.noise.eta(), 0.0);
        assert_eq!(c.corruption, CorruptionMode::ExactFraction);
        assert_eq!(c.validation_fraction, None);
    }

    #[test]
    fn loss_defaults_are_filled() {
        let c = parse(
            r#"
            losses = ["nfl", "rce", "ngce", "apl:nce+mae"]
            [dataset]
            kind = "blobs"
        "#,
        )
        .unwrap();
        let names: Vec<String> = c.losses.iter().map(|l| l.to_string()).collect();
        assert_eq!(
            names,
            ["nfl:gamma=0.5", "rce:A=-4", "ngce:rho=0.7", "apl:nce+mae:alpha=1,beta=1"]
        );
    }

    #[test]
    fn apl_weights_parse() {
        let c = parse(
            r#"
            losses = ["apl:nce+rce:alpha=10,beta=0.1"]
            [dataset]
            kind = "blobs"
        "#,
        )
        .unwrap();
        let Loss::Combined(apl) = &c.losses[0] else {
            panic!("expected APL");
        };
        assert_eq!((apl.alpha, apl.beta), (10.0, 0.1));
        assert_eq!(apl.active, LossSpec::ce().normalized());
        assert_eq!(apl.passive, LossSpec::rce(-4.0).unwrap());
    }

    #[test]
    fn symmetric_bound_needs_override() {
        let base = r#"
            losses = ["ce"]
            [dataset]
            kind = "blobs"
            classes = 10
            [noise]
        "#;
        let err = parse(&format!("{base}spec = \"sym:0.9\"")).unwrap_err();
        assert!(err.to_string().contains("noise.spec"), "{err}");
        assert!(parse(&format!("{base}spec = \"sym:0.9:override\"")).is_ok());
    }

    #[test]
    fn errors_name_the_field() {
        let unknown = parse("losses = [\"ce\"]\nbogus = 1\n[dataset]\nkind = \"blobs\"").unwrap_err();
        assert!(unknown.to_string().contains("bogus"), "{unknown}");
        let nested = parse("losses = [\"ce\"]\n[dataset]\nkind = \"blobs\"\n[train]\nepoch = 3").unwrap_err();
        assert!(nested.to_string().contains("epoch"), "{nested}");
        let bad_loss = parse("losses = [\"xent\"]\n[dataset]\nkind = \"blobs\"").unwrap_err();
        assert!(bad_loss.to_string().contains("losses"), "{bad_loss}");
        let missing = parse("losses = [\"ce\"]").unwrap_err();
        assert!(missing.to_string().contains("dataset"), "{missing}");
        let zero = parse("repeats = 0\nlosses = [\"ce\"]\n[dataset]\nkind = \"blobs\"").unwrap_err();
        assert!(zero.to_string().contains("repeats"), "{zero}");
        for e in [unknown, nested, bad_loss, missing, zero] {
            assert_eq!(e.kind(), "config");
        }
    }

    #[test]
    fn mnist_paths_resolve_against_config_dir() {
        let c = parse(
            r#"
            losses = ["ce"]
            [dataset]
            kind = "mnist"
            images = "img.gz"
            labels = "/abs/lab.gz"
            train_per_class = 5
        "#,
        )
        .unwrap();
        let DatasetConfig::Mnist { images, labels, .. } = &c.dataset else {
            panic!("expected mnist");
        };
        assert_eq!(images, Path::new("/cfg/img.gz"));
        assert_eq!(labels, Path::new("/abs/lab.gz"));
        assert!(parse("losses = [\"ce\"]\n[dataset]\nkind = \"mnist\"\nimages = \"a\"\nlabels = \"b\"").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = parse(
            r#"
            seed = 7
            repeats = 2
            losses = ["nfl:gamma=2", "apl:nce+rce:alpha=1,beta=100"]
            [dataset]
            kind = "blobs"
            classes = 4
            [noise]
            spec = "pair:0.3:map=0>1,1>0"
            mode = "bernoulli"
        "#,
        )
        .unwrap();
        let again = parse(&c.to_toml()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn file_tags_are_safe() {
        let l: Loss = "apl:nce+rce:alpha=1,beta=100".parse().unwrap();
        assert_eq!(loss_file_tag(&l), "apl-nce+rce-A-4-alpha1-beta100");
        let noise: NoiseSpec = "sym:0.6".parse().unwrap();
        assert_eq!(history_file_name(&LossSpec::ce().into(), &noise, 2), "ce_sym0.6_2.csv");
    }

    #[test]
    fn population_std_two_pass() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert_eq!(s, 2.0);
        assert_eq!(mean_std(&[0.3]).1, 0.0);
    }

    #[test]
    fn grid_rejects_non_apl() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(alpha_beta_grid(&c, &[1.0], &[1.0]).unwrap_err().kind(), "config");
    }
}
