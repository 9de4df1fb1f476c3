//! A fully-connected ReLU classifier trained with momentum SGD and cosine
//! learning-rate annealing.
//!
//! Weights are stored `(fan_in, fan_out)` so a batch forward pass is
//! `X W + b` with one sample per row.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::gradients::{central_difference, grad_logits_from_probs, relative_error};
use crate::losses::Loss;
use crate::numerics::{argmax, softmax, LogitVector, Rng};

const SHUFFLE_STREAM: u64 = 1;
const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Per-parameter gradients (or momentum buffers), shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: model.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    /// Parameters in layer order, each layer's weights (row-major) then biases.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least input and output widths, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Config(format!("zero-width layer in {layer_sizes:?}")));
        }
        let mut rng = Rng::new(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.uniform_range(-limit, limit));
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers")
    }

    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// Parameter by flat index, in [`ParamGrads::flat`] order.
    pub fn param(&self, mut idx: usize) -> f64 {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if idx < w.len() {
                return w.as_slice().expect("standard layout")[idx];
            }
            idx -= w.len();
            if idx < b.len() {
                return b[idx];
            }
            idx -= b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, value: f64) {
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            if idx < w.len() {
                w.as_slice_mut().expect("standard layout")[idx] = value;
                return;
            }
            idx -= w.len();
            if idx < b.len() {
                b[idx] = value;
                return;
            }
            idx -= b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn check_width(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_width() {
            return Err(Error::InvalidInput(format!(
                "feature width {} does not match model input {}",
                x.ncols(),
                self.input_width()
            )));
        }
        Ok(())
    }

    /// Logits, one row per sample.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(&x)?;
        let last = self.weights.len() - 1;
        let mut h = x.dot(&self.weights[0]) + &self.biases[0];
        for l in 1..=last {
            h.mapv_inplace(|v| v.max(0.0));
            h = h.dot(&self.weights[l]) + &self.biases[l];
        }
        Ok(h)
    }

    /// Forward pass keeping every layer's pre-activation.
    fn forward_cached(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut h = x.dot(&self.weights[0]) + &self.biases[0];
        for l in 1..self.weights.len() {
            let a = h.mapv(|v| v.max(0.0));
            pre.push(h);
            h = a.dot(&self.weights[l]) + &self.biases[l];
        }
        pre.push(h);
        pre
    }
}

fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::InvalidInput(format!("{n} samples but {} labels", labels.len())));
    }
    if let Some(y) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidInput(format!("label {y} out of range for {k} classes")));
    }
    Ok(())
}

/// Loss and gradient statistics for one batch.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub grads: ParamGrads,
    pub mean_loss: f64,
    /// Samples whose argmax logit equals the given label.
    pub correct: usize,
}

/// Mean-over-batch loss gradient by backpropagation.
pub fn backward(model: &MlpModel, x: ArrayView2<f64>, labels: &[usize], loss: &Loss) -> Result<BatchResult> {
    model.check_width(&x)?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    check_labels(labels, n, model.num_classes())?;
    let pre = model.forward_cached(x);
    let logits = pre.last().expect("output layer");

    let mut delta = Array2::<f64>::zeros(logits.raw_dim());
    let mut total_loss = 0.0;
    let mut correct = 0;
    let scale = 1.0 / n as f64;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let z = LogitVector::new(row.to_vec())?;
        let p = softmax(&z);
        total_loss += loss.eval(&p, y)?;
        if argmax(row.as_slice().expect("contiguous row")) == y {
            correct += 1;
        }
        let g = grad_logits_from_probs(loss, &p, y)?;
        for (slot, gk) in delta.row_mut(i).iter_mut().zip(g) {
            *slot = gk * scale;
        }
    }

    let layers = model.weights.len();
    let mut gw = vec![Array2::zeros((0, 0)); layers];
    let mut gb = vec![Array1::zeros(0); layers];
    for l in (0..layers).rev() {
        let input = if l == 0 {
            x.to_owned()
        } else {
            pre[l - 1].mapv(|v| v.max(0.0))
        };
        gw[l] = input.t().dot(&delta);
        gb[l] = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut back = delta.dot(&model.weights[l].t());
            Zip::from(&mut back).and(&pre[l - 1]).for_each(|d, &h| {
                if h <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = back;
        }
    }
    Ok(BatchResult {
        grads: ParamGrads {
            weights: gw,
            biases: gb,
        },
        mean_loss: total_loss * scale,
        correct,
    })
}

/// Mean loss over a batch.
pub fn batch_loss(model: &MlpModel, x: ArrayView2<f64>, labels: &[usize], loss: &Loss) -> Result<f64> {
    let logits = model.forward(x)?;
    check_labels(labels, x.nrows(), model.num_classes())?;
    let mut total = 0.0;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        let z = LogitVector::new(row.to_vec())?;
        total += loss.eval(&softmax(&z), y)?;
    }
    Ok(total / labels.len() as f64)
}

/// Largest relative error between backprop and central differences taken
/// directly in parameter space, over every weight and bias.
pub fn check_backprop(
    model: &MlpModel,
    x: ArrayView2<f64>,
    labels: &[usize],
    loss: &Loss,
    h: f64,
) -> Result<f64> {
    let analytic = backward(model, x, labels, loss)?.grads.flat();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let num = central_difference(
            |v| {
                probe.set_param(i, v[0]);
                batch_loss(&probe, x, labels, loss)
            },
            &[model.param(i)],
            h,
        )?[0];
        probe.set_param(i, model.param(i));
        worst = worst.max(relative_error(*a, num));
    }
    Ok(worst)
}

/// `lr0 * (1 + cos(pi * epoch / total)) / 2`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64) -> Result<f64> {
    if epoch >= total_epochs {
        return Err(Error::Config(format!(
            "epoch {epoch} outside [0, {total_epochs})"
        )));
    }
    let t = epoch as f64 / total_epochs as f64;
    Ok(lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

/// Momentum SGD with coupled weight decay:
/// `v = momentum * v + (g + wd * w)`, `w = w - lr * v`.
pub fn sgd_step(
    model: &mut MlpModel,
    grads: &ParamGrads,
    velocity: &mut ParamGrads,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    let shapes_match = model.weights.len() == grads.weights.len()
        && model.weights.len() == velocity.weights.len()
        && model
            .weights
            .iter()
            .zip(&grads.weights)
            .zip(&velocity.weights)
            .all(|((w, g), v)| w.dim() == g.dim() && w.dim() == v.dim())
        && model
            .biases
            .iter()
            .zip(&grads.biases)
            .zip(&velocity.biases)
            .all(|((b, g), v)| b.dim() == g.dim() && b.dim() == v.dim());
    if !shapes_match {
        return Err(Error::InvalidInput("gradient shapes do not match the model".into()));
    }
    for ((w, g), v) in model
        .weights
        .iter_mut()
        .zip(&grads.weights)
        .zip(velocity.weights.iter_mut())
    {
        Zip::from(w).and(g).and(v).for_each(|w, &g, v| {
            *v = momentum * *v + (g + weight_decay * *w);
            *w -= lr * *v;
        });
    }
    for ((b, g), v) in model
        .biases
        .iter_mut()
        .zip(&grads.biases)
        .zip(velocity.biases.iter_mut())
    {
        Zip::from(b).and(g).and(v).for_each(|b, &g, v| {
            *v = momentum * *v + (g + weight_decay * *b);
            *b -= lr * *v;
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub loss: Loss,
    pub seed: u64,
    pub shuffle: bool,
}

impl TrainConfig {
    pub fn new(loss: Loss) -> Self {
        Self {
            epochs: 25,
            batch_size: 128,
            lr0: 0.01,
            momentum: 0.9,
            weight_decay: 1e-3,
            loss,
            seed: 0,
            shuffle: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        // lr0 = 0 is allowed: it freezes the model, which tests rely on
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be >= 0, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean loss over the epoch's mini-batches, against the training labels.
    pub train_loss: f64,
    /// Running accuracy over the epoch's mini-batches, against the training
    /// labels.
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn final_test_acc(&self) -> Option<f64> {
        self.records.last().map(|r| r.test_acc)
    }

    pub fn best_test_acc(&self) -> Option<f64> {
        self.records.iter().map(|r| r.test_acc).reduce(f64::max)
    }

    pub fn write_csv(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "epoch,lr,train_loss,train_acc,test_acc")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{:e},{:.10},{:.6},{:.6}",
                r.epoch, r.lr, r.train_loss, r.train_acc, r.test_acc
            )?;
        }
        Ok(())
    }
}

/// Fraction of samples whose argmax logit matches the dataset label; ties
/// go to the lowest class index.
pub fn evaluate_accuracy(model: &MlpModel, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let mut correct = 0usize;
    let n = dataset.len();
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let logits = model.forward(dataset.features.slice(s![start..end, ..]))?;
        for (row, &y) in logits.rows().into_iter().zip(&dataset.labels[start..end]) {
            if argmax(row.as_slice().expect("contiguous row")) == y {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(correct as f64 / n as f64)
}

/// Mini-batch SGD over `train`, evaluating on `test` after every epoch.
pub fn train(
    model: &mut MlpModel,
    train_set: &Dataset,
    test_set: &Dataset,
    config: &TrainConfig,
) -> Result<TrainingHistory> {
    config.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::Config("training and test sets must be nonempty".into()));
    }
    if train_set.num_classes != test_set.num_classes || train_set.num_classes != model.num_classes() {
        return Err(Error::Config(format!(
            "class counts disagree: train {}, test {}, model {}",
            train_set.num_classes,
            test_set.num_classes,
            model.num_classes()
        )));
    }
    let n = train_set.len();
    let mut velocity = ParamGrads::zeros_like(model);
    let mut history = TrainingHistory::default();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        let lr = cosine_lr(epoch, config.epochs, config.lr0)?;
        order.sort_unstable();
        if config.shuffle {
            Rng::new(config.seed ^ epoch as u64)
                .derive(SHUFFLE_STREAM)
                .shuffle(&mut order);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let x = train_set.features.select(Axis(0), chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let batch = backward(model, x.view(), &labels, &config.loss)?;
            loss_sum += batch.mean_loss * chunk.len() as f64;
            correct += batch.correct;
            sgd_step(
                model,
                &batch.grads,
                &mut velocity,
                lr,
                config.momentum,
                config.weight_decay,
            )?;
            if !model.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "weights became non-finite in epoch {epoch}"
                )));
            }
        }
        history.records.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            test_acc: evaluate_accuracy(model, test_set)?,
        });
    }
    Ok(history)
}
