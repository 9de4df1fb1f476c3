//! Browser bindings for three interactive views: loss curves over the
//! labelled-class probability, label-noise corruption with the
//! symmetric-noise risk identity, and a small noisy-label training run.
//!
//! Every export takes plain values and returns a JSON string; failures come
//! back as `{"error": "..."}`.

use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

use normloss::datasets::{gen_blobs, split_stratified};
use normloss::gradients::grad_logits_from_probs;
use normloss::network::{train, MlpModel, TrainConfig};
use normloss::noise::{corrupt, CorruptionMode, NoiseSpec};
use normloss::numerics::PROB_FLOOR;
use normloss::theory::symmetric_risk_report;
use normloss::{Loss, ProbVector, Result, Rng};

fn respond<T: Serialize>(r: Result<T>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| json!({ "error": e.to_string() }).to_string()),
        Err(e) => json!({ "error": e.to_string(), "kind": e.kind() }).to_string(),
    }
}

fn parse_losses(specs: &str) -> Result<Vec<Loss>> {
    specs
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

/// `p_y` on the x axis with the remaining mass spread evenly.
fn spread_prediction(k: usize, py: f64) -> Result<ProbVector> {
    let rest = (1.0 - py) / (k - 1) as f64;
    let mut w = vec![rest; k];
    w[0] = py;
    ProbVector::from_weights(&w)
}

#[derive(Serialize)]
struct Series {
    loss: String,
    value: Vec<f64>,
    /// `|dL/dz_y|`: how hard the loss pushes the labelled logit.
    grad: Vec<f64>,
    label_sum: Vec<f64>,
}

#[derive(Serialize)]
struct Curves {
    p: Vec<f64>,
    series: Vec<Series>,
}

/// Loss value, labelled-logit gradient and `sum_j L(p, j)` as `p_y` sweeps
/// `(0, 1)`, for `;`-separated loss specs.
#[wasm_bindgen]
pub fn loss_curves(specs: &str, k: usize, points: usize) -> String {
    respond((|| {
        if k < 2 {
            return Err(normloss::Error::InvalidInput("K must be >= 2".into()));
        }
        let points = points.clamp(2, 2000);
        let lo = 10.0 * PROB_FLOOR;
        let p: Vec<f64> = (0..points)
            .map(|i| lo + (1.0 - 2.0 * lo) * i as f64 / (points - 1) as f64)
            .collect();
        let mut series = Vec::new();
        for loss in parse_losses(specs)? {
            let mut value = Vec::with_capacity(points);
            let mut grad = Vec::with_capacity(points);
            let mut label_sum = Vec::with_capacity(points);
            for &py in &p {
                let pv = spread_prediction(k, py)?;
                value.push(loss.eval(&pv, 0)?);
                grad.push(grad_logits_from_probs(&loss, &pv, 0)?[0].abs());
                label_sum.push(loss.per_label(&pv)?.iter().sum());
            }
            series.push(Series {
                loss: loss.to_string(),
                value,
                grad,
                label_sum,
            });
        }
        Ok(Curves { p, series })
    })())
}

#[derive(Serialize)]
struct RiskRow {
    loss: String,
    clean: f64,
    noisy: f64,
    predicted: f64,
    residual: f64,
}

#[derive(Serialize)]
struct NoiseView {
    noise: String,
    transition: Vec<Vec<f64>>,
    empirical: Vec<Vec<f64>>,
    realized_rate: f64,
    risks: Vec<RiskRow>,
}

/// Corrupts a balanced label set of `n` (`mode` is `exact` or `bernoulli`)
/// and reports the true and empirical transition matrices. Under symmetric
/// noise it also compares enumerated noisy risk against
/// `R (1 - eta K / (K-1)) + eta / (K-1)` on random predictions.
#[wasm_bindgen]
pub fn noise_demo(noise: &str, k: usize, n: usize, mode: &str, losses: &str, seed: u32) -> String {
    respond((|| {
        let spec: NoiseSpec = noise.parse()?;
        let model = spec.build(k)?;
        let mode: CorruptionMode = mode.parse()?;
        let labels: Vec<usize> = (0..n.max(k)).map(|i| i % k).collect();
        let rec = corrupt(&labels, &model, seed as u64, mode)?;
        let mut risks = Vec::new();
        if let NoiseSpec::Symmetric { eta, .. } = spec {
            let mut rng = Rng::new(seed as u64 ^ 0x5eed);
            let probs: Vec<ProbVector> = (0..50)
                .map(|_| ProbVector::from_weights(&rng.simplex_point(k)))
                .collect::<Result<_>>()?;
            let ys: Vec<usize> = (0..50).map(|_| rng.below(k)).collect();
            for loss in parse_losses(losses)? {
                let r = symmetric_risk_report(&probs, &ys, &loss, eta)?;
                risks.push(RiskRow {
                    loss: loss.to_string(),
                    clean: r.clean_risk,
                    noisy: r.noisy_risk_enumerated,
                    predicted: r.noisy_risk_predicted,
                    residual: r.residual,
                });
            }
        }
        Ok(NoiseView {
            noise: spec.to_string(),
            transition: model.transition().to_vec(),
            empirical: rec.empirical_transition(k),
            realized_rate: rec.realized_rate,
            risks,
        })
    })())
}

#[derive(Serialize)]
struct TrainCurve {
    loss: String,
    train_acc: Vec<f64>,
    test_acc: Vec<f64>,
}

/// Trains a 2-32-K MLP on Gaussian blobs with symmetric label noise `eta`,
/// once per `;`-separated loss, on identical corrupted labels.
#[wasm_bindgen]
pub fn train_blobs(losses: &str, k: usize, eta: f64, epochs: usize, seed: u32) -> String {
    respond((|| {
        let seed = seed as u64;
        let all = gen_blobs(k, 150, 2, 0.45, seed)?;
        let (train_set, test_set) = split_stratified(&all, 100, seed)?;
        let test_set = test_set.expect("50 test samples per class");
        let model = NoiseSpec::Symmetric {
            eta,
            allow_over_bound: false,
        }
        .build(k)?;
        let rec = corrupt(&train_set.labels, &model, seed, CorruptionMode::ExactFraction)?;
        let noisy = train_set.with_labels(rec.noisy_labels)?;
        let mut curves = Vec::new();
        for loss in parse_losses(losses)? {
            let mut net = MlpModel::init(&[2, 32, k], seed)?;
            let cfg = TrainConfig {
                epochs: epochs.clamp(1, 500),
                batch_size: 32,
                lr0: 0.05,
                weight_decay: 0.0,
                seed,
                ..TrainConfig::new(loss)
            };
            let h = train(&mut net, &noisy, &test_set, &cfg)?;
            curves.push(TrainCurve {
                loss: loss.to_string(),
                train_acc: h.records.iter().map(|r| r.train_acc).collect(),
                test_acc: h.records.iter().map(|r| r.test_acc).collect(),
            });
        }
        Ok(curves)
    })())
}
