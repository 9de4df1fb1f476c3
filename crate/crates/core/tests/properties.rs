use normloss::gradients::grad_logits;
use normloss::noise::{corrupt, CorruptionMode, NoiseModel, CIFAR10_PAIRS};
use normloss::numerics::{softmax, SIMPLEX_TOL};
use normloss::theory::constant_sum;
use normloss::{AplSpec, LogitVector, Loss, LossSpec, ProbVector};
use proptest::prelude::*;

fn logits(max_k: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, 2..=max_k)
}

fn prob_and_label(max_k: usize) -> impl Strategy<Value = (ProbVector, usize)> {
    prop::collection::vec(0.0f64..1.0, 2..=max_k).prop_flat_map(|w| {
        let k = w.len();
        let weights: Vec<f64> = w.iter().map(|v| v + 1e-3).collect();
        (Just(ProbVector::from_weights(&weights).unwrap()), 0..k)
    })
}

fn any_spec() -> impl Strategy<Value = LossSpec> {
    (0usize..10).prop_map(|i| LossSpec::all_default()[i])
}

proptest! {
    #[test]
    fn softmax_is_on_the_simplex(z in logits(12, 1e3)) {
        let p = softmax(&LogitVector::new(z).unwrap());
        let sum: f64 = p.as_slice().iter().sum();
        prop_assert!((sum - 1.0).abs() <= SIMPLEX_TOL);
        prop_assert!(p.as_slice().iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn softmax_ignores_constant_shifts(z in logits(8, 20.0), c in -50.0f64..50.0) {
        let p = softmax(&LogitVector::new(z.clone()).unwrap());
        let q = softmax(&LogitVector::new(z.iter().map(|v| v + c).collect()).unwrap());
        for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn normalized_losses_sum_to_one((p, _y) in prob_and_label(20), spec in any_spec()) {
        let loss = Loss::from(spec.normalized());
        prop_assert!((constant_sum(&loss, &p).unwrap() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn normalized_values_lie_in_unit_interval((p, y) in prob_and_label(20), spec in any_spec()) {
        let v = spec.normalized().eval(&p, y).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
    }

    #[test]
    fn decomposition_reassembles_the_loss((p, y) in prob_and_label(10), spec in any_spec()) {
        let d = spec.decompose(&p, y).unwrap();
        prop_assert!((d.total() - spec.eval(&p, y).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn logit_gradients_sum_to_zero(z in logits(10, 6.0), y_seed in 0usize..100, spec in any_spec()) {
        let y = y_seed % z.len();
        let g = grad_logits(&spec.into(), &LogitVector::new(z).unwrap(), y).unwrap();
        let scale = g.iter().map(|v| v.abs()).fold(1.0, f64::max);
        prop_assert!(g.iter().sum::<f64>().abs() <= 1e-12 * scale);
    }

    #[test]
    fn apl_is_linear_in_its_terms(
        (p, y) in prob_and_label(10),
        alpha in 0.01f64..100.0,
        beta in 0.01f64..100.0,
    ) {
        let active = LossSpec::ce().normalized();
        let passive = LossSpec::mae();
        let apl = AplSpec::new(active, passive, alpha, beta).unwrap();
        let expected = alpha * active.eval(&p, y).unwrap() + beta * passive.eval(&p, y).unwrap();
        prop_assert!((apl.eval(&p, y).unwrap() - expected).abs() <= 1e-12 * expected.max(1.0));
    }

    #[test]
    fn noise_matrices_are_row_stochastic(k in 2usize..30, eta in 0.0f64..0.5) {
        let mut models = vec![NoiseModel::symmetric(k, eta, false).unwrap()];
        if k >= 10 {
            models.push(NoiseModel::pairwise(k, &CIFAR10_PAIRS, eta).unwrap());
        }
        for m in models {
            prop_assert!(m.max_row_error() <= 1e-12);
            prop_assert!(m.transition().iter().flatten().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn corruption_records_are_consistent(
        labels in prop::collection::vec(0usize..5, 1..200),
        eta in 0.0f64..0.8,
        seed in any::<u64>(),
        bernoulli in any::<bool>(),
    ) {
        let model = NoiseModel::symmetric(5, eta, false).unwrap();
        let mode = if bernoulli { CorruptionMode::Bernoulli } else { CorruptionMode::ExactFraction };
        let rec = corrupt(&labels, &model, seed, mode).unwrap();
        prop_assert_eq!(&rec.clean_labels, &labels);
        prop_assert_eq!(rec.noisy_labels.len(), labels.len());
        for i in 0..labels.len() {
            prop_assert_eq!(rec.flipped_mask[i], rec.noisy_labels[i] != labels[i]);
        }
        let flipped = rec.flipped_mask.iter().filter(|&&f| f).count();
        prop_assert!((rec.realized_rate - flipped as f64 / labels.len() as f64).abs() <= 1e-15);
        prop_assert_eq!(rec, corrupt(&labels, &model, seed, mode).unwrap());
    }
}
