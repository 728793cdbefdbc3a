use bitcover::nn::{
    cross_entropy, evaluate_loss, train, Model, ModelConfig, NnError, Samples, Tensor3, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn names(c: usize) -> Vec<String> {
    (0..c).map(|k| format!("class{k}")).collect()
}

fn loss_of(m: &Model<f64>, x: &Tensor3<f64>, y: &[usize]) -> f64 {
    let cache = m.forward_train(x).unwrap();
    cross_entropy(&cache.probs, y, m.n_classes()).unwrap()
}

/// Analytic gradients of the train-mode loss against central differences.
#[test]
fn gradients_match_finite_differences() {
    let cfg = ModelConfig::with_filters([4, 8, 8], 3);
    let mut model = Model::<f64>::new(cfg, names(3), 11).unwrap();
    // Non-trivial affine parameters so every gradient path is exercised.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for b in &mut model.blocks {
        for v in b.bn1.gamma.iter_mut().chain(&mut b.bn2.gamma).chain(&mut b.bn3.gamma) {
            *v = rng.gen_range(0.5..1.5);
        }
        for v in b.bn1.beta.iter_mut().chain(&mut b.bn2.beta).chain(&mut b.bn3.beta) {
            *v = rng.gen_range(-0.3..0.3);
        }
    }
    let data: Vec<f64> = (0..2 * 16).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let x = Tensor3::from_vec([2, 1, 16], data).unwrap();
    let y = [0usize, 2];

    let cache = model.forward_train(&x).unwrap();
    let grad = model.backward(&cache, &y).unwrap();
    let analytic: Vec<Vec<f64>> = grad.params().iter().map(|p| p.to_vec()).collect();
    let labels = model.param_names();

    let h = 1e-4;
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for (k, g) in analytic.iter().enumerate() {
        for i in 0..g.len() {
            let mut plus = model.clone();
            plus.params_mut()[k][i] += h;
            let mut minus = model.clone();
            minus.params_mut()[k][i] -= h;
            let numeric = (loss_of(&plus, &x, &y) - loss_of(&minus, &x, &y)) / (2.0 * h);
            let a = g[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > worst.0 {
                worst = (rel, format!("{}[{i}]: analytic {a:e} numeric {numeric:e}", labels[k]));
            }
            checked += 1;
        }
    }
    assert!(checked > 1000);
    assert!(worst.0 < 1e-3, "worst relative error {:e} at {}", worst.0, worst.1);
}

fn toy_set(n: usize, len: usize, classes: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = (0..n)
        .map(|_| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let ys = (0..n).map(|i| i % classes).collect();
    (xs, ys)
}

#[test]
fn memorizes_ten_samples() {
    let (xs, ys) = toy_set(10, 32, 2, 3);
    let data = Samples::new(&xs, &ys);
    let model = Model::<f32>::new(ModelConfig::with_filters([4, 8, 8], 2), names(2), 1).unwrap();
    let cfg = TrainConfig {
        init_lr: 1e-2,
        max_epochs: 200,
        seed: 2,
        ..Default::default()
    };
    let out = train(model, data, data, &cfg).unwrap();
    let (loss, acc) = evaluate_loss(&out.model, data, 16).unwrap();
    assert_eq!(acc, 1.0);
    assert!(loss < 0.01, "loss {loss}");
}

#[test]
fn flat_validation_loss_schedule() {
    let (xs, ys) = toy_set(8, 16, 2, 4);
    let data = Samples::new(&xs, &ys);
    let mut mcfg = ModelConfig::with_filters([2, 2, 2], 2);
    mcfg.bn_momentum = 0.0;
    let model = Model::<f64>::new(mcfg, names(2), 1).unwrap();
    let cfg = TrainConfig {
        init_lr: 1e-12,
        ..Default::default()
    };
    let h = train(model, data, data, &cfg).unwrap().history;
    assert_eq!(h.lr_reductions, vec![40, 80]);
    assert_eq!(h.stopped_at, Some(80));
    assert_eq!(h.epochs.len(), 81);
    assert_eq!(h.best_epoch, 0);
    assert_eq!(h.epochs[40].lr, 1e-12);
    assert_eq!(h.epochs[41].lr, 0.5e-12);
    assert_eq!(h.epochs.last().unwrap().lr, 0.5e-12);
    let lens = [h.train_loss().len(), h.val_loss().len(), h.val_accuracy().len(), h.lr().len()];
    assert!(lens.iter().all(|&l| l == 81));
}

#[test]
fn training_is_deterministic() {
    let (xs, ys) = toy_set(12, 24, 3, 6);
    let data = Samples::new(&xs, &ys);
    let cfg = TrainConfig {
        max_epochs: 5,
        batch_size: 4,
        seed: 9,
        ..Default::default()
    };
    let run = || {
        let m = Model::<f32>::new(ModelConfig::with_filters([4, 8, 8], 3), names(3), 1).unwrap();
        train(m, data, data, &cfg).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(a.model, b.model);
}

#[test]
fn divergence_is_reported_with_history() {
    let (mut xs, ys) = toy_set(4, 16, 2, 6);
    xs[0][3] = f64::NAN;
    let data = Samples::new(&xs, &ys);
    let m = Model::<f32>::new(ModelConfig::with_filters([2, 2, 2], 2), names(2), 1).unwrap();
    match train(m, data, data, &TrainConfig::default()) {
        Err(NnError::DivergedLoss { epoch, history }) => {
            assert_eq!(epoch, 0);
            assert_eq!(history.epochs.len(), 1);
        }
        other => panic!("expected divergence, got {:?}", other.err()),
    }
}

#[test]
fn empty_or_mislabeled_sets_fail() {
    let (xs, ys) = toy_set(4, 16, 2, 6);
    let m = || Model::<f32>::new(ModelConfig::with_filters([2, 2, 2], 2), names(2), 1).unwrap();
    let cfg = TrainConfig::default();
    let empty = Samples::new(&[], &[]);
    assert!(matches!(train(m(), empty, empty, &cfg), Err(NnError::EmptyDataset)));
    let bad_ys = vec![0, 1, 2, 0];
    let bad = Samples::new(&xs, &bad_ys);
    assert!(train(m(), bad, Samples::new(&xs, &ys), &cfg).is_err());
}
