mod oracles;

use milsweep_core::mil::{
    attention_forward, auc, extract_features, generate_tiles, gradient, objective, predict, train_mil, Aggregator,
    Bag, MilModel, Signal, SyntheticGenSpec, Task, TrainSettings,
};
use oracles::{fd_gradient, random_bag};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model<R: Rng>(rng: &mut R, d: usize, h: usize) -> MilModel {
    let mut m = MilModel::zeros(d, h);
    for p in m.params_mut() {
        *p = rng.random_range(-1.0..1.0);
    }
    m
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let d = rng.random_range(2..=5);
        let h = rng.random_range(1..=4);
        let task = if case % 2 == 0 { Task::Classification } else { Task::Regression };
        let agg = [Aggregator::Attention, Aggregator::Mean, Aggregator::Max][case % 3];
        let wd = if case % 4 == 0 { 0.0 } else { rng.random_range(0.0..0.1) };
        let bags: Vec<Bag> = (0..rng.random_range(2..=5))
            .map(|j| {
                let n = rng.random_range(1..=5);
                let label = match task {
                    Task::Classification => (j % 2) as f64,
                    Task::Regression => rng.random_range(-1.0..1.0),
                };
                random_bag(&mut rng, j as u32, n, d, label)
            })
            .collect();
        let model = random_model(&mut rng, d, h);
        let (loss, grad) = gradient(&model, &bags, agg, task, wd);
        assert!((loss - objective(&model, &bags, agg, task, wd)).abs() < 1e-12);
        let numeric = fd_gradient(&model, &bags, agg, task, wd, 1e-5);
        for (a, n) in grad.params().zip(&numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn separable_bags_reach_high_auc() {
    let spec = SyntheticGenSpec {
        witness_rate: 1.0,
        base_noise: 0.1,
        ..SyntheticGenSpec::default()
    };
    let tiles = generate_tiles(&spec, 8, 1.0).unwrap();
    let (train, val) = extract_features(&tiles, spec.d_sig, 3.0);
    let model = MilModel::init(spec.d, 8, &mut ChaCha8Rng::seed_from_u64(0));
    let settings = TrainSettings {
        aggregator: Aggregator::Attention,
        task: Task::Classification,
        lr: 0.5,
        epochs: 30,
        weight_decay: 0.0,
    };
    let out = train_mil(&train, &val, model, &settings, &mut |_, _| Signal::Continue).unwrap();
    assert_eq!(out.epochs_run, 30);
    assert!(1.0 - out.final_metric >= 0.95, "AUC {}", 1.0 - out.final_metric);
}

#[test]
fn zero_learning_rate_freezes_everything() {
    let spec = SyntheticGenSpec::default();
    let tiles = generate_tiles(&spec, 4, 1.0).unwrap();
    let (train, val) = extract_features(&tiles, spec.d_sig, 1.0);
    let model = MilModel::init(spec.d, 4, &mut ChaCha8Rng::seed_from_u64(3));
    let settings = TrainSettings {
        aggregator: Aggregator::Attention,
        task: Task::Classification,
        lr: 0.0,
        epochs: 5,
        weight_decay: 0.01,
    };
    let mut metrics = Vec::new();
    let out = train_mil(&train, &val, model.clone(), &settings, &mut |_, m| {
        metrics.push(m);
        Signal::Continue
    })
    .unwrap();
    assert_eq!(out.model, model);
    assert_eq!(metrics.len(), 5);
    assert!(metrics.iter().all(|&m| m == metrics[0]));
}

#[test]
fn prune_signal_stops_after_second_report() {
    let spec = SyntheticGenSpec::default();
    let tiles = generate_tiles(&spec, 4, 1.0).unwrap();
    let (train, val) = extract_features(&tiles, spec.d_sig, 1.0);
    let model = MilModel::init(spec.d, 4, &mut ChaCha8Rng::seed_from_u64(3));
    let settings = TrainSettings {
        aggregator: Aggregator::Mean,
        task: Task::Classification,
        lr: 0.5,
        epochs: 20,
        weight_decay: 0.0,
    };
    let mut calls = Vec::new();
    let out = train_mil(&train, &val, model, &settings, &mut |epoch, _| {
        calls.push(epoch);
        if epoch == 2 {
            Signal::Prune
        } else {
            Signal::Continue
        }
    })
    .unwrap();
    assert_eq!(calls, vec![1, 2]);
    assert!(out.pruned);
    assert_eq!(out.epochs_run, 2);
}

#[test]
fn diverging_training_is_an_error_naming_lr() {
    let spec = SyntheticGenSpec::default();
    let tiles = generate_tiles(&spec, 4, 1.0).unwrap();
    let (train, val) = extract_features(&tiles, spec.d_sig, 1.0);
    let model = MilModel::init(spec.d, 4, &mut ChaCha8Rng::seed_from_u64(3));
    let settings = TrainSettings {
        aggregator: Aggregator::Mean,
        task: Task::Regression,
        lr: 1e6,
        epochs: 50,
        weight_decay: 0.0,
    };
    let err = train_mil(&train, &val, model, &settings, &mut |_, _| Signal::Continue).unwrap_err();
    assert!(err.to_string().contains("lr=1e6"), "{err}");
}

#[test]
fn stronger_signal_never_lowers_mean_auc() {
    let spec = SyntheticGenSpec::default();
    let tiles = generate_tiles(&spec, 8, 1.0).unwrap();
    let mut previous = 0.0;
    for amplitude in [0.5, 1.0, 2.0, 3.0] {
        let (train, val) = extract_features(&tiles, spec.d_sig, amplitude);
        let mut total = 0.0;
        for seed in 0..10 {
            let model = MilModel::init(spec.d, 8, &mut ChaCha8Rng::seed_from_u64(seed));
            let settings = TrainSettings {
                aggregator: Aggregator::Attention,
                task: Task::Classification,
                lr: 0.5,
                epochs: 20,
                weight_decay: 0.0,
            };
            total += 1.0 - train_mil(&train, &val, model, &settings, &mut |_, _| Signal::Continue)
                .unwrap()
                .final_metric;
        }
        let mean = total / 10.0;
        assert!(mean >= previous, "amplitude {amplitude}: {mean} < {previous}");
        previous = mean;
    }
}

#[test]
fn validation_metric_is_one_minus_auc() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let bags: Vec<Bag> = (0..12).map(|j| random_bag(&mut rng, j, 3, 4, (j % 2) as f64)).collect();
    let model = random_model(&mut rng, 4, 2);
    let scores: Vec<f64> = bags.iter().map(|b| predict(b, Aggregator::Max, &model)).collect();
    let labels: Vec<bool> = bags.iter().map(Bag::is_positive).collect();
    let m = milsweep_core::mil::validation_metric(&model, &bags, Aggregator::Max, Task::Classification).unwrap();
    assert_eq!(m, 1.0 - auc(&scores, &labels).unwrap());
}

fn bag_and_model() -> impl Strategy<Value = (Vec<f64>, usize, usize, u64)> {
    (1usize..8, 1usize..6, any::<u64>()).prop_flat_map(|(n, d, seed)| {
        (prop::collection::vec(-50.0f64..50.0, n * d), Just(n), Just(d), Just(seed))
    })
}

proptest! {
    #[test]
    fn attention_weights_form_a_distribution((inst, n, d, seed) in bag_and_model()) {
        let model = random_model(&mut ChaCha8Rng::seed_from_u64(seed), d, 3);
        let (z, a) = attention_forward(&inst, n, &model);
        prop_assert_eq!(a.len(), n);
        prop_assert!(a.iter().all(|&w| w > 0.0));
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(z.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn pooling_ignores_instance_order((inst, n, d, seed) in bag_and_model(), shift in 0usize..8) {
        let model = random_model(&mut ChaCha8Rng::seed_from_u64(seed), d, 3);
        let mut rotated = inst.clone();
        rotated.rotate_left((shift % n) * d);
        let a = Bag::new(0, n, d, inst, 1.0);
        let b = Bag::new(0, n, d, rotated, 1.0);
        for agg in [Aggregator::Attention, Aggregator::Mean, Aggregator::Max] {
            let (pa, pb) = (predict(&a, agg, &model), predict(&b, agg, &model));
            prop_assert!((pa - pb).abs() <= 1e-12 * pa.abs().max(1.0));
            let (la, lb) = (
                objective(&model, std::slice::from_ref(&a), agg, Task::Classification, 0.0),
                objective(&model, std::slice::from_ref(&b), agg, Task::Classification, 0.0),
            );
            prop_assert!((la - lb).abs() <= 1e-12 * la.abs().max(1.0));
        }
    }
}
