//! End-to-end training behaviour on small synthetic problems.

use bnalign::data::{AugmentationPolicy, LabeledDataset, ShapesConfig};
use bnalign::metrics::accuracy;
use bnalign::model::{Architecture, Model};
use bnalign::rng;
use bnalign::train::{evaluate, train, TrainConfig};
use bnalign::Tensor;
use rand::Rng as _;

/// Two classes of 6×6 images: dim noise around 0.2 versus bright noise around 0.8.
fn brightness_task(n: usize, seed: u64) -> LabeledDataset {
    let mut r = rng::seeded(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let mut images = Tensor::zeros(&[n, 1, 6, 6]);
    for (i, &y) in labels.iter().enumerate() {
        let level = if y == 0 { 0.2 } else { 0.8 };
        for v in images.example_mut(i) {
            *v = level + r.random_range(-0.15..0.15);
        }
    }
    LabeledDataset::new(images, labels, 2).unwrap()
}

fn tiny() -> Architecture {
    Architecture {
        widths: vec![4],
        hidden: 8,
        dropout: 0.0,
        ..Architecture::default()
    }
}

fn quick_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 6,
        batch_size: 16,
        augmentation: AugmentationPolicy {
            enabled: false,
            ..AugmentationPolicy::default()
        },
        lr_milestones: vec![],
        seed,
        ..TrainConfig::default()
    }
}

fn param_values(m: &Model) -> Vec<f64> {
    m.params().iter().flat_map(|p| p.value.data().to_vec()).collect()
}

#[test]
fn zero_learning_rate_leaves_weights_unchanged() {
    let data = brightness_task(64, 1);
    let init = tiny().build([1, 6, 6], 2, 3).unwrap();
    let config = TrainConfig {
        lr: 0.0,
        ..quick_config(3)
    };
    let (trained, log) = train(&init, &data, None, &config).unwrap();
    assert_eq!(param_values(&trained), param_values(&init));
    assert_eq!(log.epochs.len(), config.epochs);
}

#[test]
fn separable_task_is_learned() {
    let (train_set, test_set) = (brightness_task(200, 1), brightness_task(200, 2));
    let init = tiny().build([1, 6, 6], 2, 4).unwrap();
    let (trained, log) = train(&init, &train_set, Some(&test_set), &quick_config(4)).unwrap();
    let acc = accuracy(&evaluate(&trained, &test_set).unwrap()).unwrap();
    assert!(acc >= 0.99, "held-out accuracy {acc}");
    assert!(log.epochs.last().unwrap().loss < log.epochs[0].loss);
}

#[test]
fn training_is_deterministic_per_seed() {
    let data = brightness_task(96, 5);
    let init = tiny().build([1, 6, 6], 2, 6).unwrap();
    let config = TrainConfig {
        augmentation: AugmentationPolicy::default(),
        dropout: Some(0.2),
        ..quick_config(6)
    };
    let (a, log_a) = train(&init, &data, None, &config).unwrap();
    let (b, log_b) = train(&init, &data, None, &config).unwrap();
    assert_eq!(param_values(&a), param_values(&b));
    assert_eq!(log_a, log_b);
    let (c, _) = train(&init, &data, None, &TrainConfig { seed: 7, ..config }).unwrap();
    assert_ne!(param_values(&a), param_values(&c));
}

#[test]
fn untrained_network_is_near_chance() {
    let shapes = ShapesConfig {
        classes: 6,
        train_per_class: 1,
        test_per_class: 60,
        image_size: 24,
        seed: 9,
    };
    let test = shapes.test().unwrap();
    let mean: f64 = (0..8)
        .map(|seed| {
            let m = Architecture::default().build([1, 24, 24], 6, seed).unwrap();
            accuracy(&evaluate(&m, &test).unwrap()).unwrap()
        })
        .sum::<f64>()
        / 8.0;
    assert!((mean - 1.0 / 6.0).abs() < 0.08, "mean untrained accuracy {mean}");
}
