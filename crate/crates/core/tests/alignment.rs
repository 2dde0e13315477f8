//! Statistic re-estimation invariants on randomly initialized networks.

use bnalign::align::{adabn, build_layer_mask, AlignmentPlan, MaskRule, StatEstimator};
use bnalign::model::{Architecture, Model};
use bnalign::rng;
use bnalign::Tensor;
use proptest::prelude::*;

fn model(seed: u64) -> Model {
    let arch = Architecture {
        widths: vec![4, 6, 6, 8],
        hidden: 8,
        ..Architecture::default()
    };
    arch.build([1, 16, 16], 3, seed).unwrap()
}

fn images(n: usize, seed: u64, scale: f64, shift: f64) -> Tensor {
    let mut r = rng::seeded(seed);
    Tensor::from_fn(&[n, 1, 16, 16], |_| shift + scale * r.random_range(0.0..1.0))
}

fn bn_stats(m: &Model) -> Vec<(Vec<f64>, Vec<f64>)> {
    (0..m.bn_count())
        .map(|k| {
            let s = m.bn(k).unwrap().active_stats();
            (s.mean.clone(), s.var.clone())
        })
        .collect()
}

#[test]
fn realigning_on_the_same_target_is_idempotent() {
    let m = model(1);
    let x = images(30, 2, 2.0, -0.5);
    let once = adabn(&m, &x, &AlignmentPlan::adabn()).unwrap();
    let twice = adabn(&once, &x, &AlignmentPlan::adabn()).unwrap();
    assert_eq!(bn_stats(&once), bn_stats(&twice));
    assert_eq!(once.infer(&x).unwrap(), twice.infer(&x).unwrap());
}

#[test]
fn empty_mask_changes_nothing() {
    let m = model(3);
    let x = images(20, 4, 3.0, 1.0);
    let n = m.bn_count();
    for rule in [MaskRule::ExcludeLast(n), MaskRule::ExcludeFirst(n)] {
        let plan = AlignmentPlan::adabn().with_mask(rule);
        let aligned = adabn(&m, &x, &plan).unwrap();
        assert_eq!(aligned.infer(&x).unwrap(), m.infer(&x).unwrap(), "{rule}");
        assert!((0..n).all(|k| !aligned.bn(k).unwrap().is_aligned()));
    }
}

#[test]
fn masked_layers_keep_source_statistics() {
    let m = model(5);
    let x = images(20, 6, 1.0, 0.0);
    let aligned = adabn(&m, &x, &AlignmentPlan::adabn().with_mask(MaskRule::ExcludeLast(1))).unwrap();
    let n = m.bn_count();
    for k in 0..n {
        assert_eq!(aligned.bn(k).unwrap().is_aligned(), k + 1 < n, "layer {k}");
    }
    assert_eq!(aligned.bn(n - 1).unwrap().active_stats(), m.bn(n - 1).unwrap().active_stats());
}

#[test]
fn ema_estimator_approaches_exact_statistics() {
    let m = model(7);
    let x = images(256, 8, 1.5, 0.2);
    let exact = adabn(&m, &x, &AlignmentPlan::adabn()).unwrap();
    let plan = AlignmentPlan {
        estimator: StatEstimator::Ema {
            momentum: 0.1,
            batch_size: 64,
            passes: 20,
        },
        ..AlignmentPlan::adabn()
    };
    let ema = adabn(&m, &x, &plan).unwrap();
    for k in 0..m.bn_count() {
        let gap = ema.bn(k).unwrap().active_stats().max_normalized_gap(exact.bn(k).unwrap().active_stats(), 1e-5);
        assert!(gap < 0.1, "layer {k}: normalized gap {gap}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn positive_input_scaling_is_undone(seed in 0u64..500, a in 0.05f64..50.0) {
        let mut m = model(seed);
        m.set_bn_epsilon(0.0);
        let x = images(16, seed + 1, 1.0, 0.0);
        let source = adabn(&m, &x, &AlignmentPlan::adabn()).unwrap();
        let scaled = x.map(|v| a * v);
        let aligned = adabn(&source, &scaled, &AlignmentPlan::adabn()).unwrap();
        let gap = source.infer(&x).unwrap().max_abs_diff(&aligned.infer(&scaled).unwrap());
        prop_assert!(gap < 1e-8, "logit gap {}", gap);
    }

    #[test]
    fn mask_sizes_follow_the_rule(k in 0usize..6) {
        let m = model(0);
        let n = m.bn_count();
        let last = build_layer_mask(&m, MaskRule::ExcludeLast(k));
        let first = build_layer_mask(&m, MaskRule::ExcludeFirst(k));
        if k > n {
            prop_assert!(last.is_err() && first.is_err());
        } else {
            let (last, first) = (last.unwrap(), first.unwrap());
            prop_assert_eq!(last.len(), n - k);
            prop_assert_eq!(first.len(), n - k);
            prop_assert!(last.iter().all(|&i| i < n - k));
            prop_assert!(first.iter().all(|&i| i >= k));
        }
    }
}
