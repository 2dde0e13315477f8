//! Label shift on the shapes dataset: full AdaBN collapses when the target
//! holds one class, while leaving the deep layers untouched recovers.
//!
//! `cargo run --release --example layer_masks -- [checkpoint]`
//!
//! Without a checkpoint the reference recipe is trained first (about a minute);
//! `train_shapes` writes a compatible one.

use bnalign::align::{adabn, AlignmentPlan, MaskRule};
use bnalign::checkpoint;
use bnalign::data::{apply_shifts, ShapesConfig, ShiftSpec};
use bnalign::metrics::accuracy;
use bnalign::model::Architecture;
use bnalign::train::{evaluate, train, TrainConfig};

fn main() -> bnalign::Result<()> {
    let shapes = ShapesConfig {
        classes: 6,
        train_per_class: 400,
        test_per_class: 150,
        image_size: 24,
        seed: 0,
    };
    let (train_set, test_set) = (shapes.train()?, shapes.test()?);
    let model = match std::env::args().nth(1) {
        Some(path) => checkpoint::load(path)?,
        None => {
            let init = Architecture::default().build(train_set.image_shape(), 6, 0)?;
            train(&init, &train_set, None, &TrainConfig::default())?.0
        }
    };

    let noise = ShiftSpec::GaussianNoise { sigma: 0.06, seed: 1 };
    let n = model.bn_count();
    println!("{:<16} original  exclude-last-k for k = 0..n  exclude-first-k for k = 1..n-1", "classes kept");
    for k in [1, 2, 3, 6] {
        let target = apply_shifts(&test_set, &[noise.clone(), ShiftSpec::ClassSubset { k }])?;
        let acc = |plan: Option<AlignmentPlan>| -> bnalign::Result<f64> {
            let m = match plan {
                Some(p) => adabn(&model, &target.images, &p)?,
                None => model.clone(),
            };
            accuracy(&evaluate(&m, &target)?)
        };
        let mut line = format!("{k:<16} {:.3}   ", acc(None)?);
        for e in 0..=n {
            line += &format!(" {:.3}", acc(Some(AlignmentPlan::adabn().with_mask(MaskRule::ExcludeLast(e))))?);
        }
        line += "  ";
        for e in 1..n {
            line += &format!(" {:.3}", acc(Some(AlignmentPlan::adabn().with_mask(MaskRule::ExcludeFirst(e))))?);
        }
        println!("{line}");
    }
    Ok(())
}
