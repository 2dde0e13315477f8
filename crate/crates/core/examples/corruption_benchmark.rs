//! Accuracy and calibration of a trained checkpoint under every corruption
//! family and severity, before and after AdaBN.
//!
//! `cargo run --release --example train_shapes -- 0 shapes.ckpt`
//! `cargo run --release --example corruption_benchmark -- shapes.ckpt`

use bnalign::align::{adabn, AlignmentPlan};
use bnalign::checkpoint;
use bnalign::data::{apply_shift, CorruptionFamily, ShapesConfig};
use bnalign::metrics::{accuracy, ece, DEFAULT_ECE_BINS};
use bnalign::train::evaluate;

fn main() -> bnalign::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "shapes.ckpt".into());
    let model = checkpoint::load(&path)?;
    // the test split train_shapes evaluates on for seed 0
    let test = ShapesConfig {
        classes: model.num_classes,
        train_per_class: 1,
        test_per_class: 150,
        image_size: model.input_shape[1],
        seed: 0,
    }
    .test()?;
    println!("{:<16} {:>3}  {:>9} {:>9}  {:>9} {:>9}", "family", "sev", "acc", "acc+bn", "ece", "ece+bn");
    for family in [CorruptionFamily::GaussianNoise, CorruptionFamily::BoxBlur, CorruptionFamily::Contrast] {
        for sev in CorruptionFamily::SEVERITIES {
            let shifted = apply_shift(&test, &family.at(sev, 1)?)?;
            let before = evaluate(&model, &shifted)?;
            let aligned = adabn(&model, &shifted.images, &AlignmentPlan::adabn())?;
            let after = evaluate(&aligned, &shifted)?;
            println!(
                "{:<16} {sev:>3}  {:>9.4} {:>9.4}  {:>9.4} {:>9.4}",
                family.name(),
                accuracy(&before)?,
                accuracy(&after)?,
                ece(&before, DEFAULT_ECE_BINS)?,
                ece(&after, DEFAULT_ECE_BINS)?
            );
        }
    }
    Ok(())
}
