//! Trains the reference CNN on the procedural shapes dataset and saves a checkpoint.
//!
//! `cargo run --release --example train_shapes -- [seed] [out.ckpt]`

use bnalign::data::ShapesConfig;
use bnalign::metrics::accuracy;
use bnalign::model::Architecture;
use bnalign::train::{evaluate, train, TrainConfig};

const SIZE: usize = 24;

fn main() -> bnalign::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed must be an integer"));
    let out = args.next().unwrap_or_else(|| "shapes.ckpt".into());

    let shapes = ShapesConfig {
        classes: 6,
        train_per_class: 400,
        test_per_class: 150,
        image_size: SIZE,
        seed,
    };
    let (train_set, test_set) = (shapes.train()?, shapes.test()?);
    let model = Architecture::default().build([1, SIZE, SIZE], shapes.classes, seed)?;
    let config = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let start = std::time::Instant::now();
    let (trained, _log) = train(&model, &train_set, Some(&test_set), &config)?;
    println!(
        "trained in {:.1}s, held-out accuracy {:.4}",
        start.elapsed().as_secs_f64(),
        accuracy(&evaluate(&trained, &test_set)?)?
    );
    bnalign::checkpoint::save(&trained, &out)?;
    println!("saved {out}");
    Ok(())
}
