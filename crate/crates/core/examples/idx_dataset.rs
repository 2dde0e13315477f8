//! Writes a shapes split as IDX files and loads it back, as an `idx` dataset
//! section in a config would.
//!
//! `cargo run --release --example idx_dataset -- [dir]`

use std::path::PathBuf;

use bnalign::data::{load_idx, load_idx_pair, write_idx_images, write_idx_labels, ShapesConfig};

fn main() -> bnalign::Result<()> {
    let dir = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("bnalign-idx"), PathBuf::from);
    std::fs::create_dir_all(&dir)?;
    let data = ShapesConfig {
        classes: 4,
        train_per_class: 25,
        test_per_class: 1,
        image_size: 16,
        seed: 3,
    }
    .train()?;
    let (images, labels) = (dir.join("images.idx3-ubyte"), dir.join("labels.idx1-ubyte"));
    write_idx_images(&images, &data.images)?;
    write_idx_labels(&labels, &data.labels)?;

    let raw = load_idx(&images)?;
    println!("{}: dims {:?}", images.display(), raw.dims);
    let back = load_idx_pair(&images, &labels, None)?;
    let gap = back.images.max_abs_diff(&data.images);
    println!("{} examples, {} classes, counts {:?}", back.len(), back.num_classes, back.class_counts());
    println!("max pixel change after 8-bit quantization: {gap:.4} (≤ 1/510)");
    assert_eq!(back.labels, data.labels);
    Ok(())
}
