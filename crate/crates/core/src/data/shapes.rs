//! Procedural "shapes" classification dataset.
//!
//! Each image is a single-channel textured background with one bright
//! geometric shape at a random rotation, position, scale and brightness. Class `k` is the
//! `k`-th entry of [`SHAPES`].

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const SHAPES: [&str; 10] = [
    "square", "disk", "cross", "triangle", "ring", "frame", "bars", "stripe", "ell", "half-disk",
];

pub const MIN_IMAGE_SIZE: usize = 12;

/// Shape half-extent range as a fraction of the image side, before area equalization.
const HALF_SIZE: (f64, f64) = (0.16, 0.2);

/// Fraction of the `[−1, 1]²` shape box each shape covers. Half-extents are
/// scaled by `sqrt(REFERENCE_COVERAGE / coverage)` so every class lights up
/// the same expected area.
pub(crate) const COVERAGE: [f64; 10] = [0.64, 0.56765, 0.51, 0.45011, 0.58905, 0.64, 0.5, 0.3, 0.54438, 0.39274];
const REFERENCE_COVERAGE: f64 = 0.5;

/// Maximum offset of the shape centre from the image centre, as a fraction of the side.
const POSITION_JITTER: f64 = 0.06;

/// Range of the mean background level.
const BACKGROUND: (f64, f64) = (0.15, 0.45);
/// Range of the brightness added inside the shape.
const CONTRAST: (f64, f64) = (0.35, 0.6);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapesConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    #[serde(default = "default_size")]
    pub image_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_size() -> usize {
    24
}

impl ShapesConfig {
    pub fn train(&self) -> Result<LabeledDataset> {
        generate_shapes_dataset(self.train_per_class, self.classes, self.image_size, rng::derive(self.seed, 1))
    }

    pub fn test(&self) -> Result<LabeledDataset> {
        generate_shapes_dataset(self.test_per_class, self.classes, self.image_size, rng::derive(self.seed, 2))
    }
}

/// Membership test in shape-local coordinates `u, v ∈ [−1, 1]` (v grows downwards).
pub(crate) fn inside(class: usize, u: f64, v: f64) -> bool {
    let r2 = u * u + v * v;
    match class {
        0 => u.abs() <= 0.8 && v.abs() <= 0.8,
        1 => r2 <= 0.85 * 0.85,
        2 => (u.abs() <= 0.3 && v.abs() <= 1.0) || (v.abs() <= 0.3 && u.abs() <= 1.0),
        3 => (-0.9..=0.9).contains(&v) && u.abs() <= (v + 0.9) / 1.8,
        4 => (0.5 * 0.5..=1.0).contains(&r2),
        5 => (0.6..=1.0).contains(&u.abs().max(v.abs())),
        6 => u.abs() <= 1.0 && (0.3..=0.8).contains(&v.abs()),
        7 => u.abs() <= 0.3 && v.abs() <= 1.0,
        8 => ((-1.0..=-0.35).contains(&u) && v.abs() <= 1.0) || (u.abs() <= 1.0 && (0.35..=1.0).contains(&v)),
        9 => r2 <= 1.0 && v >= 0.0,
        _ => false,
    }
}

/// Renders one image: a textured background plus one shape at a uniformly
/// random rotation, position and scale, brightened by a random contrast.
fn render(class: usize, size: usize, rng: &mut rng::Rng) -> Vec<f64> {
    let s = size as f64;
    let base = rng.random_range(BACKGROUND.0..BACKGROUND.1);
    let amp = rng.random_range(0.04..0.12);
    let freq = rng.random_range(0.3..1.2);
    let theta = rng.random_range(0.0..std::f64::consts::PI);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let (ct, st) = (theta.cos(), theta.sin());
    let half = rng.random_range(HALF_SIZE.0 * s..HALF_SIZE.1 * s) * (REFERENCE_COVERAGE / COVERAGE[class]).sqrt();
    let half = half.min(0.45 * s);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let jitter = POSITION_JITTER * s;
    let cx = s / 2.0 + rng.random_range(-jitter..=jitter);
    let cy = s / 2.0 + rng.random_range(-jitter..=jitter);
    let contrast = rng.random_range(CONTRAST.0..CONTRAST.1);
    let mut img = Vec::with_capacity(size * size);
    for py in 0..size {
        for px in 0..size {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            let texture = amp * (freq * (x * ct + y * st) + phase).sin();
            let grain = rng.random_range(-0.04..0.04);
            let mut v = base + texture + grain;
            let (dx, dy) = ((x - cx) / half, (y - cy) / half);
            if inside(class, ca * dx + sa * dy, -sa * dx + ca * dy) {
                v += contrast;
            }
            img.push(v.clamp(0.0, 1.0));
        }
    }
    img
}

/// Class-balanced dataset of `n_per_class × classes` single-channel images.
/// Example `i` has class `i mod classes` and is rendered from its own seeded
/// stream, so the output is deterministic for a seed.
pub fn generate_shapes_dataset(n_per_class: usize, classes: usize, image_size: usize, seed: u64) -> Result<LabeledDataset> {
    if !(2..=SHAPES.len()).contains(&classes) {
        return Err(Error::Config(format!("shapes dataset supports 2..=10 classes, got {classes}")));
    }
    if image_size < MIN_IMAGE_SIZE {
        return Err(Error::Config(format!(
            "shapes cannot fit in {image_size}×{image_size} images (minimum {MIN_IMAGE_SIZE})"
        )));
    }
    if n_per_class == 0 {
        return Err(Error::EmptyDataset("n_per_class must be >= 1".into()));
    }
    let n = n_per_class * classes;
    let mut data = Vec::with_capacity(n * image_size * image_size);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        let mut r = rng::stream(seed, i as u64);
        data.extend(render(class, image_size, &mut r));
        labels.push(class);
    }
    LabeledDataset::new(Tensor::new(vec![n, 1, image_size, image_size], data)?, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_seed() {
        let a = generate_shapes_dataset(5, 4, 16, 11).unwrap();
        let b = generate_shapes_dataset(5, 4, 16, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_shapes_dataset(5, 4, 16, 12).unwrap();
        assert_ne!(a.images, c.images);
    }

    #[test]
    fn balanced_by_construction() {
        let d = generate_shapes_dataset(500, 4, 12, 0).unwrap();
        assert_eq!(d.len(), 2000);
        assert_eq!(d.class_counts(), vec![500; 4]);
    }

    #[test]
    fn values_in_unit_interval() {
        let d = generate_shapes_dataset(3, 10, 16, 3).unwrap();
        assert!(d.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn too_small_or_bad_class_count_is_config_error() {
        assert!(matches!(generate_shapes_dataset(1, 4, 11, 0), Err(Error::Config(_))));
        assert!(matches!(generate_shapes_dataset(1, 1, 16, 0), Err(Error::Config(_))));
        assert!(matches!(generate_shapes_dataset(1, 11, 16, 0), Err(Error::Config(_))));
    }

    #[test]
    fn coverage_table_matches_midpoint_integration() {
        let n = 400;
        for (class, &table) in COVERAGE.iter().enumerate() {
            let mut hits = 0usize;
            for i in 0..n {
                for j in 0..n {
                    let u = -1.0 + (2 * i + 1) as f64 / n as f64;
                    let v = -1.0 + (2 * j + 1) as f64 / n as f64;
                    hits += usize::from(inside(class, u, v));
                }
            }
            let measured = hits as f64 / (n * n) as f64;
            assert!((measured - table).abs() < 1e-4, "{}: {measured} vs {table}", SHAPES[class]);
        }
    }

    #[test]
    fn every_shape_covers_some_pixels() {
        for class in 0..SHAPES.len() {
            let mut hits = 0;
            for i in 0..21 {
                for j in 0..21 {
                    let (u, v) = (i as f64 / 10.0 - 1.0, j as f64 / 10.0 - 1.0);
                    hits += usize::from(inside(class, u, v));
                }
            }
            assert!(hits > 40, "{} covers only {hits} grid points", SHAPES[class]);
        }
    }
}
