//! Training-time augmentation: zero-padded random crop and horizontal flip.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationPolicy {
    /// Zero-padding width for the random crop.
    pub pad: usize,
    pub flip_prob: f64,
    pub enabled: bool,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            pad: 3,
            flip_prob: 0.5,
            enabled: true,
        }
    }
}

impl AugmentationPolicy {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self, side: usize) -> Result<()> {
        if self.enabled && self.pad >= side {
            return Err(Error::Config(format!("crop padding {} must be smaller than image side {side}", self.pad)));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("flip probability must be in [0, 1], got {}", self.flip_prob)));
        }
        Ok(())
    }
}

/// Crops a `[C, H, W]` image out of its `pad`-zero-padded version at offset
/// `(dy, dx)` (each in `0..=2·pad`). Offset `(pad, pad)` is the identity.
pub fn crop_padded(img: &[f64], c: usize, h: usize, w: usize, pad: usize, dy: usize, dx: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for ch in 0..c {
        for y in 0..h {
            let sy = (y + dy) as isize - pad as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let sx = (x + dx) as isize - pad as isize;
                if sx >= 0 && sx < w as isize {
                    out[(ch * h + y) * w + x] = img[(ch * h + sy as usize) * w + sx as usize];
                }
            }
        }
    }
    out
}

pub fn flip_horizontal(img: &mut [f64], c: usize, h: usize, w: usize) {
    for ch in 0..c {
        for y in 0..h {
            img[(ch * h + y) * w..(ch * h + y + 1) * w].reverse();
        }
    }
}

/// Augments every image of a `[N, C, H, W]` batch independently.
pub fn augment(images: &Tensor, policy: &AugmentationPolicy, rng: &mut Rng) -> Result<Tensor> {
    if !policy.enabled {
        return Ok(images.clone());
    }
    let s = images.shape();
    if s.len() != 4 {
        return Err(Error::shape("augment", "image rank", 4, s.len()));
    }
    let (c, h, w) = (s[1], s[2], s[3]);
    policy.validate(h.min(w))?;
    let mut out = images.clone();
    for i in 0..images.batch() {
        let dy = rng.random_range(0..=2 * policy.pad);
        let dx = rng.random_range(0..=2 * policy.pad);
        let flip = rng.random::<f64>() < policy.flip_prob;
        let mut img = crop_padded(images.example(i), c, h, w, policy.pad, dy, dx);
        if flip {
            flip_horizontal(&mut img, c, h, w);
        }
        out.example_mut(i).copy_from_slice(&img);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_shapes_dataset;

    #[test]
    fn disabled_policy_is_identity() {
        let d = generate_shapes_dataset(2, 2, 12, 0).unwrap();
        let mut r = crate::rng::seeded(0);
        assert_eq!(augment(&d.images, &AugmentationPolicy::disabled(), &mut r).unwrap(), d.images);
    }

    #[test]
    fn double_flip_is_identity() {
        let img: Vec<f64> = (0..2 * 3 * 4).map(|i| i as f64).collect();
        let mut f = img.clone();
        flip_horizontal(&mut f, 2, 3, 4);
        assert_ne!(f, img);
        flip_horizontal(&mut f, 2, 3, 4);
        assert_eq!(f, img);
    }

    #[test]
    fn zero_offset_crop_shifts_by_pad_and_zero_fills() {
        let (h, w, pad) = (8, 8, 4);
        let img: Vec<f64> = (0..h * w).map(|i| 1.0 + i as f64).collect();
        let out = crop_padded(&img, 1, h, w, pad, 0, 0);
        for y in 0..h {
            for x in 0..w {
                let v = out[y * w + x];
                if y < pad || x < pad {
                    assert_eq!(v, 0.0);
                } else {
                    assert_eq!(v, img[(y - pad) * w + (x - pad)]);
                }
            }
        }
        assert_eq!(crop_padded(&img, 1, h, w, pad, pad, pad), img);
    }

    #[test]
    fn augmentation_preserves_value_range() {
        let d = generate_shapes_dataset(5, 3, 16, 1).unwrap();
        let mut r = crate::rng::seeded(2);
        let policy = AugmentationPolicy {
            pad: 4,
            flip_prob: 0.5,
            enabled: true,
        };
        let a = augment(&d.images, &policy, &mut r).unwrap();
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(a, d.images);
    }

    #[test]
    fn padding_must_be_smaller_than_side() {
        let d = generate_shapes_dataset(1, 2, 12, 0).unwrap();
        let mut r = crate::rng::seeded(0);
        let policy = AugmentationPolicy {
            pad: 12,
            flip_prob: 0.0,
            enabled: true,
        };
        assert!(augment(&d.images, &policy, &mut r).is_err());
    }
}
