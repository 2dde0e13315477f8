//! Labeled image datasets, procedural generation, shifts and augmentation.

pub mod augment;
pub mod idx;
pub mod shapes;
pub mod shift;

pub use augment::{augment, AugmentationPolicy};
pub use idx::{load_idx, load_idx_pair, write_idx_images, write_idx_labels};
pub use shapes::{generate_shapes_dataset, ShapesConfig};
pub use shift::{apply_shift, apply_shifts, describe, parse_shifts, CorruptionFamily, ShiftSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images `[N, C, H, W]` with one class index per example.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::shape("LabeledDataset", "image rank", 4, images.shape().len()));
        }
        if images.batch() != labels.len() {
            return Err(Error::shape("LabeledDataset", "label count", images.batch(), labels.len()));
        }
        if labels.is_empty() {
            return Err(Error::EmptyDataset("dataset has no examples".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Config(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]` of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}
