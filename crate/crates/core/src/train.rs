//! Mini-batch SGD training and evaluation.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentationPolicy, LabeledDataset};
use crate::error::{Error, Result};
use crate::metrics::PredictionRecord;
use crate::model::Model;
use crate::nn::{softmax, softmax_cross_entropy, Layer, Mode, Param};
use crate::rng;
use crate::tensor::Tensor;

/// Evaluation chunk size; results do not depend on it.
pub const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate.
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Overrides the rate of every dropout layer when set.
    pub dropout: Option<f64>,
    pub augmentation: AugmentationPolicy,
    pub seed: u64,
    /// Epochs (0-based) at whose start the learning rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            dropout: None,
            augmentation: AugmentationPolicy::default(),
            seed: 0,
            lr_milestones: vec![15],
            lr_decay: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("lr", self.lr),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("lr_decay", self.lr_decay),
        ];
        if let Some((name, v)) = rates.iter().find(|(_, v)| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
        }
        if let Some(d) = self.dropout {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::Config(format!("dropout must be in [0, 1), got {d}")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr * self.lr_decay.powi(decays as i32)
    }
}

/// SGD with heavy-ball momentum and L2 weight decay:
/// `g ← ∇ + λ·w` (decayed params only), `v ← β·v + g`, `w ← w − η·v`.
#[derive(Debug, Clone, Default)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        }
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            let wd = if p.decay { self.weight_decay } else { 0.0 };
            let grad = p.grad.data().to_vec();
            for ((w, g), vi) in p.value.data_mut().iter_mut().zip(grad).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + g + wd * *w;
                *w -= lr * *vi;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    /// CSV with columns `epoch,loss,train_acc,val_acc` (empty `val_acc` when absent).
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "epoch,loss,train_acc,val_acc")?;
        for e in &self.epochs {
            let val = e.val_acc.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{}", e.epoch, e.loss, e.train_acc, val)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Trains a copy of `model` and returns it with the per-epoch log. Batches are
/// drawn from a per-epoch shuffle; a trailing batch with fewer than two
/// examples is skipped.
pub fn train(
    model: &Model,
    data: &LabeledDataset,
    validation: Option<&LabeledDataset>,
    config: &TrainConfig,
) -> Result<(Model, TrainLog)> {
    config.validate()?;
    if data.num_classes != model.num_classes {
        return Err(Error::shape("train", "class count", model.num_classes, data.num_classes));
    }
    config.augmentation.validate(data.image_shape()[1].min(data.image_shape()[2]))?;
    let mut model = model.clone();
    if let Some(rate) = config.dropout {
        for l in &mut model.layers {
            if let Layer::Dropout(d) = l {
                d.rate = rate;
            }
        }
    }
    let mut shuffle_rng = rng::stream(config.seed, 0);
    let mut aug_rng = rng::stream(config.seed, 1);
    let mut dropout_rng = rng::stream(config.seed, 2);
    let mut sgd = Sgd::new(config.momentum, config.weight_decay);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for batch in order.chunks(config.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let x = augment(&data.images.select(batch), &config.augmentation, &mut aug_rng)?;
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            model.zero_grad();
            let logits = model.forward(&x, Mode::Train, &mut dropout_rng)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            model.backward(&dlogits)?;
            sgd.step(&mut model.params_mut(), lr);
            loss_sum += loss * batch.len() as f64;
            correct += argmax_rows(&logits).iter().zip(&labels).filter(|(p, l)| p == l).count();
            seen += batch.len();
        }
        if model.params().iter().any(|p| !p.value.all_finite()) {
            return Err(Error::Divergence { epoch });
        }
        model.clear_caches();
        let val_acc = validation
            .map(|v| evaluate(&model, v).map(|r| crate::metrics::accuracy(&r)))
            .transpose()?
            .transpose()?;
        let entry = EpochLog {
            epoch,
            loss: loss_sum / seen.max(1) as f64,
            train_acc: correct as f64 / seen.max(1) as f64,
            val_acc,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train-acc {:.4} val-acc {:?}",
            entry.loss,
            entry.train_acc,
            entry.val_acc
        );
        log.epochs.push(entry);
    }
    model.clear_caches();
    Ok((model, log))
}

fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.example_len();
    logits
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Evaluation-mode predictions; the model is not mutated.
pub fn evaluate(model: &Model, data: &LabeledDataset) -> Result<Vec<PredictionRecord>> {
    let probs = softmax(&model.infer_batched(&data.images, EVAL_CHUNK)?);
    let k = probs.example_len();
    Ok(probs
        .data()
        .chunks(k)
        .zip(&data.labels)
        .map(|(row, &label)| {
            let (predicted, confidence) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
            PredictionRecord {
                predicted,
                confidence: confidence.clamp(0.0, 1.0),
                label,
            }
        })
        .collect())
}
