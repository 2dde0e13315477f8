//! Post-hoc replacement of Batch Normalization statistics with target statistics.
//!
//! Alignment functions receive target images only; labels never reach them.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentationPolicy};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::Layer;
use crate::norm::{estimate_channel_stats, ChannelStats, DEFAULT_MOMENTUM};
use crate::rng;
use crate::tensor::Tensor;

/// Chunk size for propagating target data; statistics do not depend on it.
const PROPAGATE_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignmentMode {
    Adabn,
    /// Target statistics are estimated on augmented target images.
    AdabnAug,
}

/// Which Batch Normalization layers (by depth index) are re-estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", content = "k", rename_all = "kebab-case")]
pub enum MaskRule {
    #[default]
    All,
    ExcludeLast(usize),
    ExcludeFirst(usize),
}

impl fmt::Display for MaskRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskRule::All => write!(f, "all"),
            MaskRule::ExcludeLast(k) => write!(f, "exclude-last-{k}"),
            MaskRule::ExcludeFirst(k) => write!(f, "exclude-first-{k}"),
        }
    }
}

impl std::str::FromStr for MaskRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Usage(format!("cannot parse mask {s:?}; expected all, exclude-last-K or exclude-first-K"));
        if s == "all" {
            return Ok(MaskRule::All);
        }
        let (rule, k) = s.rsplit_once('-').ok_or_else(bad)?;
        let k = k.parse().map_err(|_| bad())?;
        match rule {
            "exclude-last" => Ok(MaskRule::ExcludeLast(k)),
            "exclude-first" => Ok(MaskRule::ExcludeFirst(k)),
            _ => Err(bad()),
        }
    }
}

impl MaskRule {
    /// Rule-family name without `k`, used as a plot series key.
    pub fn family(&self) -> &'static str {
        match self {
            MaskRule::All => "all",
            MaskRule::ExcludeLast(_) => "exclude-last",
            MaskRule::ExcludeFirst(_) => "exclude-first",
        }
    }
}

pub fn build_layer_mask(model: &Model, rule: MaskRule) -> Result<BTreeSet<usize>> {
    let n = model.bn_count();
    let check = |k: usize| {
        if k > n {
            Err(Error::Config(format!("mask k = {k} exceeds the model's {n} batch-norm layers")))
        } else {
            Ok(k)
        }
    };
    Ok(match rule {
        MaskRule::All => (0..n).collect(),
        MaskRule::ExcludeLast(k) => (0..n - check(k)?).collect(),
        MaskRule::ExcludeFirst(k) => (check(k)?..n).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
#[derive(Default)]
pub enum StatEstimator {
    /// Layer-sequential exact pooled statistics over the whole target set.
    #[default]
    ExactTwoPass,
    /// Joint batch-statistic passes over shuffled target batches, folded into
    /// an exponential moving average that starts from the source statistics.
    Ema {
        #[serde(default = "default_momentum")]
        momentum: f64,
        #[serde(default = "default_batch")]
        batch_size: usize,
        #[serde(default = "one")]
        passes: usize,
    },
}

fn default_momentum() -> f64 {
    DEFAULT_MOMENTUM
}
fn default_batch() -> usize {
    64
}
fn one() -> usize {
    1
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentPlan {
    pub mode: AlignmentMode,
    #[serde(default)]
    pub mask: MaskRule,
    #[serde(default)]
    pub estimator: StatEstimator,
    /// Required for [`AlignmentMode::AdabnAug`].
    #[serde(default)]
    pub augmentation: Option<AugmentationPolicy>,
    #[serde(default)]
    pub seed: u64,
}

impl AlignmentPlan {
    pub fn adabn() -> Self {
        Self {
            mode: AlignmentMode::Adabn,
            mask: MaskRule::All,
            estimator: StatEstimator::ExactTwoPass,
            augmentation: None,
            seed: 0,
        }
    }

    pub fn adabn_aug(policy: AugmentationPolicy, seed: u64) -> Self {
        Self {
            mode: AlignmentMode::AdabnAug,
            augmentation: Some(policy),
            seed,
            ..Self::adabn()
        }
    }

    pub fn with_mask(self, mask: MaskRule) -> Self {
        Self { mask, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == AlignmentMode::AdabnAug && self.augmentation.is_none() {
            return Err(Error::Config("adabn-aug requires an augmentation policy".into()));
        }
        if let StatEstimator::Ema {
            momentum,
            batch_size,
            passes,
        } = self.estimator
        {
            if !(0.0..=1.0).contains(&momentum) || batch_size < 2 || passes == 0 {
                return Err(Error::Config(format!(
                    "ema estimator needs momentum in [0, 1], batch_size >= 2 and passes >= 1 \
                     (got {momentum}, {batch_size}, {passes})"
                )));
            }
        }
        Ok(())
    }

    /// Short label such as `adabn/exclude-last-2`.
    pub fn label(&self) -> String {
        let mode = match self.mode {
            AlignmentMode::Adabn => "adabn",
            AlignmentMode::AdabnAug => "adabn-aug",
        };
        format!("{mode}/{}", self.mask)
    }
}

fn warn_zero_variance(k: usize, stats: &ChannelStats) {
    for (c, &v) in stats.var.iter().enumerate() {
        if v == 0.0 {
            log::warn!("batch-norm layer {k}, channel {c}: target variance is 0; epsilon guards the denominator");
        }
    }
}

fn propagate(model: &Model, x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let n = x.batch();
    if n <= PROPAGATE_CHUNK {
        return model.infer_range(x, start, end);
    }
    let parts = (0..n)
        .step_by(PROPAGATE_CHUNK)
        .map(|lo| {
            let idx: Vec<usize> = (lo..(lo + PROPAGATE_CHUNK).min(n)).collect();
            model.infer_range(&x.select(&idx), start, end)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::concat(&parts)
}

/// Returns an aligned copy of `model`. Masked-in layers get target statistics
/// estimated on `target` (augmented for `adabn-aug`); masked-out layers evaluate
/// with their source statistics.
pub fn adabn(model: &Model, target: &Tensor, plan: &AlignmentPlan) -> Result<Model> {
    plan.validate()?;
    if target.batch() == 0 {
        return Err(Error::EmptyDataset("alignment target has no examples".into()));
    }
    let mask = build_layer_mask(model, plan.mask)?;
    let mut aligned = model.clone();
    aligned.clear_caches();
    for k in 0..aligned.bn_count() {
        if !mask.contains(&k) {
            aligned.bn_mut(k).expect("index below bn_count").reset_to_source();
        }
    }
    if mask.is_empty() {
        return Ok(aligned);
    }
    let policy = match plan.mode {
        AlignmentMode::Adabn => None,
        AlignmentMode::AdabnAug => plan.augmentation.as_ref(),
    };
    match plan.estimator {
        StatEstimator::ExactTwoPass => {
            let mut x = match policy {
                Some(p) => augment(target, p, &mut rng::stream(plan.seed, 0))?,
                None => target.clone(),
            };
            infer_check(&aligned, &x)?;
            let positions = aligned.bn_positions();
            let mut at = 0;
            for &k in &mask {
                x = propagate(&aligned, &x, at, positions[k])?;
                at = positions[k];
                let stats = estimate_channel_stats(std::slice::from_ref(&x))?;
                warn_zero_variance(k, &stats);
                aligned.bn_mut(k).expect("mask within bn_count").set_target(stats)?;
            }
        }
        StatEstimator::Ema {
            momentum,
            batch_size,
            passes,
        } => ema_align(&mut aligned, target, &mask, policy, plan.seed, momentum, batch_size, passes)?,
    }
    Ok(aligned)
}

fn infer_check(model: &Model, x: &Tensor) -> Result<()> {
    let s = x.shape();
    if s.len() != 4 || s[1..] != model.input_shape {
        return Err(Error::shape(
            "adabn",
            "target example extent",
            model.input_shape.iter().product(),
            x.example_len(),
        ));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn ema_align(
    model: &mut Model,
    target: &Tensor,
    mask: &BTreeSet<usize>,
    policy: Option<&AugmentationPolicy>,
    seed: u64,
    momentum: f64,
    batch_size: usize,
    passes: usize,
) -> Result<()> {
    infer_check(model, target)?;
    let positions = model.bn_positions();
    let mut running: Vec<Option<ChannelStats>> = (0..positions.len())
        .map(|k| mask.contains(&k).then(|| model.bn(k).expect("k < bn_count").source.clone()))
        .collect();
    let mut shuffle = rng::stream(seed, 1);
    let mut aug_rng = rng::stream(seed, 0);
    let mut order: Vec<usize> = (0..target.batch()).collect();
    for _ in 0..passes {
        order.shuffle(&mut shuffle);
        for batch in order.chunks(batch_size).filter(|b| b.len() >= 2) {
            let mut h = target.select(batch);
            if let Some(p) = policy {
                h = augment(&h, p, &mut aug_rng)?;
            }
            let mut bn_index = 0;
            for layer in &model.layers {
                h = match layer {
                    Layer::BatchNorm(bn) => {
                        let k = bn_index;
                        bn_index += 1;
                        match running[k].as_mut() {
                            Some(run) => {
                                let (y, stats) = bn.normalize_with_batch(&h)?;
                                for c in 0..run.channels() {
                                    run.mean[c] = (1.0 - momentum) * run.mean[c] + momentum * stats.mean[c];
                                    run.var[c] = (1.0 - momentum) * run.var[c] + momentum * stats.var[c];
                                }
                                run.count += stats.count;
                                y
                            }
                            None => bn.forward_eval(&h)?,
                        }
                    }
                    other => other.infer(&h)?,
                };
            }
        }
    }
    for (k, stats) in running.into_iter().enumerate() {
        if let Some(stats) = stats {
            warn_zero_variance(k, &stats);
            model.bn_mut(k).expect("k < bn_count").set_target(stats)?;
        }
    }
    Ok(())
}

/// Aligns only BN layer `k`, from activations that enter it directly.
pub fn align_layer_from_activations(model: &Model, k: usize, activations: &[Tensor]) -> Result<Model> {
    let mut aligned = model.clone();
    let bn = aligned
        .bn_mut(k)
        .ok_or_else(|| Error::Config(format!("no batch-norm layer with index {k}")))?;
    let stats = estimate_channel_stats(activations)?;
    warn_zero_variance(k, &stats);
    bn.set_target(stats)?;
    Ok(aligned)
}

/// Moment-matching map `x̃ = (σ_s/σ_t)(x − μ_t) + μ_s` with stats given as `(mean, variance)`.
pub fn scalar_adabn(x: &[f64], source: (f64, f64), target: (f64, f64)) -> Result<Vec<f64>> {
    if !(target.1 > 0.0) {
        return Err(Error::Degenerate(format!("target variance must be > 0, got {}", target.1)));
    }
    if !(source.1 >= 0.0) {
        return Err(Error::Degenerate(format!("source variance must be >= 0, got {}", source.1)));
    }
    let slope = (source.1 / target.1).sqrt();
    Ok(x.iter().map(|&v| slope * (v - target.0) + source.0).collect())
}
