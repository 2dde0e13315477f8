//! Batch, Group and Instance Normalization.
//!
//! Batch Normalization keeps its statistics in explicit, replaceable
//! [`ChannelStats`] values: the running (source) statistics accumulated during
//! training, and optionally a target replacement installed by alignment.
//! Evaluation always normalizes with whichever of the two is active:
//!
//! ```text
//! y = γ · (x − μ) / √(σ² + ε) + β
//! ```
//!
//! All variances are biased (divide by the slot count), both for training
//! batches and for re-estimation, so the statistic that alignment installs is
//! the same kind of statistic the layer computes in training mode.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// Per-channel mean and (biased) variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Number of example×position slots aggregated per channel.
    pub count: u64,
}

impl ChannelStats {
    pub fn new(mean: Vec<f64>, var: Vec<f64>, count: u64) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::shape("ChannelStats", "variance length", mean.len(), var.len()));
        }
        if let Some(v) = var.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Degenerate(format!("negative or NaN channel variance {v}")));
        }
        Ok(Self { mean, var, count })
    }

    /// Zero mean, unit variance: the state of a freshly initialized layer.
    pub fn standard(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            count: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Largest per-channel gap to `reference`, in units of the reference
    /// standard deviation: max over channels of `|Δμ|/σ_ref` and `|σ − σ_ref|/σ_ref`.
    pub fn max_normalized_gap(&self, reference: &ChannelStats, eps: f64) -> f64 {
        let mut worst = 0.0f64;
        for c in 0..self.channels() {
            let sd_ref = (reference.var[c] + eps).sqrt();
            let sd = (self.var[c] + eps).sqrt();
            worst = worst
                .max((self.mean[c] - reference.mean[c]).abs() / sd_ref)
                .max((sd - sd_ref).abs() / sd_ref);
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &ChannelStats) -> f64 {
        self.mean
            .iter()
            .zip(&other.mean)
            .chain(self.var.iter().zip(&other.var))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Which statistics a Batch Normalization layer evaluates with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActiveStats {
    Source,
    Target(ChannelStats),
}

fn channel_layout(x: &Tensor) -> Result<(usize, usize, usize)> {
    if x.shape().len() < 2 {
        return Err(Error::shape("normalization", "input rank", 2, x.shape().len()));
    }
    Ok((x.batch(), x.channels(), x.spatial()))
}

/// Exact pooled statistics over a dataset presented as one or more activation
/// tensors of identical per-example shape.
///
/// Two-pass (mean, then squared deviations). Values of each channel are summed
/// in sorted order, so the result is bit-identical under any permutation of the
/// examples.
pub fn estimate_channel_stats(parts: &[Tensor]) -> Result<ChannelStats> {
    let first = parts
        .iter()
        .find(|t| t.batch() > 0)
        .ok_or_else(|| Error::EmptyDataset("no activations to estimate channel statistics from".into()))?;
    let (_, c, s) = channel_layout(first)?;
    let total: usize = parts.iter().map(|t| t.batch()).sum();
    let mut mean = Vec::with_capacity(c);
    let mut var = Vec::with_capacity(c);
    let mut values = Vec::with_capacity(total * s);
    for ch in 0..c {
        values.clear();
        for t in parts {
            let (n, tc, ts) = channel_layout(t)?;
            if tc != c || ts != s {
                return Err(Error::shape("estimate_channel_stats", "per-example extent", c * s, tc * ts));
            }
            for i in 0..n {
                let base = (i * c + ch) * s;
                values.extend_from_slice(&t.data()[base..base + s]);
            }
        }
        values.sort_unstable_by(f64::total_cmp);
        let m = values.len() as f64;
        let mu = values.iter().sum::<f64>() / m;
        let v = values.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / m;
        mean.push(mu);
        var.push(v);
    }
    Ok(ChannelStats {
        mean,
        var,
        count: (total * s) as u64,
    })
}

/// Batch statistics of one tensor (no sorting; used inside training steps).
fn batch_stats(x: &Tensor) -> Result<ChannelStats> {
    let (n, c, s) = channel_layout(x)?;
    let m = n * s;
    if m < 2 {
        return Err(Error::DegenerateBatch { channel: 0, slots: m });
    }
    let d = x.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut sum = 0.0;
        for i in 0..n {
            sum += d[(i * c + ch) * s..(i * c + ch + 1) * s].iter().sum::<f64>();
        }
        let mu = sum / m as f64;
        let mut sq = 0.0;
        for i in 0..n {
            sq += d[(i * c + ch) * s..(i * c + ch + 1) * s]
                .iter()
                .map(|v| (v - mu) * (v - mu))
                .sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = sq / m as f64;
    }
    Ok(ChannelStats {
        mean,
        var,
        count: m as u64,
    })
}

#[derive(Debug, Clone)]
struct NormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    /// Slots per normalization group; `None` means statistics were constants.
    group_slots: Option<usize>,
    shape: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Param,
    pub beta: Param,
    /// Running statistics from training.
    pub source: ChannelStats,
    pub active: ActiveStats,
    cache: Option<NormCache>,
}

impl BatchNorm {
    pub fn new(channels: usize, eps: f64, momentum: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::Config(format!("batch-norm epsilon must be > 0, got {eps}")));
        }
        Ok(Self {
            channels,
            eps,
            momentum,
            gamma: Param::new(Tensor::full(&[channels], 1.0), false),
            beta: Param::new(Tensor::zeros(&[channels]), false),
            source: ChannelStats::standard(channels),
            active: ActiveStats::Source,
            cache: None,
        })
    }

    pub fn active_stats(&self) -> &ChannelStats {
        match &self.active {
            ActiveStats::Source => &self.source,
            ActiveStats::Target(t) => t,
        }
    }

    pub fn is_aligned(&self) -> bool {
        matches!(self.active, ActiveStats::Target(_))
    }

    pub fn set_target(&mut self, stats: ChannelStats) -> Result<()> {
        if stats.channels() != self.channels {
            return Err(Error::shape("BatchNorm::set_target", "channel count", self.channels, stats.channels()));
        }
        self.active = ActiveStats::Target(stats);
        Ok(())
    }

    pub fn reset_to_source(&mut self) {
        self.active = ActiveStats::Source;
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let (n, c, s) = channel_layout(x)?;
        if c != self.channels {
            return Err(Error::shape("batch-norm", "channels", self.channels, c));
        }
        Ok((n, c, s))
    }

    fn apply(&self, x: &Tensor, stats: &ChannelStats) -> (Tensor, Vec<f64>, Vec<f64>) {
        let (n, c, s) = (x.batch(), x.channels(), x.spatial());
        let inv: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let g = self.gamma.value.data();
        let b = self.beta.value.data();
        let mut xhat = vec![0.0; x.len()];
        let mut y = x.clone();
        let d = y.data_mut();
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * s;
                for j in base..base + s {
                    let h = (d[j] - stats.mean[ch]) * inv[ch];
                    xhat[j] = h;
                    d[j] = g[ch] * h + b[ch];
                }
            }
        }
        (y, xhat, inv)
    }

    /// Normalizes with batch statistics (training mode) and folds them into the
    /// running source statistics. Returns the output and the batch statistics.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, ChannelStats)> {
        let (n, _, s) = self.check(x)?;
        let stats = batch_stats(x).map_err(|e| match e {
            Error::DegenerateBatch { slots, .. } => Error::DegenerateBatch { channel: 0, slots },
            e => e,
        })?;
        let (y, xhat, inv) = self.apply(x, &stats);
        let m = self.momentum;
        for ch in 0..self.channels {
            self.source.mean[ch] = (1.0 - m) * self.source.mean[ch] + m * stats.mean[ch];
            self.source.var[ch] = (1.0 - m) * self.source.var[ch] + m * stats.var[ch];
        }
        self.source.count += stats.count;
        self.cache = Some(NormCache {
            xhat,
            inv_std: inv,
            group_slots: Some(n * s),
            shape: x.shape().to_vec(),
        });
        Ok((y, stats))
    }

    /// Normalizes with batch statistics without touching any stored statistic.
    pub fn normalize_with_batch(&self, x: &Tensor) -> Result<(Tensor, ChannelStats)> {
        self.check(x)?;
        let stats = batch_stats(x)?;
        let (y, _, _) = self.apply(x, &stats);
        Ok((y, stats))
    }

    /// Evaluation-mode normalization with the active statistics.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        Ok(self.apply(x, self.active_stats()).0)
    }

    /// Evaluation-mode forward that records what backward needs.
    pub fn forward_eval_recorded(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let (y, xhat, inv) = self.apply(x, self.active_stats());
        self.cache = Some(NormCache {
            xhat,
            inv_std: inv,
            group_slots: None,
            shape: x.shape().to_vec(),
        });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("batch-norm backward called before forward".into()))?;
        if dy.shape() != cache.shape.as_slice() {
            return Err(Error::shape("batch-norm backward", "upstream gradient length", cache.xhat.len(), dy.len()));
        }
        let (n, c, s) = (dy.batch(), dy.channels(), dy.spatial());
        let g = self.gamma.value.data().to_vec();
        let dyd = dy.data();
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * s;
                for j in base..base + s {
                    sum_dy[ch] += dyd[j];
                    sum_dy_xhat[ch] += dyd[j] * cache.xhat[j];
                }
            }
        }
        for ch in 0..c {
            self.beta.grad.data_mut()[ch] += sum_dy[ch];
            self.gamma.grad.data_mut()[ch] += sum_dy_xhat[ch];
        }
        let mut dx = vec![0.0; dy.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * s;
                let k = g[ch] * cache.inv_std[ch];
                match cache.group_slots {
                    Some(m) => {
                        let m = m as f64;
                        for j in base..base + s {
                            dx[j] = k / m * (m * dyd[j] - sum_dy[ch] - cache.xhat[j] * sum_dy_xhat[ch]);
                        }
                    }
                    None => {
                        for j in base..base + s {
                            dx[j] = k * dyd[j];
                        }
                    }
                }
            }
        }
        Tensor::new(cache.shape.clone(), dx)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Per-example normalization over groups of channels (all positions in the group).
fn group_normalize(x: &Tensor, groups: usize, gamma: Option<&[f64]>, beta: Option<&[f64]>, eps: f64) -> Result<(Tensor, NormCache)> {
    let (n, c, s) = channel_layout(x)?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::Config(format!("channel count {c} is not divisible by group count {groups}")));
    }
    let cpg = c / groups;
    let m = cpg * s;
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; n * groups];
    let mut y = vec![0.0; x.len()];
    let d = x.data();
    for i in 0..n {
        for g in 0..groups {
            let lo = (i * c + g * cpg) * s;
            let hi = lo + m;
            let mu = d[lo..hi].iter().sum::<f64>() / m as f64;
            let var = d[lo..hi].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i * groups + g] = inv;
            for j in lo..hi {
                let ch = (j / s) % c;
                let h = (d[j] - mu) * inv;
                xhat[j] = h;
                let ga = gamma.map_or(1.0, |g| g[ch]);
                let be = beta.map_or(0.0, |b| b[ch]);
                y[j] = ga * h + be;
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), y)?,
        NormCache {
            xhat,
            inv_std,
            group_slots: Some(m),
            shape: x.shape().to_vec(),
        },
    ))
}

fn group_backward(cache: &NormCache, dy: &Tensor, groups: usize, gamma: Option<&[f64]>, dgamma: Option<&mut [f64]>, dbeta: Option<&mut [f64]>) -> Result<Tensor> {
    if dy.shape() != cache.shape.as_slice() {
        return Err(Error::shape("group-norm backward", "upstream gradient length", cache.xhat.len(), dy.len()));
    }
    let (n, c, s) = (dy.batch(), dy.channels(), dy.spatial());
    let cpg = c / groups;
    let m = (cpg * s) as f64;
    let dyd = dy.data();
    if let (Some(dg), Some(db)) = (dgamma, dbeta) {
        for j in 0..dyd.len() {
            let ch = (j / s) % c;
            dg[ch] += dyd[j] * cache.xhat[j];
            db[ch] += dyd[j];
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for i in 0..n {
        for g in 0..groups {
            let lo = (i * c + g * cpg) * s;
            let hi = lo + cpg * s;
            let mut sum = 0.0;
            let mut sum_x = 0.0;
            for j in lo..hi {
                let ch = (j / s) % c;
                let dxh = dyd[j] * gamma.map_or(1.0, |g| g[ch]);
                sum += dxh;
                sum_x += dxh * cache.xhat[j];
            }
            let inv = cache.inv_std[i * groups + g];
            for j in lo..hi {
                let ch = (j / s) % c;
                let dxh = dyd[j] * gamma.map_or(1.0, |g| g[ch]);
                dx[j] = inv / m * (m * dxh - sum - cache.xhat[j] * sum_x);
            }
        }
    }
    Tensor::new(cache.shape.clone(), dx)
}

/// Stateless group normalization; `gamma`/`beta` are per channel.
pub fn group_norm_forward(input: &Tensor, groups: usize, gamma: &[f64], beta: &[f64], eps: f64) -> Result<Tensor> {
    if gamma.len() != input.channels() || beta.len() != input.channels() {
        return Err(Error::shape("group-norm", "affine length", input.channels(), gamma.len()));
    }
    group_normalize(input, groups, Some(gamma), Some(beta), eps).map(|(y, _)| y)
}

/// Stateless instance normalization (one group per channel), optional affine.
pub fn instance_norm_forward(input: &Tensor, gamma: Option<&[f64]>, beta: Option<&[f64]>, eps: f64) -> Result<Tensor> {
    let c = input.channels();
    for a in [gamma, beta].into_iter().flatten() {
        if a.len() != c {
            return Err(Error::shape("instance-norm", "affine length", c, a.len()));
        }
    }
    group_normalize(input, c, gamma, beta, eps).map(|(y, _)| y)
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub channels: usize,
    pub groups: usize,
    pub eps: f64,
    pub gamma: Param,
    pub beta: Param,
    cache: Option<NormCache>,
}

impl GroupNorm {
    pub fn new(channels: usize, groups: usize, eps: f64) -> Result<Self> {
        if groups == 0 || !channels.is_multiple_of(groups) {
            return Err(Error::Config(format!("channel count {channels} is not divisible by group count {groups}")));
        }
        Ok(Self {
            channels,
            groups,
            eps,
            gamma: Param::new(Tensor::full(&[channels], 1.0), false),
            beta: Param::new(Tensor::zeros(&[channels]), false),
            cache: None,
        })
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        group_norm_forward(x, self.groups, self.gamma.value.data(), self.beta.value.data(), self.eps)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.channels() != self.channels {
            return Err(Error::shape("group-norm", "channels", self.channels, x.channels()));
        }
        let (y, cache) = group_normalize(x, self.groups, Some(self.gamma.value.data()), Some(self.beta.value.data()), self.eps)?;
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("group-norm backward called before forward".into()))?;
        let gamma = self.gamma.value.data().to_vec();
        group_backward(cache, dy, self.groups, Some(&gamma), Some(self.gamma.grad.data_mut()), Some(self.beta.grad.data_mut()))
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[derive(Debug, Clone)]
pub struct InstanceNorm {
    pub channels: usize,
    pub eps: f64,
    /// `(gamma, beta)` when the layer has learned affine parameters.
    pub affine: Option<(Param, Param)>,
    cache: Option<NormCache>,
}

impl InstanceNorm {
    pub fn new(channels: usize, affine: bool, eps: f64) -> Self {
        Self {
            channels,
            eps,
            affine: affine.then(|| {
                (
                    Param::new(Tensor::full(&[channels], 1.0), false),
                    Param::new(Tensor::zeros(&[channels]), false),
                )
            }),
            cache: None,
        }
    }

    fn affine_slices(&self) -> (Option<&[f64]>, Option<&[f64]>) {
        match &self.affine {
            Some((g, b)) => (Some(g.value.data()), Some(b.value.data())),
            None => (None, None),
        }
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let (g, b) = self.affine_slices();
        instance_norm_forward(x, g, b, self.eps)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.channels() != self.channels {
            return Err(Error::shape("instance-norm", "channels", self.channels, x.channels()));
        }
        let (g, b) = self.affine_slices();
        let (y, cache) = group_normalize(x, self.channels, g, b, self.eps)?;
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("instance-norm backward called before forward".into()))?;
        match self.affine.as_mut() {
            Some((g, b)) => {
                let gamma = g.value.data().to_vec();
                group_backward(cache, dy, self.channels, Some(&gamma), Some(g.grad.data_mut()), Some(b.grad.data_mut()))
            }
            None => group_backward(cache, dy, self.channels, None, None, None),
        }
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bn(channels: usize, eps: f64) -> BatchNorm {
        BatchNorm::new(channels, eps, DEFAULT_MOMENTUM).unwrap()
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let mut layer = bn(1, DEFAULT_EPS);
        let x = Tensor::full(&[3, 1, 2, 2], 3.5);
        let (y, stats) = layer.forward_train(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(stats.mean, vec![3.5]);
        assert_eq!(stats.var, vec![0.0]);
    }

    #[test]
    fn two_slot_channel_hand_values() {
        let mut layer = bn(1, 1e-14);
        let x = Tensor::new(vec![2, 1], vec![2.0, 4.0]).unwrap();
        let (y, stats) = layer.forward_train(&x).unwrap();
        assert_eq!((stats.mean[0], stats.var[0]), (3.0, 1.0));
        assert!((y.data()[0] + 1.0).abs() < 1e-10);
        assert!((y.data()[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn single_slot_is_degenerate() {
        let mut layer = bn(2, DEFAULT_EPS);
        let x = Tensor::zeros(&[1, 2]);
        assert!(matches!(layer.forward_train(&x), Err(Error::DegenerateBatch { slots: 1, .. })));
    }

    #[test]
    fn standardized_input_passes_through_affine() {
        let mut layer = bn(1, 1e-14);
        layer.gamma.value.data_mut()[0] = 1.7;
        layer.beta.value.data_mut()[0] = -0.3;
        let x = Tensor::new(vec![4, 1], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        let (y, _) = layer.forward_train(&x).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - (1.7 * b - 0.3)).abs() < 1e-10);
        }
    }

    #[test]
    fn eval_direct_formula() {
        let mut layer = bn(1, 1e-14);
        layer.source = ChannelStats::new(vec![4.0], vec![1.0], 1).unwrap();
        let y = layer.forward_eval(&Tensor::full(&[1, 1], 2.0)).unwrap();
        assert!((y.data()[0] + 2.0).abs() < 1e-10);
    }

    #[test]
    fn eval_with_batch_stats_matches_train_output() {
        let x = Tensor::from_fn(&[3, 2, 2, 2], |i| ((i * 7919) % 13) as f64 * 0.37 - 1.1);
        let mut layer = bn(2, DEFAULT_EPS);
        layer.gamma.value.data_mut().copy_from_slice(&[0.5, 2.0]);
        let (y_train, stats) = layer.forward_train(&x).unwrap();
        layer.set_target(stats).unwrap();
        let y_eval = layer.forward_eval(&x).unwrap();
        assert!(y_train.max_abs_diff(&y_eval) < 1e-10);
    }

    #[test]
    fn target_stats_with_source_affine_realize_mean_variance_matching() {
        // x̃ = (σ_s/σ_t)(x − μ_t) + μ_s
        let (mu_s, var_s, mu_t, var_t) = (4.0, 1.0, 2.0, 0.5);
        let mut layer = bn(1, 1e-14);
        layer.gamma.value.data_mut()[0] = f64::sqrt(var_s);
        layer.beta.value.data_mut()[0] = mu_s;
        layer.set_target(ChannelStats::new(vec![mu_t], vec![var_t], 1).unwrap()).unwrap();
        let x = Tensor::new(vec![3, 1], vec![0.0, 2.0, 3.5]).unwrap();
        let y = layer.forward_eval(&x).unwrap();
        for (a, &v) in y.data().iter().zip(x.data()) {
            let expect = (var_s / var_t).sqrt() * (v - mu_t) + mu_s;
            assert!((a - expect).abs() < 1e-10);
        }
        assert!((y.data()[0] - (2f64.sqrt() * -2.0 + 4.0)).abs() < 1e-10);
    }

    #[test]
    fn eval_is_affine_per_channel() {
        let mut layer = bn(2, DEFAULT_EPS);
        layer.source = ChannelStats::new(vec![0.3, -1.0], vec![2.0, 0.25], 1).unwrap();
        layer.gamma.value.data_mut().copy_from_slice(&[1.3, -0.4]);
        layer.beta.value.data_mut().copy_from_slice(&[0.1, 0.2]);
        // Two-point linearity: f(x) = f(0) + x·(f(1) − f(0)).
        let at = |v: f64| layer.forward_eval(&Tensor::full(&[1, 2], v)).unwrap();
        let (f0, f1, f5) = (at(0.0), at(1.0), at(5.0));
        for c in 0..2 {
            let pred = f0.data()[c] + 5.0 * (f1.data()[c] - f0.data()[c]);
            assert!((pred - f5.data()[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn group_norm_hand_values_and_divisibility() {
        let x = Tensor::new(vec![1, 1, 1, 2], vec![0.0, 2.0]).unwrap();
        let y = group_norm_forward(&x, 1, &[1.0], &[0.0], 1e-14).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-10 && (y.data()[1] - 1.0).abs() < 1e-10);
        let x = Tensor::zeros(&[1, 6, 2, 2]);
        assert!(matches!(group_norm_forward(&x, 4, &[1.0; 6], &[0.0; 6], 1e-5), Err(Error::Config(_))));
        assert!(GroupNorm::new(6, 4, 1e-5).is_err());
    }

    #[test]
    fn group_norm_with_one_group_per_channel_is_instance_norm() {
        let x = Tensor::from_fn(&[2, 3, 2, 3], |i| ((i * 31) % 17) as f64 / 5.0);
        let g = [0.5, 1.5, -1.0];
        let b = [0.0, 0.2, 1.0];
        let a = group_norm_forward(&x, 3, &g, &b, 1e-5).unwrap();
        let i = instance_norm_forward(&x, Some(&g), Some(&b), 1e-5).unwrap();
        assert_eq!(a, i);
    }

    #[test]
    fn group_norm_single_group_is_per_example_layer_norm() {
        let x = Tensor::from_fn(&[2, 2, 2, 2], |i| (i as f64).powi(2) / 10.0);
        let y = group_norm_forward(&x, 1, &[1.0, 1.0], &[0.0, 0.0], 1e-5).unwrap();
        for n in 0..2 {
            let e = x.example(n);
            let mu = e.iter().sum::<f64>() / 8.0;
            let var = e.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 8.0;
            for (o, v) in y.example(n).iter().zip(e) {
                assert!((o - (v - mu) / (var + 1e-5).sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stats_of_all_zero_dataset() {
        let s = estimate_channel_stats(&[Tensor::zeros(&[4, 2, 3, 3])]).unwrap();
        assert_eq!(s.mean, vec![0.0, 0.0]);
        assert_eq!(s.var, vec![0.0, 0.0]);
        assert_eq!(s.count, 36);
    }

    #[test]
    fn stats_of_empty_dataset_is_error() {
        assert!(matches!(estimate_channel_stats(&[]), Err(Error::EmptyDataset(_))));
        assert!(matches!(estimate_channel_stats(&[Tensor::zeros(&[0, 2, 1, 1])]), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn two_coordinate_toy_image_pooled_mean() {
        // x1 = 4 + 2y + z with antithetic pairs, x2 ≡ 0, laid out as a 1×1×2 "image".
        let mut data = Vec::new();
        for k in 0..200 {
            let z = ((k * 37) % 101) as f64 / 50.0 - 1.0;
            for (y, zz) in [(1.0, z), (-1.0, -z)] {
                data.push(4.0 + 2.0 * y + zz);
                data.push(0.0);
            }
        }
        let t = Tensor::new(vec![400, 1, 1, 2], data).unwrap();
        let s = estimate_channel_stats(&[t]).unwrap();
        assert!((s.mean[0] - 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn train_mode_output_is_standardized(seed in 0u64..1000, n in 2usize..6, scale in 0.5f64..20.0, shift in -10.0f64..10.0) {
            let mut r = crate::rng::seeded(seed);
            use rand::Rng as _;
            let x = Tensor::from_fn(&[n, 3, 2, 2], |_| shift + scale * r.random_range(-1.0..1.0));
            let mut layer = bn(3, DEFAULT_EPS);
            let (y, stats) = layer.forward_train(&x).unwrap();
            for c in 0..3 {
                if stats.var[c] <= 100.0 * DEFAULT_EPS { continue; }
                let vals: Vec<f64> = (0..n).flat_map(|i| y.example(i)[c * 4..c * 4 + 4].to_vec()).collect();
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
                // pre-affine output (γ = 1, β = 0): variance is σ²/(σ²+ε)
                prop_assert!(m.abs() < 1e-10);
                prop_assert!((v * (stats.var[c] + DEFAULT_EPS) / stats.var[c] - 1.0).abs() < 1e-8);
            }
        }

        #[test]
        fn instance_norm_invariant_to_positive_affine(seed in 0u64..1000, a in 0.1f64..10.0, b in -5.0f64..5.0) {
            use rand::Rng as _;
            let mut r = crate::rng::seeded(seed);
            let x = Tensor::from_fn(&[2, 2, 3, 3], |_| r.random_range(-1.0..1.0));
            let shifted = x.map(|v| a * v + b);
            let y0 = instance_norm_forward(&x, None, None, 0.0).unwrap();
            let y1 = instance_norm_forward(&shifted, None, None, 0.0).unwrap();
            prop_assert!(y0.max_abs_diff(&y1) < 1e-10);
        }

        #[test]
        fn channel_stats_are_permutation_invariant(seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::Rng as _;
            let mut r = crate::rng::seeded(seed);
            let x = Tensor::from_fn(&[12, 2, 2, 2], |_| r.random_range(-3.0..3.0));
            let mut idx: Vec<usize> = (0..12).collect();
            idx.shuffle(&mut r);
            let a = estimate_channel_stats(std::slice::from_ref(&x)).unwrap();
            let perm = x.select(&idx);
            let b = estimate_channel_stats(&[perm.select(&(0..5).collect::<Vec<_>>()), perm.select(&(5..12).collect::<Vec<_>>())]).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
