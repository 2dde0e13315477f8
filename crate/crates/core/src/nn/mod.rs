//! Layer stack primitives with forward and backward passes.
//!
//! Each [`Layer`] supports three entry points:
//! - `infer`: evaluation semantics on `&self`, records nothing;
//! - `forward`: records what `backward` needs (training or evaluation mode);
//! - `backward`: consumes the upstream gradient, accumulates parameter
//!   gradients, returns the gradient with respect to the layer input.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod pool;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use activation::{relu, softmax, softmax_cross_entropy, Dropout, Flatten, Relu};
pub use conv::{conv2d_forward, Conv2d};
pub use dense::{dense_forward, Dense};
pub use pool::{pool_forward, Pool2d, PoolKind};

use crate::error::{Error, Result};
use crate::norm::{BatchNorm, GroupNorm, InstanceNorm, DEFAULT_EPS, DEFAULT_MOMENTUM};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    /// Whether weight decay applies.
    pub decay: bool,
}

impl Param {
    pub fn new(value: Tensor, decay: bool) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad, decay }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-stat updates, dropout active.
    Train,
    /// Active statistics, no dropout.
    Eval,
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}

fn default_momentum() -> f64 {
    DEFAULT_MOMENTUM
}

/// Declarative description of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default)]
        bias: bool,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    AvgPool {
        window: usize,
        stride: usize,
    },
    BatchNorm {
        channels: usize,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
    GroupNorm {
        channels: usize,
        groups: usize,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    InstanceNorm {
        channels: usize,
        #[serde(default)]
        affine: bool,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Flatten,
    Dropout {
        rate: f64,
    },
}

fn one() -> usize {
    1
}

fn he_normal(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let sd = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    })
}

impl LayerSpec {
    /// Builds the layer with He-normal weights and zero biases.
    pub fn build(&self, rng: &mut Rng) -> Result<Layer> {
        Ok(match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                bias,
            } => {
                if stride == 0 || kernel == 0 {
                    return Err(Error::Config("conv2d kernel and stride must be >= 1".into()));
                }
                let w = he_normal(&[out_channels, in_channels, kernel, kernel], in_channels * kernel * kernel, rng);
                Layer::Conv2d(Conv2d::new(
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    w,
                    bias.then(|| Tensor::zeros(&[out_channels])),
                ))
            }
            LayerSpec::Dense { inputs, outputs } => {
                let w = he_normal(&[outputs, inputs], inputs, rng);
                Layer::Dense(Dense::new(inputs, outputs, w, Tensor::zeros(&[outputs])))
            }
            LayerSpec::Relu => Layer::Relu(Relu::default()),
            LayerSpec::MaxPool { window, stride } => Layer::Pool(Pool2d::new(PoolKind::Max, window, stride)),
            LayerSpec::AvgPool { window, stride } => Layer::Pool(Pool2d::new(PoolKind::Avg, window, stride)),
            LayerSpec::BatchNorm { channels, eps, momentum } => Layer::BatchNorm(BatchNorm::new(channels, eps, momentum)?),
            LayerSpec::GroupNorm { channels, groups, eps } => Layer::GroupNorm(GroupNorm::new(channels, groups, eps)?),
            LayerSpec::InstanceNorm { channels, affine, eps } => Layer::InstanceNorm(InstanceNorm::new(channels, affine, eps)),
            LayerSpec::Flatten => Layer::Flatten(Flatten::default()),
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
                }
                Layer::Dropout(Dropout::new(rate))
            }
        })
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d(Conv2d),
    Dense(Dense),
    Relu(Relu),
    Pool(Pool2d),
    BatchNorm(BatchNorm),
    GroupNorm(GroupNorm),
    InstanceNorm(InstanceNorm),
    Flatten(Flatten),
    Dropout(Dropout),
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv2d(c) => LayerSpec::Conv2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
                stride: c.stride,
                padding: c.padding,
                bias: c.bias.is_some(),
            },
            Layer::Dense(d) => LayerSpec::Dense {
                inputs: d.inputs,
                outputs: d.outputs,
            },
            Layer::Relu(_) => LayerSpec::Relu,
            Layer::Pool(p) => match p.kind {
                PoolKind::Max => LayerSpec::MaxPool {
                    window: p.window,
                    stride: p.stride,
                },
                PoolKind::Avg => LayerSpec::AvgPool {
                    window: p.window,
                    stride: p.stride,
                },
            },
            Layer::BatchNorm(b) => LayerSpec::BatchNorm {
                channels: b.channels,
                eps: b.eps,
                momentum: b.momentum,
            },
            Layer::GroupNorm(g) => LayerSpec::GroupNorm {
                channels: g.channels,
                groups: g.groups,
                eps: g.eps,
            },
            Layer::InstanceNorm(i) => LayerSpec::InstanceNorm {
                channels: i.channels,
                affine: i.affine.is_some(),
                eps: i.eps,
            },
            Layer::Flatten(_) => LayerSpec::Flatten,
            Layer::Dropout(d) => LayerSpec::Dropout { rate: d.rate },
        }
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.infer(x),
            Layer::Dense(l) => l.infer(x),
            Layer::Relu(_) => Ok(relu(x)),
            Layer::Pool(l) => l.infer(x),
            Layer::BatchNorm(l) => l.forward_eval(x),
            Layer::GroupNorm(l) => l.infer(x),
            Layer::InstanceNorm(l) => l.infer(x),
            Layer::Flatten(l) => l.infer(x),
            Layer::Dropout(_) => Ok(x.clone()),
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.forward(x),
            Layer::Dense(l) => l.forward(x),
            Layer::Relu(l) => Ok(l.forward(x)),
            Layer::Pool(l) => l.forward(x),
            Layer::BatchNorm(l) => match mode {
                Mode::Train => l.forward_train(x).map(|(y, _)| y),
                Mode::Eval => l.forward_eval_recorded(x),
            },
            Layer::GroupNorm(l) => l.forward(x),
            Layer::InstanceNorm(l) => l.forward(x),
            Layer::Flatten(l) => l.forward(x),
            Layer::Dropout(l) => Ok(l.forward(x, mode == Mode::Train, rng)),
        }
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.backward(dy),
            Layer::Dense(l) => l.backward(dy),
            Layer::Relu(l) => l.backward(dy),
            Layer::Pool(l) => l.backward(dy),
            Layer::BatchNorm(l) => l.backward(dy),
            Layer::GroupNorm(l) => l.backward(dy),
            Layer::InstanceNorm(l) => l.backward(dy),
            Layer::Flatten(l) => l.backward(dy),
            Layer::Dropout(l) => l.backward(dy),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv2d(l) => std::iter::once(&l.weight).chain(l.bias.as_ref()).collect(),
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta],
            Layer::GroupNorm(l) => vec![&l.gamma, &l.beta],
            Layer::InstanceNorm(l) => l.affine.as_ref().map(|(g, b)| vec![g, b]).unwrap_or_default(),
            Layer::Relu(_) | Layer::Pool(_) | Layer::Flatten(_) | Layer::Dropout(_) => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv2d(l) => std::iter::once(&mut l.weight).chain(l.bias.as_mut()).collect(),
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::GroupNorm(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::InstanceNorm(l) => l.affine.as_mut().map(|(g, b)| vec![g, b]).unwrap_or_default(),
            Layer::Relu(_) | Layer::Pool(_) | Layer::Flatten(_) | Layer::Dropout(_) => vec![],
        }
    }

    pub fn as_batch_norm(&self) -> Option<&BatchNorm> {
        match self {
            Layer::BatchNorm(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_batch_norm_mut(&mut self) -> Option<&mut BatchNorm> {
        match self {
            Layer::BatchNorm(b) => Some(b),
            _ => None,
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv2d(l) => l.clear_cache(),
            Layer::Dense(l) => l.clear_cache(),
            Layer::Relu(l) => l.clear_cache(),
            Layer::Pool(l) => l.clear_cache(),
            Layer::BatchNorm(l) => l.clear_cache(),
            Layer::GroupNorm(l) => l.clear_cache(),
            Layer::InstanceNorm(l) => l.clear_cache(),
            Layer::Flatten(l) => l.clear_cache(),
            Layer::Dropout(l) => l.clear_cache(),
        }
    }
}
