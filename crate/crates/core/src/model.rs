//! Sequential models and the reference architecture used by the experiments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Layer, LayerSpec, Mode, Param};
use crate::norm::{BatchNorm, DEFAULT_EPS, DEFAULT_MOMENTUM};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Ordered layer stack producing `[N, classes]` logits from `[N, C, H, W]` images.
#[derive(Debug, Clone)]
pub struct Model {
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub layers: Vec<Layer>,
    forwarded: bool,
}

impl Model {
    /// Builds a model from layer specs, checking shapes by tracing a dummy batch.
    pub fn from_specs(input_shape: [usize; 3], num_classes: usize, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = rng::seeded(seed);
        let layers = specs.iter().map(|s| s.build(&mut rng)).collect::<Result<Vec<_>>>()?;
        Self::from_layers(input_shape, num_classes, layers)
    }

    pub fn from_layers(input_shape: [usize; 3], num_classes: usize, layers: Vec<Layer>) -> Result<Self> {
        let model = Self {
            input_shape,
            num_classes,
            layers,
            forwarded: false,
        };
        let probe = Tensor::zeros(&[2, input_shape[0], input_shape[1], input_shape[2]]);
        let out = model.infer(&probe)?;
        if out.example_len() != num_classes {
            return Err(Error::shape("Model", "output classes", num_classes, out.example_len()));
        }
        Ok(model)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[1..] != self.input_shape {
            return Err(Error::shape(
                "Model",
                "input example extent",
                self.input_shape.iter().product(),
                x.example_len(),
            ));
        }
        Ok(())
    }

    /// Evaluation-mode logits; never mutates the model.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        self.infer_range(x, 0, self.layers.len())
    }

    /// Runs layers `[start, end)` in evaluation mode.
    pub fn infer_range(&self, x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers[start..end] {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    /// Activations entering layer `index`, in evaluation mode.
    pub fn infer_until(&self, x: &Tensor, index: usize) -> Result<Tensor> {
        self.check_input(x)?;
        self.infer_range(x, 0, index)
    }

    /// Evaluation-mode logits computed in chunks of `chunk` examples.
    pub fn infer_batched(&self, x: &Tensor, chunk: usize) -> Result<Tensor> {
        let n = x.batch();
        let mut parts = Vec::new();
        for lo in (0..n).step_by(chunk.max(1)) {
            let idx: Vec<usize> = (lo..(lo + chunk).min(n)).collect();
            parts.push(self.infer(&x.select(&idx))?);
        }
        if parts.is_empty() {
            return Ok(Tensor::zeros(&[0, self.num_classes]));
        }
        Tensor::concat(&parts)
    }

    /// Forward pass that records caches for [`Model::backward`].
    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, mode, rng)?;
        }
        self.forwarded = true;
        Ok(h)
    }

    /// Backpropagates `dlogits`, accumulating into every parameter's gradient.
    /// Returns the gradient with respect to the input.
    pub fn backward(&mut self, dlogits: &Tensor) -> Result<Tensor> {
        if !self.forwarded {
            return Err(Error::Usage("backward called before forward".into()));
        }
        let mut g = dlogits.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
        self.forwarded = false;
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Positions (in `layers`) of the Batch Normalization layers, in depth order.
    pub fn bn_positions(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.as_batch_norm().map(|_| i))
            .collect()
    }

    pub fn bn_count(&self) -> usize {
        self.bn_positions().len()
    }

    /// The `k`-th Batch Normalization layer by depth.
    pub fn bn(&self, k: usize) -> Option<&BatchNorm> {
        self.layers.iter().filter_map(Layer::as_batch_norm).nth(k)
    }

    pub fn bn_mut(&mut self, k: usize) -> Option<&mut BatchNorm> {
        self.layers.iter_mut().filter_map(Layer::as_batch_norm_mut).nth(k)
    }

    pub fn set_bn_epsilon(&mut self, eps: f64) {
        for l in self.layers.iter_mut().filter_map(Layer::as_batch_norm_mut) {
            l.eps = eps;
        }
    }
}

/// Normalization used in the convolutional blocks of [`Architecture`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum NormKind {
    Batch,
    Group { groups: usize },
    Instance { affine: bool },
    None,
}

/// Small CNN: `conv3×3 → norm → ReLU` blocks with 2×2 max pooling between
/// them, global average pooling, an optional hidden dense layer (optionally
/// batch-normed), dropout, and the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub norm: NormKind,
    pub widths: Vec<usize>,
    pub hidden: usize,
    /// Average the final feature maps globally before the dense head; otherwise
    /// the head sees every spatial position.
    pub global_pool: bool,
    /// Batch-normalize the hidden dense layer (only with `norm = Batch`).
    pub hidden_norm: bool,
    pub dropout: f64,
    pub conv_bias: bool,
    pub eps: f64,
    pub momentum: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            norm: NormKind::Batch,
            widths: vec![8, 16, 32, 32],
            hidden: 32,
            global_pool: true,
            hidden_norm: false,
            dropout: 0.1,
            conv_bias: false,
            eps: DEFAULT_EPS,
            momentum: DEFAULT_MOMENTUM,
        }
    }
}

impl Architecture {
    pub fn layer_specs(&self, input_shape: [usize; 3], classes: usize) -> Result<Vec<LayerSpec>> {
        if self.widths.is_empty() {
            return Err(Error::Config("architecture needs at least one convolutional block".into()));
        }
        let mut specs = Vec::new();
        let mut ch = input_shape[0];
        let (mut h, mut w) = (input_shape[1], input_shape[2]);
        for (i, &width) in self.widths.iter().enumerate() {
            specs.push(LayerSpec::Conv2d {
                in_channels: ch,
                out_channels: width,
                kernel: 3,
                stride: 1,
                padding: 1,
                bias: self.conv_bias,
            });
            match self.norm {
                NormKind::Batch => specs.push(LayerSpec::BatchNorm {
                    channels: width,
                    eps: self.eps,
                    momentum: self.momentum,
                }),
                NormKind::Group { groups } => specs.push(LayerSpec::GroupNorm {
                    channels: width,
                    groups,
                    eps: self.eps,
                }),
                NormKind::Instance { affine } => specs.push(LayerSpec::InstanceNorm {
                    channels: width,
                    affine,
                    eps: self.eps,
                }),
                NormKind::None => {}
            }
            specs.push(LayerSpec::Relu);
            if i + 1 < self.widths.len() {
                if h < 2 || w < 2 {
                    return Err(Error::Config(format!("image too small for {} pooling stages", self.widths.len() - 1)));
                }
                specs.push(LayerSpec::MaxPool { window: 2, stride: 2 });
                h /= 2;
                w /= 2;
            }
            ch = width;
        }
        let mut features = ch * h * w;
        if self.global_pool {
            if h != w {
                return Err(Error::Config("global pooling requires square feature maps".into()));
            }
            specs.push(LayerSpec::AvgPool { window: h, stride: h });
            features = ch;
        }
        specs.push(LayerSpec::Flatten);
        if self.hidden > 0 {
            specs.push(LayerSpec::Dense {
                inputs: features,
                outputs: self.hidden,
            });
            if self.hidden_norm && self.norm == NormKind::Batch {
                specs.push(LayerSpec::BatchNorm {
                    channels: self.hidden,
                    eps: self.eps,
                    momentum: self.momentum,
                });
            }
            specs.push(LayerSpec::Relu);
            features = self.hidden;
        }
        if self.dropout > 0.0 {
            specs.push(LayerSpec::Dropout { rate: self.dropout });
        }
        specs.push(LayerSpec::Dense {
            inputs: features,
            outputs: classes,
        });
        Ok(specs)
    }

    pub fn build(&self, input_shape: [usize; 3], classes: usize, seed: u64) -> Result<Model> {
        Model::from_specs(input_shape, classes, &self.layer_specs(input_shape, classes)?, seed)
    }
}
