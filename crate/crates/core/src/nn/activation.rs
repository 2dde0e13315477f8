use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Row-wise softmax of `[N, K]` logits.
pub fn softmax(logits: &Tensor) -> Tensor {
    let k = logits.example_len();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k.max(1)) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

/// Mean cross-entropy of softmax(logits) against `labels`, and its gradient
/// with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let n = logits.batch();
    let k = logits.example_len();
    if labels.len() != n {
        return Err(Error::shape("softmax_cross_entropy", "label count", n, labels.len()));
    }
    let mut probs = softmax(logits);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::shape("softmax_cross_entropy", "label index bound", k, y + 1));
        }
        let row = probs.example_mut(i);
        loss -= row[y].max(f64::MIN_POSITIVE).ln();
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok((loss / n as f64, probs))
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.mask = Some(x.data().iter().map(|&v| v > 0.0).collect());
        relu(x)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .as_ref()
            .ok_or_else(|| Error::Usage("relu backward called before forward".into()))?;
        if mask.len() != dy.len() {
            return Err(Error::shape("relu backward", "upstream gradient length", mask.len(), dy.len()));
        }
        let mut dx = dy.clone();
        for (d, &m) in dx.data_mut().iter_mut().zip(mask) {
            if !m {
                *d = 0.0;
            }
        }
        Ok(dx)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.mask = None;
    }
}

#[derive(Debug, Clone, Default)]
pub struct Flatten {
    in_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        x.clone().reshape(vec![x.batch(), x.example_len()])
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.in_shape = Some(x.shape().to_vec());
        self.infer(x)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let shape = self
            .in_shape
            .clone()
            .ok_or_else(|| Error::Usage("flatten backward called before forward".into()))?;
        dy.clone().reshape(shape)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.in_shape = None;
    }
}

/// Inverted dropout: active only in training mode, scales kept units by 1/(1−p).
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(rate: f64) -> Self {
        Self { rate, mask: None }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool, rng: &mut Rng) -> Tensor {
        if !train || self.rate == 0.0 {
            self.mask = Some(vec![1.0; x.len()]);
            return x.clone();
        }
        let keep = 1.0 - self.rate;
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mut y = x.clone();
        for (v, m) in y.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.mask = Some(mask);
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .as_ref()
            .ok_or_else(|| Error::Usage("dropout backward called before forward".into()))?;
        let mut dx = dy.clone();
        for (v, m) in dx.data_mut().iter_mut().zip(mask) {
            *v *= m;
        }
        Ok(dx)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.mask = None;
    }
}
