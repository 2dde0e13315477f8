use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolKind {
    Max,
    Avg,
}

fn out_extent(input: &[usize], window: usize, stride: usize) -> Result<(usize, usize, usize, usize, usize, usize)> {
    if input.len() != 4 {
        return Err(Error::shape("pool", "input rank", 4, input.len()));
    }
    if window == 0 || stride == 0 {
        return Err(Error::Config("pool window and stride must be >= 1".into()));
    }
    let (n, c, h, w) = (input[0], input[1], input[2], input[3]);
    if window > h {
        return Err(Error::shape("pool", "height (window larger than extent)", window, h));
    }
    if window > w {
        return Err(Error::shape("pool", "width (window larger than extent)", window, w));
    }
    Ok((n, c, h, w, (h - window) / stride + 1, (w - window) / stride + 1))
}

/// Returns the pooled tensor and, for max pooling, the flat input index of
/// each selected element (first maximum wins on ties).
fn pool(input: &Tensor, kind: PoolKind, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w, ho, wo) = out_extent(input.shape(), window, stride)?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::new();
    let area = (window * window) as f64;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let (y0, x0) = (oy * stride, ox * stride);
                match kind {
                    PoolKind::Max => {
                        let mut best = base + y0 * w + x0;
                        for dy in 0..window {
                            for dx in 0..window {
                                let idx = base + (y0 + dy) * w + x0 + dx;
                                if x[idx] > x[best] {
                                    best = idx;
                                }
                            }
                        }
                        out.push(x[best]);
                        argmax.push(best);
                    }
                    PoolKind::Avg => {
                        let mut s = 0.0;
                        for dy in 0..window {
                            for dx in 0..window {
                                s += x[base + (y0 + dy) * w + x0 + dx];
                            }
                        }
                        out.push(s / area);
                    }
                }
            }
        }
    }
    Ok((Tensor::new(vec![n, c, ho, wo], out)?, argmax))
}

pub fn pool_forward(input: &Tensor, kind: PoolKind, window: usize, stride: usize) -> Result<Tensor> {
    pool(input, kind, window, stride).map(|(t, _)| t)
}

#[derive(Debug, Clone)]
struct Cache {
    in_shape: Vec<usize>,
    argmax: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Pool2d {
    pub kind: PoolKind,
    pub window: usize,
    pub stride: usize,
    cache: Option<Cache>,
}

impl Pool2d {
    pub fn new(kind: PoolKind, window: usize, stride: usize) -> Self {
        Self {
            kind,
            window,
            stride,
            cache: None,
        }
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        pool_forward(x, self.kind, self.window, self.stride)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (y, argmax) = pool(x, self.kind, self.window, self.stride)?;
        self.cache = Some(Cache {
            in_shape: x.shape().to_vec(),
            argmax,
        });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("pool backward called before forward".into()))?;
        let mut dx = Tensor::zeros(&cache.in_shape);
        match self.kind {
            PoolKind::Max => {
                if dy.len() != cache.argmax.len() {
                    return Err(Error::shape("pool backward", "upstream gradient length", cache.argmax.len(), dy.len()));
                }
                let d = dx.data_mut();
                for (&idx, &g) in cache.argmax.iter().zip(dy.data()) {
                    d[idx] += g;
                }
            }
            PoolKind::Avg => {
                let (n, c, h, w, ho, wo) = out_extent(&cache.in_shape, self.window, self.stride)?;
                if dy.len() != n * c * ho * wo {
                    return Err(Error::shape("pool backward", "upstream gradient length", n * c * ho * wo, dy.len()));
                }
                let area = (self.window * self.window) as f64;
                let d = dx.data_mut();
                let g = dy.data();
                for plane in 0..n * c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let v = g[(plane * ho + oy) * wo + ox] / area;
                            for ky in 0..self.window {
                                for kx in 0..self.window {
                                    d[plane * h * w + (oy * self.stride + ky) * w + ox * self.stride + kx] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(dx)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}
