//! 2-D convolution (cross-correlation, no kernel flip) via per-example im2col.

use rayon::prelude::*;

use super::Param;
use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_at, matmul_bt_acc, Tensor};

/// Examples per work item. Fixed so reductions do not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl Geometry {
    pub fn new(input: &[usize], k: usize, stride: usize, pad: usize) -> Result<Self> {
        if input.len() != 4 {
            return Err(Error::shape("conv2d", "input rank", 4, input.len()));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be >= 1".into()));
        }
        let (c, h, w) = (input[1], input[2], input[3]);
        if h + 2 * pad < k {
            return Err(Error::shape("conv2d", "padded height", k, h + 2 * pad));
        }
        if w + 2 * pad < k {
            return Err(Error::shape("conv2d", "padded width", k, w + 2 * pad));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Ok(Self { c, h, w, k, stride, pad, ho, wo })
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Columns matrix `[c·k·k, ho·wo]` for one example.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let p = self.positions();
        let mut cols = vec![0.0; self.rows() * p];
        for c in 0..self.c {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < self.w {
                                dst[oy * self.wo + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.c {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < self.w {
                                plane[iy as usize * self.w + ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_weights(g: &Geometry, weights: &Tensor, bias: Option<&[f64]>) -> Result<usize> {
    let ws = weights.shape();
    if ws.len() != 4 {
        return Err(Error::shape("conv2d", "weight rank", 4, ws.len()));
    }
    if ws[1] != g.c {
        return Err(Error::shape("conv2d", "input channels", ws[1], g.c));
    }
    if ws[2] != g.k || ws[3] != g.k {
        return Err(Error::shape("conv2d", "kernel extent", g.k, ws[3]));
    }
    if let Some(b) = bias {
        if b.len() != ws[0] {
            return Err(Error::shape("conv2d", "bias length", ws[0], b.len()));
        }
    }
    Ok(ws[0])
}

fn forward_example(g: &Geometry, x: &[f64], weights: &[f64], out_ch: usize, bias: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
    let cols = g.im2col(x);
    let mut y = matmul(weights, &cols, out_ch, g.rows(), g.positions());
    if let Some(b) = bias {
        let p = g.positions();
        for (o, &bo) in b.iter().enumerate() {
            y[o * p..(o + 1) * p].iter_mut().for_each(|v| *v += bo);
        }
    }
    (y, cols)
}

/// Stateless convolution: `weights` is `[out, in, k, k]`, `bias` one value per
/// output channel. Output spatial extent is `floor((H + 2·pad − k)/stride) + 1`.
pub fn conv2d_forward(input: &Tensor, weights: &Tensor, bias: &[f64], stride: usize, zero_pad: usize) -> Result<Tensor> {
    let ws = weights.shape();
    let k = *ws.get(2).ok_or_else(|| Error::shape("conv2d", "weight rank", 4, ws.len()))?;
    let g = Geometry::new(input.shape(), k, stride, zero_pad)?;
    let out_ch = check_weights(&g, weights, Some(bias))?;
    let n = input.batch();
    let outs: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| forward_example(&g, input.example(i), weights.data(), out_ch, Some(bias)).0)
        .collect();
    Tensor::new(vec![n, out_ch, g.ho, g.wo], outs.concat())
}

#[derive(Debug, Clone)]
struct Cache {
    geometry: Geometry,
    cols: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Param,
    pub bias: Option<Param>,
    cache: Option<Cache>,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize, weight: Tensor, bias: Option<Tensor>) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::new(weight, true),
            bias: bias.map(|b| Param::new(b, false)),
            cache: None,
        }
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let g = Geometry::new(x.shape(), self.kernel, self.stride, self.padding)?;
        let bias = self.bias.as_ref().map(|b| b.value.data());
        check_weights(&g, &self.weight.value, bias)?;
        let n = x.batch();
        let outs: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| forward_example(&g, x.example(i), self.weight.value.data(), self.out_channels, bias).0)
            .collect();
        Tensor::new(vec![n, self.out_channels, g.ho, g.wo], outs.concat())
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let g = Geometry::new(x.shape(), self.kernel, self.stride, self.padding)?;
        let bias = self.bias.as_ref().map(|b| b.value.data());
        check_weights(&g, &self.weight.value, bias)?;
        let n = x.batch();
        let (outs, cols): (Vec<Vec<f64>>, Vec<Vec<f64>>) = (0..n)
            .into_par_iter()
            .map(|i| forward_example(&g, x.example(i), self.weight.value.data(), self.out_channels, bias))
            .unzip();
        self.cache = Some(Cache { geometry: g, cols });
        Tensor::new(vec![n, self.out_channels, g.ho, g.wo], outs.concat())
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("conv2d backward called before forward".into()))?;
        let g = cache.geometry;
        let n = cache.cols.len();
        let expect = [n, self.out_channels, g.ho, g.wo];
        if dy.shape() != expect {
            return Err(Error::shape("conv2d backward", "upstream gradient length", expect.iter().product(), dy.len()));
        }
        let o = self.out_channels;
        let (rows, p) = (g.rows(), g.positions());
        let w = self.weight.value.data();
        let has_bias = self.bias.is_some();

        // Each chunk returns (dx for its examples, partial dW, partial db).
        let parts: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..n)
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .map(|idx| {
                let mut dw = vec![0.0; o * rows];
                let mut db = vec![0.0; if has_bias { o } else { 0 }];
                let mut dx = vec![0.0; idx.len() * g.c * g.h * g.w];
                for (j, &i) in idx.iter().enumerate() {
                    let dyi = dy.example(i);
                    matmul_bt_acc(dyi, &cache.cols[i], o, p, rows, &mut dw);
                    if has_bias {
                        for (oc, acc) in db.iter_mut().enumerate() {
                            *acc += dyi[oc * p..(oc + 1) * p].iter().sum::<f64>();
                        }
                    }
                    let dcols = matmul_at(w, dyi, o, rows, p);
                    let m = g.c * g.h * g.w;
                    g.col2im(&dcols, &mut dx[j * m..(j + 1) * m]);
                }
                (dx, dw, db)
            })
            .collect();

        let mut dx = Vec::with_capacity(n * g.c * g.h * g.w);
        for (pdx, pdw, pdb) in &parts {
            dx.extend_from_slice(pdx);
            for (a, b) in self.weight.grad.data_mut().iter_mut().zip(pdw) {
                *a += b;
            }
            if let Some(bias) = self.bias.as_mut() {
                for (a, b) in bias.grad.data_mut().iter_mut().zip(pdb) {
                    *a += b;
                }
            }
        }
        Tensor::new(vec![n, g.c, g.h, g.w], dx)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}
