use super::Param;
use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_at, matmul_bt_acc, Tensor};

/// `y = x·Wᵀ + b` with `W` stored `[outputs, inputs]`. Any input whose
/// per-example extent equals `inputs` is accepted; the output is `[N, outputs]`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let ws = weights.shape();
    if ws.len() != 2 {
        return Err(Error::shape("dense", "weight rank", 2, ws.len()));
    }
    let (outputs, inputs) = (ws[0], ws[1]);
    if input.example_len() != inputs {
        return Err(Error::shape("dense", "input features", inputs, input.example_len()));
    }
    if bias.len() != outputs {
        return Err(Error::shape("dense", "bias length", outputs, bias.len()));
    }
    let n = input.batch();
    let mut y = Vec::with_capacity(n * outputs);
    for _ in 0..n {
        y.extend_from_slice(bias);
    }
    matmul_bt_acc(input.data(), weights.data(), n, inputs, outputs, &mut y);
    Tensor::new(vec![n, outputs], y)
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, weight: Tensor, bias: Tensor) -> Self {
        Self {
            inputs,
            outputs,
            weight: Param::new(weight, true),
            bias: Param::new(bias, false),
            cache: None,
        }
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        dense_forward(x, &self.weight.value, self.bias.value.data())
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.infer(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("dense backward called before forward".into()))?;
        let n = x.batch();
        if dy.len() != n * self.outputs {
            return Err(Error::shape("dense backward", "upstream gradient length", n * self.outputs, dy.len()));
        }
        let dw = matmul_at(dy.data(), x.data(), n, self.outputs, self.inputs);
        for (g, d) in self.weight.grad.data_mut().iter_mut().zip(&dw) {
            *g += d;
        }
        let db = self.bias.grad.data_mut();
        for i in 0..n {
            for (g, d) in db.iter_mut().zip(&dy.data()[i * self.outputs..(i + 1) * self.outputs]) {
                *g += d;
            }
        }
        let dx = matmul(dy.data(), self.weight.value.data(), n, self.outputs, self.inputs);
        Tensor::new(x.shape().to_vec(), dx)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}
