//! Binary model checkpoints. The byte layout is documented in `docs/formats.md`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{Layer, LayerSpec};
use crate::norm::{ActiveStats, ChannelStats};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"BNALCKPT";
pub const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend((v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend(v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend(v.to_le_bytes());
    }
    fn values(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.f64(x));
    }
    fn stats(&mut self, s: &ChannelStats) {
        self.values(&s.mean);
        self.values(&s.var);
        self.u64(s.count);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Parse {
            offset: self.pos as u64,
            message: format!(
                "truncated checkpoint reading {what}: need {n} bytes, {} remain",
                self.bytes.len() - self.pos
            ),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn err(&self, at: usize, message: String) -> Error {
        Error::Parse {
            offset: at as u64,
            message,
        }
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn bool(&mut self, what: &str) -> Result<bool> {
        let at = self.pos;
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(self.err(at, format!("{what}: expected 0 or 1, got {v}"))),
        }
    }
    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn values(&mut self, expected: usize, what: &str) -> Result<Vec<f64>> {
        let at = self.pos;
        let n = self.u64(what)?;
        if n != expected as u64 {
            return Err(self.err(at, format!("{what}: expected {expected} values, header says {n}")));
        }
        (0..expected).map(|_| self.f64(what)).collect()
    }
    fn stats(&mut self, channels: usize, what: &str) -> Result<ChannelStats> {
        let mean = self.values(channels, what)?;
        let var = self.values(channels, what)?;
        let count = self.u64(what)?;
        ChannelStats::new(mean, var, count)
    }
}

fn write_spec(w: &mut Writer, spec: &LayerSpec) {
    match *spec {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            bias,
        } => {
            w.u8(1);
            [in_channels, out_channels, kernel, stride, padding].iter().for_each(|&v| w.u32(v));
            w.u8(bias.into());
        }
        LayerSpec::Dense { inputs, outputs } => {
            w.u8(2);
            w.u32(inputs);
            w.u32(outputs);
        }
        LayerSpec::Relu => w.u8(3),
        LayerSpec::MaxPool { window, stride } => {
            w.u8(4);
            w.u32(window);
            w.u32(stride);
        }
        LayerSpec::AvgPool { window, stride } => {
            w.u8(5);
            w.u32(window);
            w.u32(stride);
        }
        LayerSpec::BatchNorm { channels, eps, momentum } => {
            w.u8(6);
            w.u32(channels);
            w.f64(eps);
            w.f64(momentum);
        }
        LayerSpec::GroupNorm { channels, groups, eps } => {
            w.u8(7);
            w.u32(channels);
            w.u32(groups);
            w.f64(eps);
        }
        LayerSpec::InstanceNorm { channels, affine, eps } => {
            w.u8(8);
            w.u32(channels);
            w.u8(affine.into());
            w.f64(eps);
        }
        LayerSpec::Flatten => w.u8(9),
        LayerSpec::Dropout { rate } => {
            w.u8(10);
            w.f64(rate);
        }
    }
}

fn read_spec(r: &mut Reader) -> Result<LayerSpec> {
    let at = r.pos;
    Ok(match r.u8("layer tag")? {
        1 => LayerSpec::Conv2d {
            in_channels: r.u32("conv2d")?,
            out_channels: r.u32("conv2d")?,
            kernel: r.u32("conv2d")?,
            stride: r.u32("conv2d")?,
            padding: r.u32("conv2d")?,
            bias: r.bool("conv2d bias flag")?,
        },
        2 => LayerSpec::Dense {
            inputs: r.u32("dense")?,
            outputs: r.u32("dense")?,
        },
        3 => LayerSpec::Relu,
        4 => LayerSpec::MaxPool {
            window: r.u32("max-pool")?,
            stride: r.u32("max-pool")?,
        },
        5 => LayerSpec::AvgPool {
            window: r.u32("avg-pool")?,
            stride: r.u32("avg-pool")?,
        },
        6 => LayerSpec::BatchNorm {
            channels: r.u32("batch-norm")?,
            eps: r.f64("batch-norm")?,
            momentum: r.f64("batch-norm")?,
        },
        7 => LayerSpec::GroupNorm {
            channels: r.u32("group-norm")?,
            groups: r.u32("group-norm")?,
            eps: r.f64("group-norm")?,
        },
        8 => LayerSpec::InstanceNorm {
            channels: r.u32("instance-norm")?,
            affine: r.bool("instance-norm affine flag")?,
            eps: r.f64("instance-norm")?,
        },
        9 => LayerSpec::Flatten,
        10 => LayerSpec::Dropout {
            rate: r.f64("dropout")?,
        },
        t => return Err(r.err(at, format!("unknown layer tag {t}"))),
    })
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut w = Writer(MAGIC.to_vec());
    w.0.extend(VERSION.to_le_bytes());
    model.input_shape.iter().for_each(|&d| w.u32(d));
    w.u32(model.num_classes);
    w.u32(model.layers.len());
    for layer in &model.layers {
        write_spec(&mut w, &layer.spec());
        for p in layer.params() {
            w.values(p.value.data());
        }
        if let Some(bn) = layer.as_batch_norm() {
            w.stats(&bn.source);
            match &bn.active {
                ActiveStats::Source => w.u8(0),
                ActiveStats::Target(t) => {
                    w.u8(1);
                    w.stats(t);
                }
            }
        }
    }
    w.0
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(r.err(0, "not a checkpoint: bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(r.err(8, format!("unsupported checkpoint version {version}, expected {VERSION}")));
    }
    let input_shape = [r.u32("input shape")?, r.u32("input shape")?, r.u32("input shape")?];
    let num_classes = r.u32("class count")?;
    let count = r.u32("layer count")?;
    let mut layers: Vec<Layer> = Vec::with_capacity(count.min(1024));
    let mut seedless = crate::rng::seeded(0);
    for _ in 0..count {
        let at = r.pos;
        let spec = read_spec(&mut r)?;
        let mut layer = spec.build(&mut seedless).map_err(|e| r.err(at, format!("invalid layer: {e}")))?;
        for p in layer.params_mut() {
            let shape = p.value.shape().to_vec();
            let values = r.values(p.value.len(), "parameter payload")?;
            p.value = Tensor::new(shape, values)?;
        }
        if let Some(bn) = layer.as_batch_norm_mut() {
            bn.source = r.stats(bn.channels, "source statistics")?;
            if r.bool("alignment flag")? {
                bn.active = ActiveStats::Target(r.stats(bn.channels, "target statistics")?);
            }
        }
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(r.err(r.pos, format!("{} trailing bytes after last layer", bytes.len() - r.pos)));
    }
    Model::from_layers(input_shape, num_classes, layers)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, NormKind};

    fn aligned_model() -> Model {
        let mut m = Architecture::default().build([1, 12, 12], 3, 4).unwrap();
        let stats = ChannelStats::new(vec![0.5; 16], vec![2.0; 16], 77).unwrap();
        m.bn_mut(1).unwrap().set_target(stats).unwrap();
        m.bn_mut(0).unwrap().source.mean[3] = -1.25;
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = aligned_model();
        let bytes = to_bytes(&m);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(to_bytes(&back), bytes);
        let x = Tensor::from_fn(&[3, 1, 12, 12], |i| (i as f64 * 0.37).sin());
        assert_eq!(m.infer(&x).unwrap(), back.infer(&x).unwrap());
        assert!(back.bn(1).unwrap().is_aligned());
        assert!(!back.bn(0).unwrap().is_aligned());
    }

    #[test]
    fn other_norm_kinds_round_trip() {
        for norm in [NormKind::Group { groups: 4 }, NormKind::Instance { affine: true }, NormKind::None] {
            let arch = Architecture {
                norm,
                ..Architecture::default()
            };
            let m = arch.build([1, 12, 12], 2, 1).unwrap();
            let bytes = to_bytes(&m);
            assert_eq!(to_bytes(&from_bytes(&bytes).unwrap()), bytes);
        }
    }

    #[test]
    fn corruption_is_reported_with_offsets() {
        let bytes = to_bytes(&aligned_model());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Parse { .. })));
        let mut long = bytes.clone();
        long.push(0);
        match from_bytes(&long) {
            Err(Error::Parse { offset, message }) => {
                assert_eq!(offset, bytes.len() as u64);
                assert!(message.contains("trailing"));
            }
            other => panic!("{other:?}"),
        }
    }
}
