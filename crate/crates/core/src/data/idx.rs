//! IDX files (the MNIST container format) holding unsigned-byte arrays.
//!
//! Layout: two zero bytes, a type code (`0x08` = u8), the dimension count,
//! then one big-endian `u32` extent per dimension, then the payload.

use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const IMAGES_MAGIC: u32 = 0x0000_0803;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            offset: offset as u64,
            message: format!("truncated header: need 4 bytes at offset {offset}, file has {}", bytes.len()),
        })
}

/// Parses an in-memory IDX file of unsigned bytes with 1 or 3 dimensions.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABELS_MAGIC && magic != IMAGES_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x} or 0x{IMAGES_MAGIC:08x}"),
        });
    }
    let ndim = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndim);
    for d in 0..ndim {
        dims.push(read_u32(bytes, 4 + 4 * d)? as usize);
    }
    let header = 4 + 4 * ndim;
    let expected = dims.iter().product::<usize>();
    let actual = bytes.len() - header;
    if actual != expected {
        return Err(Error::Parse {
            offset: header as u64,
            message: format!("payload length mismatch: header declares {expected} bytes, found {actual}"),
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxArray> {
    parse_idx(&fs::read(path)?)
}

/// Loads an images file (`[N, H, W]`) and a labels file (`[N]`) into a
/// single-channel dataset with pixels scaled to `[0, 1]`. The class count is
/// `max(label) + 1` unless `num_classes` is given.
pub fn load_idx_pair(images: impl AsRef<Path>, labels: impl AsRef<Path>, num_classes: Option<usize>) -> Result<LabeledDataset> {
    let img = load_idx(images)?;
    let lab = load_idx(labels)?;
    if img.dims.len() != 3 {
        return Err(Error::Parse {
            offset: 0,
            message: format!("images file must be 3-dimensional, got {} dimensions", img.dims.len()),
        });
    }
    if lab.dims.len() != 1 {
        return Err(Error::Parse {
            offset: 0,
            message: format!("labels file must be 1-dimensional, got {} dimensions", lab.dims.len()),
        });
    }
    let labels: Vec<usize> = lab.data.iter().map(|&l| l as usize).collect();
    let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let (n, h, w) = (img.dims[0], img.dims[1], img.dims[2]);
    let data = img.data.iter().map(|&p| f64::from(p) / 255.0).collect();
    LabeledDataset::new(Tensor::new(vec![n, 1, h, w], data)?, labels, classes)
}

fn encode(magic: u32, dims: &[usize], payload: impl Iterator<Item = u8>) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for &d in dims {
        out.extend((d as u32).to_be_bytes());
    }
    out.extend(payload);
    out
}

/// Writes channel 0 of each image, quantized with `round(255·clamp(x, 0, 1))`.
pub fn write_idx_images(path: impl AsRef<Path>, images: &Tensor) -> Result<()> {
    let s = images.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::Config(format!("IDX export needs [N, 1, H, W] images, got {s:?}")));
    }
    let payload = images.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
    fs::write(path, encode(IMAGES_MAGIC, &[s[0], s[2], s[3]], payload))?;
    Ok(())
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&l| l > 255) {
        return Err(Error::Config(format!("label {bad} does not fit in one byte")));
    }
    fs::write(path, encode(LABELS_MAGIC, &[labels.len()], labels.iter().map(|&l| l as u8)))?;
    Ok(())
}
