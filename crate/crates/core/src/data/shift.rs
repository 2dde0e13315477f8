//! Distribution shifts applied to evaluation data.

use std::fmt;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::noise::NoiseLaw;
use crate::rng;
use crate::tensor::Tensor;

/// Declarative shift. Stochastic kinds draw from per-example streams of `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ShiftSpec {
    None,
    /// Zero a border of width `round(frac · side)` on every side.
    BlackBorder { frac: f64 },
    /// Additive `N(0, σ²)` pixel noise, clipped to `[0, 1]`.
    GaussianNoise {
        sigma: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Mean over a `(2r+1)²` window (in-bounds pixels only).
    BoxBlur { radius: usize },
    /// `(x − m)·scale + m` around each image's mean, clipped to `[0, 1]`.
    Contrast { scale: f64 },
    /// Keep examples with label `< k`; labels are not renumbered.
    ClassSubset { k: usize },
    /// Pixel-wise `a·x + b + ε` with `ε` drawn from `law` on `[−r, r]`. Not clipped.
    AffineChannel {
        a: f64,
        b: f64,
        #[serde(default)]
        r: f64,
        #[serde(default)]
        law: NoiseLaw,
        #[serde(default)]
        seed: u64,
    },
}

impl fmt::Display for ShiftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShiftSpec::None => write!(f, "none"),
            ShiftSpec::BlackBorder { frac } => write!(f, "black-border({frac})"),
            ShiftSpec::GaussianNoise { sigma, seed: 0 } => write!(f, "gaussian-noise({sigma})"),
            ShiftSpec::GaussianNoise { sigma, seed } => write!(f, "gaussian-noise({sigma},{seed})"),
            ShiftSpec::BoxBlur { radius } => write!(f, "box-blur({radius})"),
            ShiftSpec::Contrast { scale } => write!(f, "contrast({scale})"),
            ShiftSpec::ClassSubset { k } => write!(f, "class-subset({k})"),
            ShiftSpec::AffineChannel { a, b, r, law, seed: 0 } => write!(f, "affine-channel({a},{b},{r},{})", law.name()),
            ShiftSpec::AffineChannel { a, b, r, law, seed } => {
                write!(f, "affine-channel({a},{b},{r},{},{seed})", law.name())
            }
        }
    }
}

impl ShiftSpec {
    fn validate(&self, data: &LabeledDataset) -> Result<()> {
        match *self {
            ShiftSpec::BlackBorder { frac } if !(0.0..=0.5).contains(&frac) => {
                Err(Error::Config(format!("black-border fraction must be in [0, 1/2], got {frac}")))
            }
            ShiftSpec::GaussianNoise { sigma, .. } if !(sigma >= 0.0) => {
                Err(Error::Config(format!("noise sigma must be >= 0, got {sigma}")))
            }
            ShiftSpec::Contrast { scale } if !(scale >= 0.0) => {
                Err(Error::Config(format!("contrast scale must be >= 0, got {scale}")))
            }
            ShiftSpec::ClassSubset { k } if k == 0 || k > data.num_classes => Err(Error::Config(format!(
                "class-subset k must be in [1, {}], got {k}",
                data.num_classes
            ))),
            ShiftSpec::AffineChannel { a, r, .. } if !(a > 0.0) || !(r >= 0.0) => {
                Err(Error::Config(format!("affine-channel needs a > 0 and r >= 0, got a={a}, r={r}")))
            }
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for ShiftSpec {
    type Err = Error;

    /// Parses the display form, e.g. `black-border(0.25)`. Seeds may follow as
    /// an extra argument: `gaussian-noise(0.06,3)`, `affine-channel(a,b,r,law,seed)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "none" {
            return Ok(ShiftSpec::None);
        }
        let bad = || Error::Usage(format!("cannot parse shift {s:?}; expected e.g. black-border(0.25)"));
        let (name, rest) = s.split_once('(').ok_or_else(bad)?;
        let args: Vec<&str> = rest.strip_suffix(')').ok_or_else(bad)?.split(',').map(str::trim).collect();
        let num = |i: usize| -> Result<f64> { args.get(i).ok_or_else(bad)?.parse().map_err(|_| bad()) };
        let int = |i: usize| -> Result<u64> { args.get(i).ok_or_else(bad)?.parse().map_err(|_| bad()) };
        let opt_int = |i: usize| -> Result<u64> { if args.len() > i { int(i) } else { Ok(0) } };
        let arity = |lo: usize, hi: usize| if (lo..=hi).contains(&args.len()) { Ok(()) } else { Err(bad()) };
        match name {
            "black-border" => arity(1, 1).and(Ok(ShiftSpec::BlackBorder { frac: num(0)? })),
            "gaussian-noise" => arity(1, 2).and(Ok(ShiftSpec::GaussianNoise {
                sigma: num(0)?,
                seed: opt_int(1)?,
            })),
            "box-blur" => arity(1, 1).and(Ok(ShiftSpec::BoxBlur { radius: int(0)? as usize })),
            "contrast" => arity(1, 1).and(Ok(ShiftSpec::Contrast { scale: num(0)? })),
            "class-subset" => arity(1, 1).and(Ok(ShiftSpec::ClassSubset { k: int(0)? as usize })),
            "affine-channel" => {
                arity(2, 5)?;
                let law = match args.get(3) {
                    None | Some(&"uniform") => NoiseLaw::Uniform,
                    Some(&"truncated-gaussian") => NoiseLaw::TruncatedGaussian,
                    Some(_) => return Err(bad()),
                };
                Ok(ShiftSpec::AffineChannel {
                    a: num(0)?,
                    b: num(1)?,
                    r: if args.len() > 2 { num(2)? } else { 0.0 },
                    law,
                    seed: opt_int(4)?,
                })
            }
            _ => Err(bad()),
        }
    }
}

/// Parses a `+`-joined shift stack such as `gaussian-noise(0.06)+class-subset(1)`.
/// `none` and the empty string give an empty stack.
pub fn parse_shifts(s: &str) -> Result<Vec<ShiftSpec>> {
    if s.trim().is_empty() || s.trim() == "none" {
        return Ok(Vec::new());
    }
    s.split('+').map(str::parse).collect()
}

/// Describes a composed shift list as `"a+b"`, or `"none"` when empty.
pub fn describe(shifts: &[ShiftSpec]) -> String {
    if shifts.is_empty() {
        return "none".into();
    }
    shifts.iter().map(ToString::to_string).collect::<Vec<_>>().join("+")
}

/// Extracts `k` from a description containing `class-subset(k)`.
pub fn classes_kept(description: &str) -> Option<usize> {
    let start = description.find("class-subset(")? + "class-subset(".len();
    let end = description[start..].find(')')? + start;
    description[start..end].parse().ok()
}

fn map_images(images: &Tensor, mut f: impl FnMut(usize, &mut [f64])) -> Tensor {
    let mut out = images.clone();
    for i in 0..out.batch() {
        f(i, out.example_mut(i));
    }
    out
}

pub(crate) fn black_border_width(frac: f64, side: usize) -> usize {
    ((frac * side as f64).round() as usize).min(side)
}

pub fn apply_shift(data: &LabeledDataset, spec: &ShiftSpec) -> Result<LabeledDataset> {
    spec.validate(data)?;
    let [c, h, w] = data.image_shape();
    let images = match *spec {
        ShiftSpec::None => data.images.clone(),
        ShiftSpec::BlackBorder { frac } => {
            let (bh, bw) = (black_border_width(frac, h), black_border_width(frac, w));
            map_images(&data.images, |_, img| {
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            if y < bh || y + bh >= h || x < bw || x + bw >= w {
                                img[(ch * h + y) * w + x] = 0.0;
                            }
                        }
                    }
                }
            })
        }
        ShiftSpec::GaussianNoise { sigma, seed } => map_images(&data.images, |i, img| {
            let mut r = rng::stream(seed, i as u64);
            for v in img.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut r);
                *v = (*v + sigma * z).clamp(0.0, 1.0);
            }
        }),
        ShiftSpec::BoxBlur { radius } => map_images(&data.images, |_, img| {
            let src = img.to_vec();
            let r = radius as isize;
            for ch in 0..c {
                for y in 0..h as isize {
                    for x in 0..w as isize {
                        let (mut s, mut n) = (0.0, 0usize);
                        for yy in (y - r).max(0)..=(y + r).min(h as isize - 1) {
                            for xx in (x - r).max(0)..=(x + r).min(w as isize - 1) {
                                s += src[(ch * h + yy as usize) * w + xx as usize];
                                n += 1;
                            }
                        }
                        img[(ch * h + y as usize) * w + x as usize] = s / n as f64;
                    }
                }
            }
        }),
        ShiftSpec::Contrast { scale } => map_images(&data.images, |_, img| {
            let m = img.iter().sum::<f64>() / img.len() as f64;
            for v in img.iter_mut() {
                *v = ((*v - m) * scale + m).clamp(0.0, 1.0);
            }
        }),
        ShiftSpec::ClassSubset { k } => {
            let keep: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] < k).collect();
            if keep.is_empty() {
                return Err(Error::EmptyDataset(format!("class-subset({k}) left no examples")));
            }
            return Ok(data.select(&keep));
        }
        ShiftSpec::AffineChannel { a, b, r, law, seed } => map_images(&data.images, |i, img| {
            let mut g = rng::stream(seed, i as u64);
            for v in img.iter_mut() {
                *v = a * *v + b + law.sample(r, &mut g);
            }
        }),
    };
    Ok(LabeledDataset {
        images,
        labels: data.labels.clone(),
        num_classes: data.num_classes,
    })
}

/// Applies shifts in order.
pub fn apply_shifts(data: &LabeledDataset, shifts: &[ShiftSpec]) -> Result<LabeledDataset> {
    let mut out = data.clone();
    for s in shifts {
        out = apply_shift(&out, s)?;
    }
    Ok(out)
}

/// Corruption families with integer severities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionFamily {
    GaussianNoise,
    BoxBlur,
    Contrast,
}

impl CorruptionFamily {
    pub const SEVERITIES: [u32; 3] = [1, 2, 3];

    pub fn at(self, severity: u32, seed: u64) -> Result<ShiftSpec> {
        if !(1..=3).contains(&severity) {
            return Err(Error::Config(format!("severity must be in 1..=3, got {severity}")));
        }
        let s = severity as usize - 1;
        Ok(match self {
            CorruptionFamily::GaussianNoise => ShiftSpec::GaussianNoise {
                sigma: [0.04, 0.06, 0.08][s],
                seed,
            },
            CorruptionFamily::BoxBlur => ShiftSpec::BoxBlur { radius: s + 1 },
            CorruptionFamily::Contrast => ShiftSpec::Contrast {
                scale: [0.6, 0.4, 0.2][s],
            },
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            CorruptionFamily::GaussianNoise => "gaussian-noise",
            CorruptionFamily::BoxBlur => "box-blur",
            CorruptionFamily::Contrast => "contrast",
        }
    }
}
