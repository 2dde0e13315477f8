//! The label-shift, spatial-shift and mixture-shift conceptual examples.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    monte_carlo, AffineMap, AlignmentMap, AnalyticResult, GaussianMixture1D, LabeledClass, LabeledModel, McConfig,
    Moments, ThresholdClassifier,
};
use crate::error::{Error, Result};

/// Which moments the alignment map matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum AnalyticAlignment {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "mean")]
    Mean,
    #[default]
    #[serde(rename = "mean+var")]
    MeanVar,
}

impl AnalyticAlignment {
    fn map(self, source: Moments, target: Moments) -> Result<AffineMap> {
        match self {
            AnalyticAlignment::None => Ok(AffineMap::IDENTITY),
            AnalyticAlignment::Mean => AffineMap::aligning(source, target, false),
            AnalyticAlignment::MeanVar => AffineMap::aligning(source, target, true),
        }
    }
}

impl fmt::Display for AnalyticAlignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnalyticAlignment::None => "none",
            AnalyticAlignment::Mean => "mean",
            AnalyticAlignment::MeanVar => "mean+var",
        })
    }
}

impl FromStr for AnalyticAlignment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "mean" => Ok(Self::Mean),
            "mean+var" => Ok(Self::MeanVar),
            other => Err(Error::Config(format!("unknown alignment {other:?}; expected none, mean or mean+var"))),
        }
    }
}

/// How the variance of a channel spanning several coordinates is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceConvention {
    /// Around the pooled mean over examples and coordinates, as batch
    /// normalization computes it.
    #[default]
    Pooled,
    /// Average of each coordinate's class-conditional variance, the
    /// bookkeeping that yields `x̃₁ = √2(x₁ − 2) + 4` for the two-coordinate example.
    PerCoordinate,
}

impl fmt::Display for VarianceConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VarianceConvention::Pooled => "pooled",
            VarianceConvention::PerCoordinate => "per-coordinate",
        })
    }
}

fn moments(d: &GaussianMixture1D) -> Moments {
    Moments {
        mean: d.mean(),
        variance: d.variance(),
    }
}

/// Class means in the label-shift model `x | y ∼ N(2y, 1)`.
const LABEL_SHIFT_MEAN: f64 = 2.0;

/// Binary label shift: `x | y ∼ N(2y, 1)`, balanced source, target with
/// `P(y = −1) = p_minus`, classifier `sign(x)`. Reports the target moments and
/// the error of `sign(x̃)` after aligning the target marginal to the source one.
pub fn label_shift_experiment(p_minus: f64, alignment: AnalyticAlignment, mc: Option<&McConfig>) -> Result<AnalyticResult> {
    if !(p_minus > 0.0 && p_minus < 1.0) {
        return Err(Error::Config(format!("p_minus must lie in (0, 1), got {p_minus}")));
    }
    let m = LABEL_SHIFT_MEAN;
    let marginal = |p: f64| GaussianMixture1D::new(&[(p, -m, 1.0), (1.0 - p, m, 1.0)]);
    let (source, target) = (moments(&marginal(0.5)?), moments(&marginal(p_minus)?));
    let map = alignment.map(source, target)?;
    let f = ThresholdClassifier::new(0.0);
    let cond = |y: i8| GaussianMixture1D::gaussian(f64::from(y) * m, 1.0);
    let (neg, pos) = (f.error(-1, &cond(-1)?.map(map)), f.error(1, &cond(1)?.map(map)));
    let overall = p_minus * neg + (1.0 - p_minus) * pos;

    let est = mc
        .map(|c| {
            let model = LabeledModel::new(vec![
                LabeledClass {
                    label: -1,
                    prob: p_minus,
                    dist: cond(-1)?,
                },
                LabeledClass {
                    label: 1,
                    prob: 1.0 - p_minus,
                    dist: cond(1)?,
                },
            ])?;
            monte_carlo(&model, &f, &AlignmentMap::Global(map), c.samples, c.seed)
        })
        .transpose()?;
    let mut r = AnalyticResult::new(
        "label-shift",
        with_mc(json!({"p_minus": p_minus, "alignment": alignment.to_string()}), mc),
    );
    r.push("source_mean", source.mean, None);
    r.push("source_variance", source.variance, None);
    r.push("target_mean", target.mean, None);
    r.push("target_variance", target.variance, None);
    r.push("align_scale", map.scale, None);
    r.push("align_shift", map.shift, None);
    r.push("error", overall, est.as_ref().map(|m| m.overall));
    r.push("error|y=-1", neg, est.as_ref().and_then(|m| m.per_class.get(&-1).copied()));
    r.push("error|y=+1", pos, est.as_ref().and_then(|m| m.per_class.get(&1).copied()));
    Ok(r)
}

/// Records the Monte Carlo settings alongside the model parameters.
fn with_mc(mut params: serde_json::Value, mc: Option<&McConfig>) -> serde_json::Value {
    if let (Some(c), Some(obj)) = (mc, params.as_object_mut()) {
        obj.insert("mc_samples".into(), json!(c.samples));
        obj.insert("mc_seed".into(), json!(c.seed));
    }
    params
}

/// Two-coordinate channel: `x₁ ∼ N(center + gap·y, 1)`, `x₂ ∼ N(center, 1)`,
/// classifier `sign(x₁ − center)`; the target sets `x₂ := shifted_value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialParams {
    pub center: f64,
    pub class_gap: f64,
    pub shifted_value: f64,
}

impl Default for SpatialParams {
    fn default() -> Self {
        Self {
            center: 4.0,
            class_gap: 2.0,
            shifted_value: 0.0,
        }
    }
}

pub fn spatial_shift_experiment(convention: VarianceConvention, mc: Option<&McConfig>) -> Result<AnalyticResult> {
    spatial_shift_with(SpatialParams::default(), convention, mc)
}

/// Spatial shift with custom parameters. One affine map with shared
/// coefficients is applied to both coordinates; only `x₁` reaches the classifier.
pub fn spatial_shift_with(p: SpatialParams, convention: VarianceConvention, mc: Option<&McConfig>) -> Result<AnalyticResult> {
    if ![p.center, p.class_gap, p.shifted_value].iter().all(|v| v.is_finite()) || p.class_gap <= 0.0 {
        return Err(Error::Config(format!("invalid spatial-shift parameters {p:?}")));
    }
    let (c, g, z) = (p.center, p.class_gap, p.shifted_value);
    let (source, target) = match convention {
        VarianceConvention::Pooled => {
            // Each coordinate contributes half the slots of the channel.
            let x1_second = c * c + 1.0 + g * g;
            let source_mean = c;
            let source_second = 0.5 * x1_second + 0.5 * (c * c + 1.0);
            let target_mean = 0.5 * (c + z);
            let target_second = 0.5 * x1_second + 0.5 * z * z;
            (
                Moments {
                    mean: source_mean,
                    variance: source_second - source_mean * source_mean,
                },
                Moments {
                    mean: target_mean,
                    variance: target_second - target_mean * target_mean,
                },
            )
        }
        VarianceConvention::PerCoordinate => (
            Moments { mean: c, variance: 1.0 },
            Moments {
                mean: 0.5 * (c + z),
                variance: 0.5,
            },
        ),
    };
    let map = AffineMap::aligning(source, target, true)?;
    let f = ThresholdClassifier::new(c);
    let cond = |y: i8| GaussianMixture1D::gaussian(c + g * f64::from(y), 1.0);
    let before = (f.error(-1, &cond(-1)?), f.error(1, &cond(1)?));
    let after = (f.error(-1, &cond(-1)?.map(map)), f.error(1, &cond(1)?.map(map)));

    let est = mc
        .map(|cfg| {
            let model = LabeledModel::new(vec![
                LabeledClass {
                    label: -1,
                    prob: 0.5,
                    dist: cond(-1)?,
                },
                LabeledClass {
                    label: 1,
                    prob: 0.5,
                    dist: cond(1)?,
                },
            ])?;
            monte_carlo(&model, &f, &AlignmentMap::Global(map), cfg.samples, cfg.seed)
        })
        .transpose()?;
    let mut r = AnalyticResult::new(
        "spatial-shift",
        json!({
            "convention": convention.to_string(),
            "center": c,
            "class_gap": g,
            "shifted_value": z,
        }),
    );
    r.parameters = with_mc(r.parameters, mc);
    r.push("source_mean", source.mean, None);
    r.push("source_variance", source.variance, None);
    r.push("target_mean", target.mean, None);
    r.push("target_variance", target.variance, None);
    r.push("align_scale", map.scale, None);
    r.push("align_shift", map.shift, None);
    r.push("error_before|y=-1", before.0, None);
    r.push("error_before|y=+1", before.1, None);
    r.push("error_after|y=-1", after.0, est.as_ref().and_then(|m| m.per_class.get(&-1).copied()));
    r.push("error_after|y=+1", after.1, est.as_ref().and_then(|m| m.per_class.get(&1).copied()));
    r.push("error_after", 0.5 * (after.0 + after.1), est.as_ref().map(|m| m.overall));
    Ok(r)
}

/// Modes `(mean, variance)` of `x | y = −1` in the mixture example.
pub const MIXTURE_MODES: [(f64, f64); 2] = [(-9.0, 1.0), (-1.0, 1.0)];

pub fn mixture_shift_experiment(
    source_weights: &[f64],
    target_weights: &[f64],
    alignment: AnalyticAlignment,
    mc: Option<&McConfig>,
) -> Result<AnalyticResult> {
    mixture_shift_with_modes(&MIXTURE_MODES, source_weights, target_weights, alignment, mc)
}

/// Reweighted modes of `x | y = −1` with classifier `sign(x)`, aligned per
/// class. Reports the error given `y = −1` and where each mode's mean lands.
pub fn mixture_shift_with_modes(
    modes: &[(f64, f64)],
    source_weights: &[f64],
    target_weights: &[f64],
    alignment: AnalyticAlignment,
    mc: Option<&McConfig>,
) -> Result<AnalyticResult> {
    if source_weights.len() != modes.len() || target_weights.len() != modes.len() {
        return Err(Error::Config(format!(
            "expected {} mixture weights, got {} source and {} target",
            modes.len(),
            source_weights.len(),
            target_weights.len()
        )));
    }
    let mixture = |w: &[f64]| {
        let parts: Vec<_> = w.iter().zip(modes).map(|(&w, &(m, v))| (w, m, v)).collect();
        GaussianMixture1D::new(&parts)
    };
    let (src, tgt) = (mixture(source_weights)?, mixture(target_weights)?);
    let map = alignment.map(moments(&src), moments(&tgt))?;
    let f = ThresholdClassifier::new(0.0);
    let aligned = tgt.map(map);

    let est = mc
        .map(|cfg| {
            let model = LabeledModel::new(vec![LabeledClass {
                label: -1,
                prob: 1.0,
                dist: tgt.clone(),
            }])?;
            let per_class = AlignmentMap::PerClass([(-1, map)].into_iter().collect());
            monte_carlo(&model, &f, &per_class, cfg.samples, cfg.seed)
        })
        .transpose()?;
    let mut r = AnalyticResult::new(
        "mixture-shift",
        json!({
            "modes": modes,
            "source_weights": source_weights,
            "target_weights": target_weights,
            "alignment": alignment.to_string(),
        }),
    );
    r.parameters = with_mc(r.parameters, mc);
    r.push("source_mean", src.mean(), None);
    r.push("source_variance", src.variance(), None);
    r.push("target_mean", tgt.mean(), None);
    r.push("target_variance", tgt.variance(), None);
    r.push("align_scale", map.scale, None);
    r.push("align_shift", map.shift, None);
    r.push("source_error|y=-1", f.error(-1, &src), None);
    r.push("error|y=-1", f.error(-1, &aligned), est.as_ref().map(|m| m.overall));
    for (i, c) in aligned.components().iter().enumerate() {
        r.push(format!("aligned_mode_mean[{i}]"), c.mean, None);
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::gaussian_cdf as phi;

    #[test]
    fn label_shift_closed_forms() {
        let none = label_shift_experiment(7.0 / 8.0, AnalyticAlignment::None, None).unwrap();
        assert_eq!(none.value("target_mean").unwrap(), -1.5);
        assert_eq!(none.value("target_variance").unwrap(), 5.0 - 2.25);
        assert!((none.value("error").unwrap() - phi(-2.0)).abs() < 1e-15);
        let full = label_shift_experiment(7.0 / 8.0, AnalyticAlignment::MeanVar, None).unwrap();
        let want = 7.0 / 8.0 * phi(-0.5) + phi(-3.5) / 8.0;
        assert!((full.value("error").unwrap() - want).abs() < 1e-15);
        assert!((full.value("error").unwrap() - 0.27000).abs() < 1e-5);
        assert!((full.value("error|y=-1").unwrap() - 0.30854).abs() < 1e-5);
    }

    #[test]
    fn label_shift_target_moments_follow_formula() {
        for i in 1..20 {
            let p = i as f64 / 20.0;
            let r = label_shift_experiment(p, AnalyticAlignment::None, None).unwrap();
            let mu = 2.0 - 4.0 * p;
            assert!((r.value("target_mean").unwrap() - mu).abs() < 1e-14);
            assert!((r.value("target_variance").unwrap() - (5.0 - mu * mu)).abs() < 1e-13);
        }
    }

    #[test]
    fn balanced_labels_are_the_baseline_for_every_alignment() {
        for a in [AnalyticAlignment::None, AnalyticAlignment::Mean, AnalyticAlignment::MeanVar] {
            let r = label_shift_experiment(0.5, a, None).unwrap();
            assert!((r.value("error").unwrap() - phi(-2.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_only_and_mean_var_alignment_agree() {
        for i in 1..40 {
            let p = i as f64 / 40.0;
            let m = label_shift_experiment(p, AnalyticAlignment::Mean, None).unwrap();
            let v = label_shift_experiment(p, AnalyticAlignment::MeanVar, None).unwrap();
            assert!((m.value("error").unwrap() - v.value("error").unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_label_probability_is_rejected() {
        for p in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(label_shift_experiment(p, AnalyticAlignment::None, None).is_err());
        }
    }

    #[test]
    fn spatial_shift_per_coordinate_coefficients() {
        let r = spatial_shift_experiment(VarianceConvention::PerCoordinate, None).unwrap();
        assert_eq!(r.value("target_mean").unwrap(), 2.0);
        assert_eq!(r.value("target_variance").unwrap(), 0.5);
        let (a, b) = (r.value("align_scale").unwrap(), r.value("align_shift").unwrap());
        assert!((a - 2f64.sqrt()).abs() < 1e-12);
        assert!((b - (4.0 - 2.0 * 2f64.sqrt())).abs() < 1e-12);
        assert_eq!(r.value("error_after|y=-1").unwrap(), 0.5);
    }

    #[test]
    fn spatial_shift_pooled_moments_and_error() {
        let r = spatial_shift_experiment(VarianceConvention::Pooled, None).unwrap();
        assert_eq!(r.value("source_mean").unwrap(), 4.0);
        assert_eq!(r.value("source_variance").unwrap(), 3.0);
        assert_eq!(r.value("target_mean").unwrap(), 2.0);
        assert_eq!(r.value("target_variance").unwrap(), 6.5);
        assert_eq!(r.value("error_after|y=-1").unwrap(), 0.5);
        assert!((r.value("error_before|y=-1").unwrap() - phi(-2.0)).abs() < 1e-16);
    }

    #[test]
    fn mixture_shift_closed_forms() {
        let none = mixture_shift_experiment(&[0.5, 0.5], &[0.75, 0.25], AnalyticAlignment::None, None).unwrap();
        assert_eq!(none.value("source_variance").unwrap(), 17.0);
        assert_eq!(none.value("target_mean").unwrap(), -7.0);
        assert_eq!(none.value("target_variance").unwrap(), 13.0);
        assert!((none.value("error|y=-1").unwrap() - 0.25 * phi(-1.0)).abs() < 1e-15);
        let al = mixture_shift_experiment(&[0.5, 0.5], &[0.75, 0.25], AnalyticAlignment::MeanVar, None).unwrap();
        let s = (17.0f64 / 13.0).sqrt();
        let want = 0.25 * phi((6.0 * s - 5.0) / s) + 0.75 * phi((-2.0 * s - 5.0) / s);
        assert!((al.value("error|y=-1").unwrap() - want).abs() < 1e-14);
        assert!((al.value("aligned_mode_mean[1]").unwrap() - (6.0 * s - 5.0)).abs() < 1e-13);
        assert!(al.value("aligned_mode_mean[1]").unwrap() > 0.0);
    }

    #[test]
    fn alignment_names_round_trip() {
        for a in [AnalyticAlignment::None, AnalyticAlignment::Mean, AnalyticAlignment::MeanVar] {
            assert_eq!(a.to_string().parse::<AnalyticAlignment>().unwrap(), a);
        }
        assert!("both".parse::<AnalyticAlignment>().is_err());
    }
}
