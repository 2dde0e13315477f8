//! Closed-form Gaussian models of alignment failures, a bound checker for
//! approximately affine shifts, and a Monte Carlo cross-check for both.

mod experiments;
mod monte_carlo;
mod theorem;

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use experiments::{
    label_shift_experiment, mixture_shift_experiment, mixture_shift_with_modes, spatial_shift_experiment,
    spatial_shift_with, AnalyticAlignment, SpatialParams, VarianceConvention, MIXTURE_MODES,
};
pub use monte_carlo::{monte_carlo, McConfig, McEstimate, McReport, Sampler, DEFAULT_MC_SAMPLES, MC_SHARDS, MIN_MC_SAMPLES};
pub use theorem::{
    randomized_theorem1, theorem1_bound, theorem1_verify, AffineShiftTrial, CorrelationMode, MomentSource,
    RandomizedConfig, VerifyReport,
};

/// Standard normal CDF through the complementary error function.
pub fn gaussian_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Finite mixture of univariate Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture1D {
    components: Vec<Component>,
}

impl GaussianMixture1D {
    /// Components as `(weight, mean, variance)`; weights must be non-negative
    /// and sum to one within `1e-12`.
    pub fn new(components: &[(f64, f64, f64)]) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("a mixture needs at least one component".into()));
        }
        for &(w, m, v) in components {
            if !(w >= 0.0) || !m.is_finite() || !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "invalid mixture component (weight {w}, mean {m}, variance {v})"
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.0).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("mixture weights sum to {total}, expected 1")));
        }
        Ok(Self {
            components: components
                .iter()
                .map(|&(weight, mean, variance)| Component { weight, mean, variance })
                .collect(),
        })
    }

    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        Self::new(&[(1.0, mean, variance)])
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }

    /// `Σ wᵢ(σᵢ² + μᵢ²) − mean²`.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.components
            .iter()
            .map(|c| c.weight * (c.variance + c.mean * c.mean))
            .sum::<f64>()
            - m * m
    }

    /// `P(X > t)`.
    pub fn prob_above(&self, t: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * gaussian_cdf((c.mean - t) / c.variance.sqrt()))
            .sum()
    }

    /// Law of `scale·X + shift`.
    pub fn map(&self, f: AffineMap) -> Self {
        Self {
            components: self
                .components
                .iter()
                .map(|c| Component {
                    weight: c.weight,
                    mean: f.apply(c.mean),
                    variance: f.scale * f.scale * c.variance,
                })
                .collect(),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        let c = pick(&self.components, |c| c.weight, rng);
        let z: f64 = StandardNormal.sample(rng);
        c.mean + c.variance.sqrt() * z
    }
}

/// Picks an item with probability proportional to `weight`; the last item
/// absorbs rounding in the cumulative sum.
fn pick<'a, T>(items: &'a [T], weight: impl Fn(&T) -> f64, rng: &mut Rng) -> &'a T {
    let u: f64 = rand::Rng::random(rng);
    let mut acc = 0.0;
    for item in items {
        acc += weight(item);
        if u < acc {
            return item;
        }
    }
    items.last().expect("non-empty")
}

/// Predicts `+1` iff `x > threshold`, else `−1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdClassifier {
    pub threshold: f64,
}

impl ThresholdClassifier {
    pub fn new(threshold: f64) -> Self {
        Self { threshold }
    }

    pub fn predict(&self, x: f64) -> i8 {
        if x > self.threshold {
            1
        } else {
            -1
        }
    }

    /// Misclassification probability for inputs of class `label` drawn from `dist`.
    pub fn error(&self, label: i8, dist: &GaussianMixture1D) -> f64 {
        let above = dist.prob_above(self.threshold);
        if label > 0 {
            1.0 - above
        } else {
            above
        }
    }
}

/// `x ↦ scale·x + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub scale: f64,
    pub shift: f64,
}

impl AffineMap {
    pub const IDENTITY: AffineMap = AffineMap { scale: 1.0, shift: 0.0 };

    pub fn apply(&self, x: f64) -> f64 {
        self.scale * x + self.shift
    }

    /// The normalization map `x̃ = (σ_s/σ_t)(x − μ_t) + μ_s` taking target
    /// moments onto source moments. `with_variance = false` only matches means.
    pub fn aligning(source: Moments, target: Moments, with_variance: bool) -> Result<Self> {
        if !(target.variance > 0.0) {
            return Err(Error::Degenerate(format!("target variance {} is not positive", target.variance)));
        }
        let scale = if with_variance {
            (source.variance / target.variance).sqrt()
        } else {
            1.0
        };
        Ok(Self {
            scale,
            shift: source.mean - scale * target.mean,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

/// One class of a labeled generative model.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClass {
    pub label: i8,
    pub prob: f64,
    pub dist: GaussianMixture1D,
}

/// Class prior plus class-conditional feature law.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledModel {
    pub classes: Vec<LabeledClass>,
}

impl LabeledModel {
    pub fn new(classes: Vec<LabeledClass>) -> Result<Self> {
        let total: f64 = classes.iter().map(|c| c.prob).sum();
        if classes.is_empty() || classes.iter().any(|c| !(c.prob >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config("class probabilities must be non-negative and sum to 1".into()));
        }
        Ok(Self { classes })
    }

    pub fn sample(&self, rng: &mut Rng) -> (f64, i8) {
        let c = pick(&self.classes, |c| c.prob, rng);
        (c.dist.sample(rng), c.label)
    }
}

/// Feature map applied before classification, optionally chosen per class.
#[derive(Debug, Clone, PartialEq)]
pub enum AlignmentMap {
    Identity,
    Global(AffineMap),
    PerClass(BTreeMap<i8, AffineMap>),
}

impl AlignmentMap {
    pub fn for_label(&self, label: i8) -> AffineMap {
        match self {
            AlignmentMap::Identity => AffineMap::IDENTITY,
            AlignmentMap::Global(m) => *m,
            AlignmentMap::PerClass(maps) => maps.get(&label).copied().unwrap_or(AffineMap::IDENTITY),
        }
    }
}

/// A named closed-form value with its optional Monte Carlo companion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub name: String,
    pub closed_form: f64,
    pub mc: Option<McEstimate>,
}

/// Outcome of one analytic experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticResult {
    pub experiment: String,
    pub parameters: serde_json::Value,
    pub quantities: Vec<Quantity>,
}

/// One JSON row per quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticRow {
    pub experiment: String,
    pub parameters: serde_json::Value,
    pub quantity: String,
    pub closed_form: f64,
    pub mc_estimate: Option<f64>,
    pub mc_se: Option<f64>,
    pub mc_samples: Option<u64>,
}

impl AnalyticResult {
    pub(crate) fn new(experiment: &str, parameters: serde_json::Value) -> Self {
        Self {
            experiment: experiment.into(),
            parameters,
            quantities: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, name: impl Into<String>, closed_form: f64, mc: Option<McEstimate>) {
        self.quantities.push(Quantity {
            name: name.into(),
            closed_form,
            mc,
        });
    }

    pub fn quantity(&self, name: &str) -> Result<&Quantity> {
        self.quantities
            .iter()
            .find(|q| q.name == name)
            .ok_or_else(|| Error::Usage(format!("{} has no quantity named {name}", self.experiment)))
    }

    /// Closed-form value of `name`.
    pub fn value(&self, name: &str) -> Result<f64> {
        Ok(self.quantity(name)?.closed_form)
    }

    pub fn rows(&self) -> Vec<AnalyticRow> {
        self.quantities
            .iter()
            .map(|q| AnalyticRow {
                experiment: self.experiment.clone(),
                parameters: self.parameters.clone(),
                quantity: q.name.clone(),
                closed_form: q.closed_form,
                mc_estimate: q.mc.map(|m| m.estimate),
                mc_se: q.mc.map(|m| m.se),
                mc_samples: q.mc.map(|m| m.n),
            })
            .collect()
    }

    /// JSON-lines rendering of [`AnalyticResult::rows`].
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for row in self.rows() {
            out.push_str(&serde_json::to_string(&row)?);
            out.push('\n');
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent Φ: Maclaurin series of erf for |z| ≤ 3, Lentz continued
    /// fraction of erfc beyond.
    fn oracle_cdf(z: f64) -> f64 {
        let x = z.abs() / SQRT_2;
        let upper_tail = if z.abs() <= 3.0 {
            let (mut term, mut sum, mut n) = (x, x, 0.0);
            while term.abs() > 1e-18 * sum.abs() {
                n += 1.0;
                term *= -x * x / n;
                sum += term / (2.0 * n + 1.0);
            }
            0.5 * (1.0 - 2.0 / std::f64::consts::PI.sqrt() * sum)
        } else {
            // erfc(x) = exp(−x²)/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + …))))
            let tiny = 1e-300;
            let (mut f, mut c, mut d) = (x, x, 0.0);
            for k in 1..200 {
                let a = k as f64 / 2.0;
                d = x + a * d;
                d = if d.abs() < tiny { tiny } else { d };
                c = x + a / c;
                c = if c.abs() < tiny { tiny } else { c };
                d = 1.0 / d;
                let delta = c * d;
                f *= delta;
                if (delta - 1.0).abs() < 1e-16 {
                    break;
                }
            }
            0.5 * (-x * x).exp() / (std::f64::consts::PI.sqrt() * f)
        };
        if z >= 0.0 {
            1.0 - upper_tail
        } else {
            upper_tail
        }
    }

    #[test]
    fn cdf_matches_independent_oracle() {
        assert_eq!(gaussian_cdf(0.0), 0.5);
        assert!((gaussian_cdf(-2.0) - 0.0227501).abs() < 1e-7);
        assert!((gaussian_cdf(1.6276) - 0.948195).abs() < 1e-6);
        for i in -800..=800 {
            let z = i as f64 / 100.0;
            let (got, want) = (gaussian_cdf(z), oracle_cdf(z));
            assert!((got - want).abs() < 1e-12, "z = {z}: {got} vs {want}");
        }
    }

    #[test]
    fn mixture_moments_match_hand_values() {
        let m = GaussianMixture1D::new(&[(0.5, -9.0, 1.0), (0.5, -1.0, 1.0)]).unwrap();
        assert_eq!(m.mean(), -5.0);
        assert_eq!(m.variance(), 17.0);
        let t = GaussianMixture1D::new(&[(0.75, -9.0, 1.0), (0.25, -1.0, 1.0)]).unwrap();
        assert_eq!(t.mean(), -7.0);
        assert_eq!(t.variance(), 13.0);
    }

    #[test]
    fn invalid_mixtures_are_rejected() {
        assert!(GaussianMixture1D::new(&[]).is_err());
        assert!(GaussianMixture1D::new(&[(0.5, 0.0, 1.0)]).is_err());
        assert!(GaussianMixture1D::new(&[(1.5, 0.0, 1.0), (-0.5, 0.0, 1.0)]).is_err());
        assert!(GaussianMixture1D::new(&[(1.0, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn classifier_error_uses_strict_threshold() {
        let f = ThresholdClassifier::new(0.0);
        assert_eq!(f.predict(0.0), -1);
        assert_eq!(f.predict(1e-300), 1);
        let d = GaussianMixture1D::gaussian(-2.0, 1.0).unwrap();
        assert!((f.error(-1, &d) - gaussian_cdf(-2.0)).abs() < 1e-16);
        assert!((f.error(1, &d) - gaussian_cdf(2.0)).abs() < 1e-15);
    }

    #[test]
    fn aligning_map_sends_target_moments_to_source() {
        let s = Moments { mean: 4.0, variance: 1.0 };
        let t = Moments { mean: 2.0, variance: 0.5 };
        let f = AffineMap::aligning(s, t, true).unwrap();
        assert!((f.scale - SQRT_2).abs() < 1e-15);
        assert!((f.shift - (4.0 - 2.0 * SQRT_2)).abs() < 1e-15);
        assert!(AffineMap::aligning(s, Moments { mean: 0.0, variance: 0.0 }, true).is_err());
    }

    #[test]
    fn analytic_rows_serialize_one_line_per_quantity() {
        let mut r = AnalyticResult::new("demo", serde_json::json!({"p": 0.5}));
        r.push("a", 1.0, None);
        r.push("b", 2.0, None);
        let text = r.to_json_lines().unwrap();
        assert_eq!(text.lines().count(), 2);
        let row: AnalyticRow = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(row.quantity, "a");
        assert_eq!(row.parameters["p"], 0.5);
    }
}
