//! Sharded, seeded Monte Carlo error estimates.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AlignmentMap, LabeledModel, ThresholdClassifier};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub const DEFAULT_MC_SAMPLES: usize = 1_000_000;
pub const MIN_MC_SAMPLES: usize = 10_000;
/// Fixed shard count; shard `i` draws from stream `i` of the seed, so the
/// estimate does not depend on the worker count.
pub const MC_SHARDS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    pub seed: u64,
}

fn default_samples() -> usize {
    DEFAULT_MC_SAMPLES
}

impl McConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self { samples, seed }
    }
}

/// Plug-in error rate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub n: u64,
    pub errors: u64,
    pub estimate: f64,
    pub se: f64,
}

impl McEstimate {
    fn from_counts(n: u64, errors: u64) -> Self {
        let p = if n == 0 { 0.0 } else { errors as f64 / n as f64 };
        Self {
            n,
            errors,
            estimate: p,
            se: if n == 0 { 0.0 } else { (p * (1.0 - p) / n as f64).sqrt() },
        }
    }

    /// `|estimate − value|` in standard errors (infinite when SE is zero and they differ).
    pub fn z_score(&self, value: f64) -> f64 {
        let gap = (self.estimate - value).abs();
        if gap == 0.0 {
            0.0
        } else {
            gap / self.se
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub overall: McEstimate,
    pub per_class: BTreeMap<i8, McEstimate>,
}

/// Draws labeled feature samples.
pub trait Sampler: Sync {
    fn sample(&self, rng: &mut Rng) -> (f64, i8);
}

impl Sampler for LabeledModel {
    fn sample(&self, rng: &mut Rng) -> (f64, i8) {
        LabeledModel::sample(self, rng)
    }
}

impl<F: Fn(&mut Rng) -> (f64, i8) + Sync> Sampler for F {
    fn sample(&self, rng: &mut Rng) -> (f64, i8) {
        self(rng)
    }
}

/// Estimates the error of `classifier` on aligned samples `alignment(x)`.
pub fn monte_carlo(
    sampler: &impl Sampler,
    classifier: &ThresholdClassifier,
    alignment: &AlignmentMap,
    n: usize,
    seed: u64,
) -> Result<McReport> {
    if n < MIN_MC_SAMPLES {
        return Err(Error::Config(format!("Monte Carlo needs at least {MIN_MC_SAMPLES} samples, got {n}")));
    }
    let shards: Vec<BTreeMap<i8, (u64, u64)>> = (0..MC_SHARDS)
        .into_par_iter()
        .map(|shard| {
            let count = n / MC_SHARDS + usize::from(shard < n % MC_SHARDS);
            let mut rng = rng::stream(seed, shard as u64);
            let mut tally: BTreeMap<i8, (u64, u64)> = BTreeMap::new();
            for _ in 0..count {
                let (x, y) = sampler.sample(&mut rng);
                let wrong = classifier.predict(alignment.for_label(y).apply(x)) != y;
                let e = tally.entry(y).or_default();
                e.0 += 1;
                e.1 += u64::from(wrong);
            }
            tally
        })
        .collect();
    let mut total: BTreeMap<i8, (u64, u64)> = BTreeMap::new();
    for shard in shards {
        for (y, (n, e)) in shard {
            let t = total.entry(y).or_default();
            t.0 += n;
            t.1 += e;
        }
    }
    let (n_all, e_all) = total.values().fold((0, 0), |a, &(n, e)| (a.0 + n, a.1 + e));
    Ok(McReport {
        overall: McEstimate::from_counts(n_all, e_all),
        per_class: total.into_iter().map(|(y, (n, e))| (y, McEstimate::from_counts(n, e))).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{AffineMap, GaussianMixture1D, LabeledClass};

    fn normal_model(mean: f64) -> LabeledModel {
        LabeledModel::new(vec![LabeledClass {
            label: -1,
            prob: 1.0,
            dist: GaussianMixture1D::gaussian(mean, 1.0).unwrap(),
        }])
        .unwrap()
    }

    #[test]
    fn point_mass_on_the_right_side_has_zero_error() {
        let f = ThresholdClassifier::new(0.0);
        let r = monte_carlo(&|_: &mut Rng| (1.0, 1i8), &f, &AlignmentMap::Identity, 20_000, 3).unwrap();
        assert_eq!(r.overall.errors, 0);
        assert_eq!(r.overall.estimate, 0.0);
        assert_eq!(r.overall.n, 20_000);
    }

    #[test]
    fn estimate_is_deterministic_per_seed() {
        let f = ThresholdClassifier::new(0.0);
        let m = normal_model(-1.0);
        let a = monte_carlo(&m, &f, &AlignmentMap::Identity, 50_000, 11).unwrap();
        let b = monte_carlo(&m, &f, &AlignmentMap::Identity, 50_000, 11).unwrap();
        assert_eq!(a, b);
        let c = monte_carlo(&m, &f, &AlignmentMap::Identity, 50_000, 12).unwrap();
        assert_ne!(a.overall.errors, c.overall.errors);
    }

    #[test]
    fn standard_error_scales_as_inverse_root_n() {
        let f = ThresholdClassifier::new(0.0);
        let m = normal_model(-0.5);
        let se = |n| monte_carlo(&m, &f, &AlignmentMap::Identity, n, 5).unwrap().overall.se;
        let (s1, s2, s4) = (se(100_000), se(200_000), se(400_000));
        assert!((s1 / s2 / 2f64.sqrt() - 1.0).abs() < 0.1);
        assert!((s1 / s4 / 2.0 - 1.0).abs() < 0.1);
    }

    #[test]
    fn alignment_is_applied_before_classification() {
        let f = ThresholdClassifier::new(0.0);
        let m = normal_model(-1.0);
        let shift = AlignmentMap::Global(AffineMap { scale: 1.0, shift: 100.0 });
        assert_eq!(monte_carlo(&m, &f, &shift, 10_000, 1).unwrap().overall.estimate, 1.0);
    }

    #[test]
    fn too_few_samples_is_a_config_error() {
        let f = ThresholdClassifier::new(0.0);
        assert!(matches!(
            monte_carlo(&normal_model(0.0), &f, &AlignmentMap::Identity, 100, 0),
            Err(Error::Config(_))
        ));
    }
}
