//! Reconstruction-error bound for normalizing an approximately affine shift
//! `x̃ = a·x + b + ε`, `|ε| ≤ r`, and a randomized checker for it.
//!
//! Source samples are Gaussian `x ∼ N(μ, σ²)`. The noise is
//! `ε = w·r·sign(x − μ) + (1 − |w|)·η` with `η` drawn independently from a
//! bounded [`NoiseLaw`], so `|ε| ≤ r`, `E[ε] = 0` and
//! `E[(x − μ)ε] = w·r·σ·√(2/π)`. The weight `w ∈ [−1, 1]` sets the correlation;
//! the uncorrelated mode fixes `w = 0`.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseLaw;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationMode {
    #[default]
    Free,
    Uncorrelated,
}

/// `(δ, bound)` at a point `x` measured from the source mean.
/// Free mode: `δ = √(2ar|x| + r²)/(aσ)`; uncorrelated: `δ = r/(aσ)`;
/// `bound = 2|x|δ + (r/a)(1 + 2δ)`.
pub fn theorem1_bound(x: f64, a: f64, r: f64, sigma: f64, mode: CorrelationMode) -> Result<(f64, f64)> {
    if !(a > 0.0) || !(sigma > 0.0) || !(r >= 0.0) || !x.is_finite() {
        return Err(Error::Config(format!("bound needs a > 0, σ > 0, r ≥ 0; got a={a}, σ={sigma}, r={r}")));
    }
    let delta = match mode {
        CorrelationMode::Free => (2.0 * a * r * x.abs() + r * r).sqrt() / (a * sigma),
        CorrelationMode::Uncorrelated => r / (a * sigma),
    };
    Ok((delta, 2.0 * x.abs() * delta + r / a * (1.0 + 2.0 * delta)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineShiftTrial {
    pub a: f64,
    pub b: f64,
    pub r: f64,
    pub law: NoiseLaw,
    pub mode: CorrelationMode,
    pub mu: f64,
    pub sigma: f64,
    /// Correlation weight `w`; must be 0 in the uncorrelated mode.
    pub correlation: f64,
}

impl AffineShiftTrial {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.a, self.b, self.r, self.mu, self.sigma, self.correlation].iter().all(|v| v.is_finite());
        if !finite || self.a <= 0.0 || self.sigma <= 0.0 || self.r < 0.0 || self.correlation.abs() > 1.0 {
            return Err(Error::Config(format!("invalid affine-shift trial {self:?}")));
        }
        if self.mode == CorrelationMode::Uncorrelated && self.correlation != 0.0 {
            return Err(Error::Config("uncorrelated trials need correlation weight 0".into()));
        }
        Ok(())
    }

    /// Draws `(x, x̃)`.
    pub fn sample(&self, rng: &mut Rng) -> (f64, f64) {
        let x = Normal::new(self.mu, self.sigma).expect("validated").sample(rng);
        let sign = if x > self.mu { 1.0 } else { -1.0 };
        let eps = self.correlation * self.r * sign + (1.0 - self.correlation.abs()) * self.law.sample(self.r, rng);
        (x, self.a * x + self.b + eps)
    }

    /// Population mean and variance of `x̃`.
    pub fn exact_moments(&self) -> (f64, f64) {
        let w = self.correlation;
        let cross = w * self.r * self.sigma * (2.0 / std::f64::consts::PI).sqrt();
        let noise = w * w * self.r * self.r + (1.0 - w.abs()).powi(2) * self.law.second_moment(self.r);
        (
            self.a * self.mu + self.b,
            self.a * self.a * self.sigma * self.sigma + 2.0 * self.a * cross + noise,
        )
    }
}

/// Where `μ̂, σ̂²` come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MomentSource {
    #[default]
    Exact,
    /// Sample moments of the checked draws, with a tolerance of five
    /// propagated standard errors added to the bound.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct VerifyReport {
    /// Points with `δ < 1` that were compared against the bound.
    pub checked: u64,
    pub violations: u64,
    /// Points with `δ ≥ 1`, outside the hypothesis.
    pub out_of_hypothesis: u64,
    /// Largest `|x̂ − x| / bound` over checked points with a positive bound.
    pub max_ratio: f64,
    /// Largest `|x̂ − x|` over checked points with `r = 0`.
    pub max_noiseless_error: f64,
}

impl VerifyReport {
    fn merge(mut self, o: VerifyReport) -> Self {
        self.checked += o.checked;
        self.violations += o.violations;
        self.out_of_hypothesis += o.out_of_hypothesis;
        self.max_ratio = self.max_ratio.max(o.max_ratio);
        self.max_noiseless_error = self.max_noiseless_error.max(o.max_noiseless_error);
        self
    }
}

/// Absolute tolerance for rounding in `x̂`, relative to the magnitudes involved.
fn rounding_slack(x: f64, x_tilde: f64) -> f64 {
    1e-12 * (1.0 + x.abs() + x_tilde.abs())
}

/// Normalizes `n` draws of `trial` and compares `|x̂ − x|` with the bound,
/// where `x̂ = (x̃ − μ̂)(σ/σ̂) + μ`.
pub fn theorem1_verify(trial: &AffineShiftTrial, n: usize, moments: MomentSource, rng: &mut Rng) -> Result<VerifyReport> {
    trial.validate()?;
    let draws: Vec<(f64, f64)> = (0..n).map(|_| trial.sample(rng)).collect();
    let (mu_hat, var_hat, slack_mu, slack_sigma) = match moments {
        MomentSource::Exact => {
            let (m, v) = trial.exact_moments();
            (m, v, 0.0, 0.0)
        }
        MomentSource::Sampled => {
            if n < 2 {
                return Err(Error::Config("sampled moments need at least two draws".into()));
            }
            let nf = n as f64;
            let m = draws.iter().map(|d| d.1).sum::<f64>() / nf;
            let v = draws.iter().map(|d| (d.1 - m).powi(2)).sum::<f64>() / nf;
            let m4 = draws.iter().map(|d| (d.1 - m).powi(4)).sum::<f64>() / nf;
            let se_mu = (v / nf).sqrt();
            // SE of the sample standard deviation: σ̂·√((κ − 1)/(4n)).
            let se_sigma = (v * ((m4 / (v * v) - 1.0).max(0.0) / (4.0 * nf))).sqrt();
            (m, v, 5.0 * se_mu, 5.0 * se_sigma)
        }
    };
    if !(var_hat > 0.0) {
        return Err(Error::Degenerate(format!("shifted variance {var_hat} is not positive")));
    }
    let sigma_hat = var_hat.sqrt();
    let mut report = VerifyReport::default();
    for (x, xt) in draws {
        let centered = x - trial.mu;
        let (delta, bound) = theorem1_bound(centered, trial.a, trial.r, trial.sigma, trial.mode)?;
        if delta >= 1.0 {
            report.out_of_hypothesis += 1;
            continue;
        }
        let x_hat = (xt - mu_hat) * (trial.sigma / sigma_hat) + trial.mu;
        let err = (x_hat - x).abs();
        let estimation = trial.sigma / sigma_hat * (slack_mu + (xt - mu_hat).abs() * slack_sigma / sigma_hat);
        let allowed = bound + estimation + rounding_slack(x, xt);
        report.checked += 1;
        report.violations += u64::from(err > allowed);
        if bound > 0.0 {
            report.max_ratio = report.max_ratio.max(err / bound);
        }
        if trial.r == 0.0 {
            report.max_noiseless_error = report.max_noiseless_error.max(err);
        }
    }
    Ok(report)
}

/// Ranges for randomized trials. `r` is drawn as a fraction of `a·σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizedConfig {
    pub trials: usize,
    pub points_per_trial: usize,
    pub a_range: (f64, f64),
    pub max_r_fraction: f64,
    pub seed: u64,
}

impl Default for RandomizedConfig {
    fn default() -> Self {
        Self {
            trials: 100_000,
            points_per_trial: 1,
            a_range: (0.5, 4.0),
            max_r_fraction: 0.5,
            seed: 0,
        }
    }
}

/// Runs `config.trials` randomized trials in `mode`, alternating uniform and
/// truncated-Gaussian noise. Trial `i` uses stream `i` of the seed.
pub fn randomized_theorem1(config: &RandomizedConfig, mode: CorrelationMode, moments: MomentSource) -> Result<VerifyReport> {
    let (lo, hi) = config.a_range;
    if !(lo > 0.0 && hi >= lo) || !(config.max_r_fraction >= 0.0) {
        return Err(Error::Config(format!("invalid randomized-trial config {config:?}")));
    }
    let salt = match mode {
        CorrelationMode::Free => 1,
        CorrelationMode::Uncorrelated => 2,
    };
    let seed = rng::derive(config.seed, salt);
    (0..config.trials)
        .into_par_iter()
        .map(|i| {
            let mut g = rng::stream(seed, i as u64);
            let sigma = g.random_range(0.25..4.0);
            let a = g.random_range(lo..=hi);
            let trial = AffineShiftTrial {
                a,
                b: g.random_range(-5.0..5.0),
                r: g.random_range(0.0..=config.max_r_fraction) * a * sigma,
                law: if i % 2 == 0 {
                    NoiseLaw::Uniform
                } else {
                    NoiseLaw::TruncatedGaussian
                },
                mode,
                mu: g.random_range(-3.0..3.0),
                sigma,
                correlation: match mode {
                    CorrelationMode::Free => g.random_range(-1.0..=1.0),
                    CorrelationMode::Uncorrelated => 0.0,
                },
            };
            theorem1_verify(&trial, config.points_per_trial, moments, &mut g)
        })
        .try_reduce(VerifyReport::default, |a, b| Ok(a.merge(b)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_formula_hand_values() {
        let (d, b) = theorem1_bound(1.0, 2.0, 0.1, 1.0, CorrelationMode::Free).unwrap();
        assert!((d - 0.5 * 0.41f64.sqrt()).abs() < 1e-15);
        assert!((d - 0.32016).abs() < 1e-5);
        assert!((b - 0.72233).abs() < 1e-5);
        let (d, b) = theorem1_bound(1.0, 2.0, 0.1, 1.0, CorrelationMode::Uncorrelated).unwrap();
        assert!((d - 0.05).abs() < 1e-15);
        assert!((b - 0.155).abs() < 1e-15);
        assert_eq!(theorem1_bound(3.0, 2.0, 0.0, 1.0, CorrelationMode::Free).unwrap(), (0.0, 0.0));
        assert!(theorem1_bound(1.0, 0.0, 0.1, 1.0, CorrelationMode::Free).is_err());
    }

    fn trial(r: f64, correlation: f64, mode: CorrelationMode) -> AffineShiftTrial {
        AffineShiftTrial {
            a: 1.5,
            b: -0.7,
            r,
            law: NoiseLaw::Uniform,
            mode,
            mu: 0.3,
            sigma: 1.2,
            correlation,
        }
    }

    #[test]
    fn exact_moments_match_a_large_sample() {
        let t = AffineShiftTrial {
            law: NoiseLaw::TruncatedGaussian,
            ..trial(0.4, -0.6, CorrelationMode::Free)
        };
        let (m, v) = t.exact_moments();
        let mut g = rng::seeded(4);
        let n = 400_000;
        let xs: Vec<f64> = (0..n).map(|_| t.sample(&mut g).1).collect();
        let sm = xs.iter().sum::<f64>() / n as f64;
        let sv = xs.iter().map(|x| (x - sm).powi(2)).sum::<f64>() / n as f64;
        assert!((sm - m).abs() < 5.0 * (v / n as f64).sqrt());
        assert!((sv - v).abs() / v < 0.01);
    }

    #[test]
    fn noiseless_shift_is_inverted_exactly() {
        let r = theorem1_verify(&trial(0.0, 0.0, CorrelationMode::Free), 1000, MomentSource::Exact, &mut rng::seeded(1)).unwrap();
        assert_eq!(r.checked, 1000);
        assert_eq!(r.violations, 0);
        assert!(r.max_noiseless_error < 1e-12);
    }

    #[test]
    fn uncorrelated_trial_rejects_nonzero_weight() {
        assert!(trial(0.1, 0.5, CorrelationMode::Uncorrelated).validate().is_err());
    }

    #[test]
    fn bounded_trials_hold_with_exact_and_sampled_moments() {
        for mode in [CorrelationMode::Free, CorrelationMode::Uncorrelated] {
            let w = if mode == CorrelationMode::Free { 0.8 } else { 0.0 };
            for moments in [MomentSource::Exact, MomentSource::Sampled] {
                let r = theorem1_verify(&trial(0.3, w, mode), 20_000, moments, &mut rng::seeded(2)).unwrap();
                assert_eq!(r.violations, 0, "{mode:?} {moments:?}: {r:?}");
                assert!(r.checked > 0);
            }
        }
    }

    #[test]
    fn randomized_trials_are_deterministic() {
        let c = RandomizedConfig {
            trials: 500,
            ..RandomizedConfig::default()
        };
        let a = randomized_theorem1(&c, CorrelationMode::Free, MomentSource::Exact).unwrap();
        let b = randomized_theorem1(&c, CorrelationMode::Free, MomentSource::Exact).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checked + a.out_of_hypothesis, 500);
    }
}
