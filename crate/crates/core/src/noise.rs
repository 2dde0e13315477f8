//! Bounded zero-mean noise laws on `[−r, r]`.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

/// Truncation point of [`NoiseLaw::TruncatedGaussian`] in units of its scale.
pub const TRUNCATION_SIGMAS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseLaw {
    /// Uniform on `[−r, r]`.
    #[default]
    Uniform,
    /// Gaussian with scale `r / 2`, truncated to `[−r, r]`.
    TruncatedGaussian,
}

impl NoiseLaw {
    pub fn sample(self, r: f64, rng: &mut Rng) -> f64 {
        if r == 0.0 {
            return 0.0;
        }
        match self {
            NoiseLaw::Uniform => rng.random_range(-r..=r),
            NoiseLaw::TruncatedGaussian => {
                let scale = r / TRUNCATION_SIGMAS;
                loop {
                    let z: f64 = StandardNormal.sample(rng);
                    if z.abs() <= TRUNCATION_SIGMAS {
                        return scale * z;
                    }
                }
            }
        }
    }

    /// `E[ε²]` for bound `r`.
    pub fn second_moment(self, r: f64) -> f64 {
        match self {
            NoiseLaw::Uniform => r * r / 3.0,
            NoiseLaw::TruncatedGaussian => {
                let a = TRUNCATION_SIGMAS;
                let scale = r / a;
                let pdf = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
                let mass = libm::erf(a / std::f64::consts::SQRT_2);
                scale * scale * (1.0 - 2.0 * a * pdf / mass)
            }
        }
    }

    /// `E[|ε|]` for bound `r`.
    pub fn mean_abs(self, r: f64) -> f64 {
        match self {
            NoiseLaw::Uniform => r / 2.0,
            NoiseLaw::TruncatedGaussian => {
                let a = TRUNCATION_SIGMAS;
                let scale = r / a;
                let mass = libm::erf(a / std::f64::consts::SQRT_2);
                scale * (2.0 / std::f64::consts::PI).sqrt() * (1.0 - (-0.5 * a * a).exp()) / mass
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseLaw::Uniform => "uniform",
            NoiseLaw::TruncatedGaussian => "truncated-gaussian",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_bounded_and_moments_match() {
        for law in [NoiseLaw::Uniform, NoiseLaw::TruncatedGaussian] {
            let mut r = crate::rng::seeded(5);
            let n = 200_000;
            let (mut s1, mut s2, mut sa) = (0.0, 0.0, 0.0);
            for _ in 0..n {
                let e = law.sample(0.8, &mut r);
                assert!(e.abs() <= 0.8);
                s1 += e;
                s2 += e * e;
                sa += e.abs();
            }
            let n = n as f64;
            assert!((s1 / n).abs() < 5e-3, "{law:?} mean {}", s1 / n);
            assert!(((s2 / n) / law.second_moment(0.8) - 1.0).abs() < 1e-2, "{law:?}");
            assert!(((sa / n) / law.mean_abs(0.8) - 1.0).abs() < 1e-2, "{law:?}");
        }
    }
}
