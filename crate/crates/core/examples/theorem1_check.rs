//! Randomized check of the reconstruction bound for approximately affine
//! shifts `x̃ = a·x + b + ε`, in both noise-correlation modes.
//!
//! `cargo run --release --example theorem1_check -- [trials]`

use bnalign::analytic::{randomized_theorem1, theorem1_bound, CorrelationMode, MomentSource, RandomizedConfig};

fn main() -> bnalign::Result<()> {
    let trials = std::env::args().nth(1).map_or(100_000, |s| s.parse().expect("trials must be an integer"));
    let (delta, bound) = theorem1_bound(1.0, 2.0, 0.1, 1.0, CorrelationMode::Free)?;
    println!("x = 1, a = 2, r = 0.1, σ = 1: δ = {delta:.4}, bound = {bound:.4}");
    for moments in [MomentSource::Exact, MomentSource::Sampled] {
        for mode in [CorrelationMode::Free, CorrelationMode::Uncorrelated] {
            let config = RandomizedConfig {
                trials,
                points_per_trial: if moments == MomentSource::Sampled { 64 } else { 1 },
                ..RandomizedConfig::default()
            };
            let r = randomized_theorem1(&config, mode, moments)?;
            println!(
                "{moments:?} moments, {mode:?}: {} checked, {} violations, {} outside δ < 1, max |x̂−x|/bound {:.3}",
                r.checked, r.violations, r.out_of_hypothesis, r.max_ratio
            );
        }
    }
    Ok(())
}
