//! Closed-form and Monte Carlo errors of one-dimensional threshold classifiers
//! under label, spatial and mixture shift, with and without moment alignment.
//!
//! `cargo run --release --example analytic_shifts`

use bnalign::analytic::{
    label_shift_experiment, mixture_shift_experiment, spatial_shift_experiment, AnalyticAlignment, AnalyticResult,
    McConfig, VarianceConvention,
};

fn show(title: &str, r: &AnalyticResult) {
    println!("{title}");
    for q in &r.quantities {
        match q.mc {
            Some(m) => println!("  {:<22} {:>12.7}   mc {:.7} ± {:.7}", q.name, q.closed_form, m.estimate, m.se),
            None => println!("  {:<22} {:>12.7}", q.name, q.closed_form),
        }
    }
}

fn main() -> bnalign::Result<()> {
    let mc = McConfig::new(500_000, 1);
    for a in [AnalyticAlignment::None, AnalyticAlignment::Mean, AnalyticAlignment::MeanVar] {
        show(&format!("label shift p(y=-1) = 7/8, alignment {a}"), &label_shift_experiment(0.875, a, Some(&mc))?);
    }
    for c in [VarianceConvention::Pooled, VarianceConvention::PerCoordinate] {
        show(&format!("spatial shift, {c} variance"), &spatial_shift_experiment(c, Some(&mc))?);
    }
    for a in [AnalyticAlignment::None, AnalyticAlignment::MeanVar] {
        let r = mixture_shift_experiment(&[0.5, 0.5], &[0.75, 0.25], a, Some(&mc))?;
        show(&format!("mixture shift 1:1 -> 3:1, alignment {a}"), &r);
    }
    Ok(())
}
