//! Runs a config end to end and turns the report into plot columns.
//!
//! `cargo run --release --example run_config -- [config-or-builtin] [out-dir]`

use std::path::{Path, PathBuf};

use bnalign::runner::{self, ExperimentConfig, PlotRequest, RunOptions};

fn main() -> bnalign::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "quick".into());
    let out = args.next().map_or_else(|| std::env::temp_dir().join("bnalign-run"), PathBuf::from);
    let (config, base) = ExperimentConfig::load(Path::new(&name))?;
    let opts = RunOptions {
        out_dir: Some(out.clone()),
        ..RunOptions::default()
    };
    let result = runner::run(&config, &base, &opts)?;
    println!("{} rows written to {}", result.rows.len(), out.display());
    for group in &config.cells {
        let req = PlotRequest {
            experiment: group.name.clone(),
            metric: "accuracy".into(),
            series: None,
        };
        match runner::emit_plot_data(&result.rows, &req) {
            Ok(text) => println!("\n{}\n{text}", group.name),
            Err(e) => println!("\n{}: no plot ({e})", group.name),
        }
    }
    Ok(())
}
