//! Config-driven pipelines: train or load a model, evaluate every
//! (shift, alignment) cell, run analytic experiments, write reports.

pub mod config;
pub mod plot;
pub mod report;

use std::borrow::Cow;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::{AlignmentChoice, AnalyticSpec, CellGroup, DatasetSpec, ExperimentConfig, Metric, BUILTIN_CONFIGS};
pub use plot::{emit_plot_data, figure_request, PlotRequest};
pub use report::{ReportRow, TOOL_VERSION};

use crate::align::adabn;
use crate::analytic::{self, AnalyticResult, AnalyticRow, McConfig, RandomizedConfig, DEFAULT_MC_SAMPLES};
use crate::checkpoint;
use crate::data::{apply_shifts, describe, AugmentationPolicy, LabeledDataset, ShiftSpec};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, ece, per_class_accuracy};
use crate::model::Model;
use crate::rng;
use crate::train::{evaluate, train, TrainLog};

/// Command-line overrides of config values.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<ReportRow>,
    pub files: Vec<PathBuf>,
}

/// Rows for `metrics` on predictions of `model` over `data`.
#[allow(clippy::too_many_arguments)]
pub fn metric_rows(
    model: &Model,
    data: &LabeledDataset,
    metrics: &[Metric],
    bins: usize,
    experiment: &str,
    shift: &str,
    choice: &AlignmentChoice,
    seed: u64,
) -> Result<Vec<ReportRow>> {
    let records = evaluate(model, data)?;
    let n = records.len();
    let row = |metric: &str, value: f64| {
        ReportRow::new(experiment, shift, choice.mode_name(), &choice.mask_name(), metric, value, seed)
    };
    let mut rows = Vec::new();
    for m in metrics {
        match m {
            Metric::Accuracy => rows.push(row("accuracy", accuracy(&records)?).with_detail(format!("n={n}"))),
            Metric::Ece => rows.push(row("ece", ece(&records, bins)?).with_detail(format!("bins={bins},n={n}"))),
            Metric::ClassAccuracy => {
                for (class, acc) in per_class_accuracy(&records)? {
                    let count = records.iter().filter(|r| r.label == class).count();
                    rows.push(row(&format!("class-accuracy[{class}]"), acc).with_detail(format!("n={count}")));
                }
            }
        }
    }
    Ok(rows)
}

/// Builds the configured architecture from `seed` and trains it on
/// `train_set`, tracking held-out accuracy on `test_set`.
pub fn train_model(
    config: &ExperimentConfig,
    seed: u64,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
) -> Result<(Model, TrainLog)> {
    let mut tc = config
        .train
        .clone()
        .ok_or_else(|| Error::Config("train: a [train] section is required to train a model".into()))?;
    tc.seed = seed;
    let init = config.model.build(train_set.image_shape(), train_set.num_classes, seed)?;
    train(&init, train_set, Some(test_set), &tc)
}

/// Loads the configured checkpoint if it exists, otherwise trains (and saves
/// when a checkpoint path is set).
pub fn prepare_model(
    config: &ExperimentConfig,
    checkpoint_path: Option<&Path>,
    seed: u64,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
) -> Result<(Model, Option<TrainLog>)> {
    if let Some(path) = checkpoint_path.filter(|p| p.is_file()) {
        log::info!("loading checkpoint {}", path.display());
        let model = checkpoint::load(path)?;
        if model.input_shape != test_set.image_shape() || model.num_classes != test_set.num_classes {
            return Err(Error::Config(format!(
                "checkpoint {} expects input {:?} with {} classes, dataset has {:?} with {}",
                path.display(),
                model.input_shape,
                model.num_classes,
                test_set.image_shape(),
                test_set.num_classes
            )));
        }
        return Ok((model, None));
    }
    let (model, log) = train_model(config, seed, train_set, test_set)?;
    if let Some(path) = checkpoint_path {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        checkpoint::save(&model, path)?;
    }
    Ok((model, Some(log)))
}

struct Cell<'a> {
    group: &'a CellGroup,
    stack: Vec<ShiftSpec>,
    shift: String,
    /// `(severity, label of the stack without the corruption)` for corruption cells.
    severity: Option<(u32, String)>,
    choice: AlignmentChoice,
}

fn expand_cells(config: &ExperimentConfig) -> Result<Vec<Cell<'_>>> {
    let mut cells = Vec::new();
    for g in &config.cells {
        let choices = g.alignment_choices()?;
        for base in g.shift_stacks()? {
            let variants: Vec<(Vec<ShiftSpec>, Option<(u32, String)>)> = match &g.corruption {
                None => vec![(base.clone(), None)],
                Some(c) => c
                    .severities
                    .iter()
                    .map(|&s| {
                        let mut stack = vec![c.family.at(s, c.seed)?];
                        stack.extend(base.iter().cloned());
                        Ok((stack, Some((s, describe(&base)))))
                    })
                    .collect::<Result<_>>()?,
            };
            for (stack, severity) in variants {
                for &choice in &choices {
                    cells.push(Cell {
                        group: g,
                        shift: describe(&stack),
                        stack: stack.clone(),
                        severity: severity.clone(),
                        choice,
                    });
                }
            }
        }
    }
    Ok(cells)
}

fn eval_cell(
    cell: &Cell,
    config: &ExperimentConfig,
    model: &Model,
    test: &LabeledDataset,
    seed: u64,
    train_aug: &AugmentationPolicy,
) -> Result<Vec<ReportRow>> {
    let g = cell.group;
    let shifted = apply_shifts(test, &cell.stack)?;
    let cell_id = format!("{}|{}|{}", g.name, cell.shift, cell.choice);
    let cell_seed = rng::derive(seed, rng::hash_str(&cell_id));
    let policy = g.augmentation.clone().unwrap_or_else(|| train_aug.clone());
    let aligned = match cell.choice.plan(g.estimator, policy, cell_seed) {
        Some(plan) => Cow::Owned(adabn(model, &shifted.images, &plan)?),
        None => Cow::Borrowed(model),
    };
    let metrics = g.metrics.as_deref().unwrap_or(&config.metrics);
    let mut rows = metric_rows(&aligned, &shifted, metrics, config.ece_bins, &g.name, &cell.shift, &cell.choice, seed)?;
    if let Some((s, _)) = &cell.severity {
        for r in &mut rows {
            r.detail = format!("severity={s},{}", r.detail);
        }
    }
    Ok(rows)
}

/// Severity-averaged rows for corruption cells, one per base stack, alignment
/// and metric, in first-seen order.
fn averaged_rows(cells: &[Cell], results: &[Vec<ReportRow>], seed: u64) -> Vec<ReportRow> {
    struct Acc {
        template: ReportRow,
        sum: f64,
        severities: Vec<String>,
    }
    let mut accs: Vec<Acc> = Vec::new();
    for (cell, rows) in cells.iter().zip(results) {
        let (Some((sev, base)), Some(c)) = (&cell.severity, &cell.group.corruption) else {
            continue;
        };
        let label = if base == "none" {
            format!("{}(mean)", c.family.name())
        } else {
            format!("{}(mean)+{base}", c.family.name())
        };
        for r in rows {
            let template = ReportRow::new(&r.experiment, &label, &r.alignment, &r.mask, &r.metric, 0.0, seed);
            match accs.iter_mut().find(|a| a.template == template) {
                Some(a) => {
                    a.sum += r.value;
                    a.severities.push(sev.to_string());
                }
                None => accs.push(Acc {
                    template,
                    sum: r.value,
                    severities: vec![sev.to_string()],
                }),
            }
        }
    }
    accs.into_iter()
        .map(|a| {
            let mut row = a.template;
            row.value = a.sum / a.severities.len() as f64;
            row.with_detail(format!("severities={}", a.severities.join(";")))
        })
        .collect()
}

fn analytic_rows(spec: &AnalyticSpec, seed: u64) -> Result<(Vec<ReportRow>, Vec<AnalyticRow>)> {
    let name = spec.name();
    let mc_seed = rng::derive(seed, rng::hash_str(&name));
    let mc = |n: &Option<usize>| Some(McConfig::new(n.unwrap_or(DEFAULT_MC_SAMPLES), mc_seed));
    let mut rows = Vec::new();
    let mut json = Vec::new();
    let mut emit = |res: AnalyticResult, shift: String, alignment: String| {
        for q in &res.quantities {
            rows.push(ReportRow::new(&name, &shift, &alignment, "-", &q.name, q.closed_form, seed).with_detail("closed-form"));
            if let Some(m) = q.mc {
                let d = format!("n={},seed={mc_seed}", m.n);
                rows.push(ReportRow::new(&name, &shift, &alignment, "-", &format!("{}:mc", q.name), m.estimate, seed).with_detail(d.clone()));
                rows.push(ReportRow::new(&name, &shift, &alignment, "-", &format!("{}:mc-se", q.name), m.se, seed).with_detail(d));
            }
        }
        json.extend(res.rows());
    };
    match spec {
        AnalyticSpec::LabelShift {
            p_minus,
            alignments,
            mc_samples,
            ..
        } => {
            for a in alignments {
                let res = analytic::label_shift_experiment(*p_minus, *a, mc(mc_samples).as_ref())?;
                emit(res, format!("label-shift(p_minus={p_minus})"), a.to_string());
            }
        }
        AnalyticSpec::SpatialShift {
            conventions, mc_samples, ..
        } => {
            for c in conventions {
                let res = analytic::spatial_shift_experiment(*c, mc(mc_samples).as_ref())?;
                emit(res, format!("spatial-shift(convention={c})"), "mean+var".into());
            }
        }
        AnalyticSpec::MixtureShift {
            source_weights,
            target_weights,
            alignments,
            mc_samples,
            ..
        } => {
            let fmt = |w: &[f64]| w.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
            for a in alignments {
                let res = analytic::mixture_shift_experiment(source_weights, target_weights, *a, mc(mc_samples).as_ref())?;
                emit(res, format!("mixture-shift({}->{})", fmt(source_weights), fmt(target_weights)), a.to_string());
            }
        }
        AnalyticSpec::Theorem1 {
            trials, modes, moments, ..
        } => {
            for mode in modes {
                let cfg = RandomizedConfig {
                    trials: *trials,
                    seed: mc_seed,
                    ..RandomizedConfig::default()
                };
                let r = analytic::randomized_theorem1(&cfg, *mode, *moments)?;
                let shift = format!("affine-shift(mode={})", serde_json::to_value(mode)?.as_str().unwrap_or("?"));
                let alignment = format!("{}-moments", serde_json::to_value(moments)?.as_str().unwrap_or("?"));
                let detail = format!("trials={trials}");
                for (metric, value) in [
                    ("checked", r.checked as f64),
                    ("violations", r.violations as f64),
                    ("out-of-hypothesis", r.out_of_hypothesis as f64),
                    ("max-ratio", r.max_ratio),
                ] {
                    rows.push(ReportRow::new(&name, &shift, &alignment, "-", metric, value, seed).with_detail(detail.clone()));
                }
            }
        }
    }
    Ok((rows, json))
}

fn write_outputs(
    dir: &Path,
    rows: &[ReportRow],
    analytic_json: &[AnalyticRow],
    per_experiment: bool,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let csv_path = dir.join("report.csv");
    report::write_csv(rows, fs::File::create(&csv_path)?)?;
    files.push(csv_path);
    let jsonl_path = dir.join("report.jsonl");
    report::write_json_lines(rows, fs::File::create(&jsonl_path)?)?;
    files.push(jsonl_path);
    if !analytic_json.is_empty() {
        let path = dir.join("analytic.jsonl");
        let mut text = String::new();
        for r in analytic_json {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        fs::write(&path, text)?;
        files.push(path);
    }
    if per_experiment {
        let mut names: Vec<&str> = Vec::new();
        for r in rows {
            if !names.contains(&r.experiment.as_str()) {
                names.push(&r.experiment);
            }
        }
        for name in names {
            let subset: Vec<ReportRow> = rows.iter().filter(|r| r.experiment == name).cloned().collect();
            let path = dir.join(format!("{name}.csv"));
            report::write_csv(&subset, fs::File::create(&path)?)?;
            files.push(path);
        }
    }
    Ok(files)
}

/// Runs every cell and analytic experiment of `config` and writes the reports.
/// On a mid-run failure the rows produced so far are written with a trailing
/// `error` row, then the error is returned.
pub fn run(config: &ExperimentConfig, base: &Path, opts: &RunOptions) -> Result<RunOutput> {
    config.validate()?;
    let seed = opts.seed.unwrap_or(config.seed);
    let out_dir = opts.out_dir.clone().unwrap_or_else(|| base.join(&config.output.dir));
    let mut rows = Vec::new();
    let mut analytic_json = Vec::new();
    let mut extra_files = Vec::new();
    let mut failure = None;

    if !config.cells.is_empty() {
        let dataset = config.dataset.as_ref().expect("validated");
        let (train_set, test_set) = dataset.load(base)?;
        let ckpt = opts.checkpoint.clone().or_else(|| config.checkpoint.as_ref().map(|p| base.join(p)));
        let (model, log) = prepare_model(config, ckpt.as_deref(), seed, &train_set, &test_set)?;
        if let Some(log) = log {
            fs::create_dir_all(&out_dir)?;
            let path = out_dir.join("train-log.csv");
            log.save_csv(&path)?;
            extra_files.push(path);
        }
        let train_aug = config.train.as_ref().map(|t| t.augmentation.clone()).unwrap_or_default();
        let cells = expand_cells(config)?;
        log::info!("evaluating {} cells", cells.len());
        let results: Vec<Result<Vec<ReportRow>>> = cells
            .par_iter()
            .map(|c| eval_cell(c, config, &model, &test_set, seed, &train_aug))
            .collect();
        let mut done = Vec::new();
        for (cell, res) in cells.iter().zip(results) {
            match res {
                Ok(r) => {
                    rows.extend(r.iter().cloned());
                    done.push(r);
                }
                Err(e) => {
                    rows.push(
                        ReportRow::new(
                            &cell.group.name,
                            &cell.shift,
                            cell.choice.mode_name(),
                            &cell.choice.mask_name(),
                            "error",
                            1.0,
                            seed,
                        )
                        .with_detail(e.to_string()),
                    );
                    failure = Some(e);
                    break;
                }
            }
        }
        if failure.is_none() {
            rows.extend(averaged_rows(&cells, &done, seed));
        }
    }
    if failure.is_none() {
        for spec in &config.analytic {
            match analytic_rows(spec, seed) {
                Ok((r, j)) => {
                    rows.extend(r);
                    analytic_json.extend(j);
                }
                Err(e) => {
                    rows.push(ReportRow::new(&spec.name(), "-", "-", "-", "error", 1.0, seed).with_detail(e.to_string()));
                    failure = Some(e);
                    break;
                }
            }
        }
    }
    let mut files = write_outputs(&out_dir, &rows, &analytic_json, config.output.per_experiment_csv)?;
    files.extend(extra_files);
    match failure {
        Some(e) => Err(e),
        None => Ok(RunOutput { rows, files }),
    }
}

/// Set of `(experiment, shift, alignment, mask)` cells a config produces,
/// before severity averaging.
pub fn configured_cells(config: &ExperimentConfig) -> Result<Vec<(String, String, String, String)>> {
    Ok(expand_cells(config)?
        .iter()
        .map(|c| (c.group.name.clone(), c.shift.clone(), c.choice.mode_name().to_string(), c.choice.mask_name()))
        .collect())
}
