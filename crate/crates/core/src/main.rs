use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bnalign::align::adabn;
use bnalign::analytic::{AnalyticAlignment, CorrelationMode, MomentSource, VarianceConvention};
use bnalign::checkpoint;
use bnalign::data::{apply_shifts, describe, parse_shifts, LabeledDataset};
use bnalign::runner::{self, report, AlignmentChoice, AnalyticSpec, ExperimentConfig, RunOptions};
use bnalign::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "bnalign", version, about = "Batch-norm statistic alignment experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the configured model and save a checkpoint.
    Train {
        /// Config file or builtin name (paper-figures, quick).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint to write; defaults to the config's `checkpoint`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory for the training log.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-estimate normalization statistics on a shifted test split.
    Align {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Shift stack, e.g. `gaussian-noise(0.06,1)+class-subset(1)`.
        #[arg(long, default_value = "none")]
        shift: String,
        /// `adabn`, `adabn-aug`, optionally `/MASK`.
        #[arg(long, default_value = "adabn")]
        align: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Aligned checkpoint to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a (shifted) test split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "none")]
        shift: String,
        /// Alignment applied before evaluating.
        #[arg(long, default_value = "none")]
        align: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Report file to write (`.jsonl` or CSV); rows are always printed.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Closed-form and Monte Carlo analysis of the one-dimensional models.
    Analytic {
        /// Uses the config's `[[analytic]]` entries; defaults to all four models.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every cell and analytic experiment of a config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Columnar plot data from a report.
    PlotData {
        #[arg(long)]
        report: PathBuf,
        /// Figure id: fig2, fig2-exclude-last, fig2-exclude-first.
        #[arg(long)]
        figure: String,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Usage(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn test_split(config: &ExperimentConfig, base: &Path) -> Result<LabeledDataset> {
    let dataset = config
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("dataset: a [dataset] section is required".into()))?;
    Ok(dataset.load(base)?.1)
}

fn load_checkpoint(path: &Path) -> Result<bnalign::model::Model> {
    if !path.is_file() {
        return Err(Error::Usage(format!("checkpoint {} does not exist", path.display())));
    }
    checkpoint::load(path)
}

fn print_rows(rows: &[report::ReportRow]) -> Result<()> {
    report::write_csv(rows, std::io::stdout().lock())
}

fn write_report(rows: &[report::ReportRow], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::fs::File::create(path)?;
    if path.extension().is_some_and(|e| e == "jsonl") {
        report::write_json_lines(rows, file)
    } else {
        report::write_csv(rows, file)
    }
}

fn default_analytic() -> Vec<AnalyticSpec> {
    vec![
        AnalyticSpec::LabelShift {
            name: None,
            p_minus: 0.875,
            alignments: vec![AnalyticAlignment::None, AnalyticAlignment::Mean, AnalyticAlignment::MeanVar],
            mc_samples: None,
        },
        AnalyticSpec::SpatialShift {
            name: None,
            conventions: vec![VarianceConvention::Pooled, VarianceConvention::PerCoordinate],
            mc_samples: None,
        },
        AnalyticSpec::MixtureShift {
            name: None,
            source_weights: vec![0.5, 0.5],
            target_weights: vec![0.75, 0.25],
            alignments: vec![AnalyticAlignment::None, AnalyticAlignment::MeanVar],
            mc_samples: None,
        },
        AnalyticSpec::Theorem1 {
            name: None,
            trials: 100_000,
            modes: vec![CorrelationMode::Free, CorrelationMode::Uncorrelated],
            moments: MomentSource::Exact,
        },
    ]
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train {
            config,
            seed,
            checkpoint,
            out,
        } => {
            let (cfg, base) = ExperimentConfig::load(&config)?;
            let seed = seed.unwrap_or(cfg.seed);
            let path = checkpoint
                .or_else(|| cfg.checkpoint.as_ref().map(|p| base.join(p)))
                .ok_or_else(|| Error::Usage("no checkpoint path: pass --checkpoint or set `checkpoint`".into()))?;
            let dataset = cfg
                .dataset
                .as_ref()
                .ok_or_else(|| Error::Config("dataset: a [dataset] section is required".into()))?;
            let (train_set, test_set) = dataset.load(&base)?;
            let (model, log) = runner::train_model(&cfg, seed, &train_set, &test_set)?;
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            checkpoint::save(&model, &path)?;
            let out = out.unwrap_or_else(|| base.join(&cfg.output.dir));
            std::fs::create_dir_all(&out)?;
            log.save_csv(out.join("train-log.csv"))?;
            if let Some(last) = log.epochs.last() {
                println!(
                    "epochs {} | train loss {:.4} | held-out accuracy {}",
                    log.epochs.len(),
                    last.loss,
                    last.val_acc.map_or("-".into(), |a| format!("{a:.4}"))
                );
            }
            println!("checkpoint {}", path.display());
            Ok(())
        }
        Command::Align {
            config,
            checkpoint: input,
            shift,
            align,
            seed,
            out,
        } => {
            let (cfg, base) = ExperimentConfig::load(&config)?;
            let choice: AlignmentChoice = align.parse()?;
            let seed = seed.unwrap_or(cfg.seed);
            let target = apply_shifts(&test_split(&cfg, &base)?, &parse_shifts(&shift)?)?;
            let model = load_checkpoint(&input)?;
            let policy = cfg.train.as_ref().map(|t| t.augmentation.clone()).unwrap_or_default();
            let plan = choice
                .plan(Default::default(), policy, seed)
                .ok_or_else(|| Error::Usage("--align none has nothing to do".into()))?;
            let aligned = adabn(&model, &target.images, &plan)?;
            checkpoint::save(&aligned, &out)?;
            println!("aligned ({choice}) on {} -> {}", shift, out.display());
            Ok(())
        }
        Command::Eval {
            config,
            checkpoint: input,
            shift,
            align,
            seed,
            report: report_path,
        } => {
            let (cfg, base) = ExperimentConfig::load(&config)?;
            let choice: AlignmentChoice = align.parse()?;
            let seed = seed.unwrap_or(cfg.seed);
            let stack = parse_shifts(&shift)?;
            let target = apply_shifts(&test_split(&cfg, &base)?, &stack)?;
            let mut model = load_checkpoint(&input)?;
            let policy = cfg.train.as_ref().map(|t| t.augmentation.clone()).unwrap_or_default();
            if let Some(plan) = choice.plan(Default::default(), policy, seed) {
                model = adabn(&model, &target.images, &plan)?;
            }
            let rows = runner::metric_rows(&model, &target, &cfg.metrics, cfg.ece_bins, "eval", &describe(&stack), &choice, seed)?;
            print_rows(&rows)?;
            if let Some(path) = report_path {
                write_report(&rows, &path)?;
            }
            Ok(())
        }
        Command::Analytic { config, seed, out } => {
            let mut cfg = match &config {
                Some(path) => ExperimentConfig::load(path)?.0,
                None => ExperimentConfig::from_toml("seed = 0\n")?,
            };
            if cfg.analytic.is_empty() {
                cfg.analytic = default_analytic();
            }
            cfg.cells.clear();
            let opts = RunOptions {
                seed,
                out_dir: Some(out.unwrap_or_else(|| PathBuf::from("reports/analytic"))),
                checkpoint: None,
            };
            let result = runner::run(&cfg, Path::new("."), &opts)?;
            print_rows(&result.rows)?;
            Ok(())
        }
        Command::Run {
            config,
            seed,
            out,
            checkpoint,
        } => {
            let (cfg, base) = ExperimentConfig::load(&config)?;
            let opts = RunOptions {
                seed,
                out_dir: out,
                checkpoint,
            };
            let result = runner::run(&cfg, &base, &opts)?;
            println!("{} rows", result.rows.len());
            for f in &result.files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::PlotData { report: path, figure, out } => {
            let rows = report::read_report(&path)?;
            let text = runner::emit_plot_data(&rows, &runner::figure_request(&figure)?)?;
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => std::io::stdout().lock().write_all(text.as_bytes())?,
            }
            Ok(())
        }
    }
}
