//! Declarative experiment configuration (TOML). See `docs/formats.md`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::align::{AlignmentMode, AlignmentPlan, MaskRule, StatEstimator};
use crate::analytic::{AnalyticAlignment, CorrelationMode, MomentSource, VarianceConvention};
use crate::data::{self, AugmentationPolicy, CorruptionFamily, LabeledDataset, ShapesConfig, ShiftSpec};
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_ECE_BINS;
use crate::model::Architecture;
use crate::train::TrainConfig;

/// Configurations shipped with the crate, addressable by name in place of a path.
pub const BUILTIN_CONFIGS: &[(&str, &str)] = &[
    ("paper-figures", include_str!("../../configs/paper-figures.toml")),
    ("quick", include_str!("../../configs/quick.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Global seed: model initialization, training, per-cell streams, Monte Carlo.
    pub seed: u64,
    #[serde(default)]
    pub dataset: Option<DatasetSpec>,
    #[serde(default)]
    pub model: Architecture,
    /// Required unless `checkpoint` names an existing file.
    #[serde(default)]
    pub train: Option<TrainConfig>,
    /// Loaded when it exists; otherwise written after training.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    #[serde(default = "default_bins")]
    pub ece_bins: usize,
    #[serde(default)]
    pub cells: Vec<CellGroup>,
    #[serde(default)]
    pub analytic: Vec<AnalyticSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_metrics() -> Vec<Metric> {
    vec![Metric::Accuracy, Metric::Ece]
}

fn default_bins() -> usize {
    DEFAULT_ECE_BINS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    Shapes(ShapesConfig),
    #[serde(rename_all = "snake_case")]
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        classes: Option<usize>,
    },
}

impl DatasetSpec {
    /// `(train, test)` with relative paths resolved against `base`.
    pub fn load(&self, base: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
        match self {
            DatasetSpec::Shapes(s) => Ok((s.train()?, s.test()?)),
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                classes,
            } => {
                let train = data::load_idx_pair(base.join(train_images), base.join(train_labels), *classes)?;
                let classes = classes.unwrap_or(train.num_classes);
                let test = data::load_idx_pair(base.join(test_images), base.join(test_labels), Some(classes))?;
                let train = LabeledDataset::new(train.images, train.labels, classes)?;
                Ok((train, test))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Accuracy,
    Ece,
    /// One row per true class present, named `class-accuracy[k]`.
    ClassAccuracy,
}

/// A grid of cells: every shift stack crossed with every alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellGroup {
    /// Experiment id; also the stem of the group's CSV file.
    pub name: String,
    /// Shift stacks in display form, e.g. `"gaussian-noise(0.06,1)+class-subset(2)"`.
    #[serde(default = "clean")]
    pub shifts: Vec<String>,
    /// Prepends each severity of a corruption family to every stack and adds
    /// severity-averaged rows.
    #[serde(default)]
    pub corruption: Option<CorruptionSpec>,
    /// `none`, `adabn`, `adabn-aug`, optionally with a mask: `adabn/exclude-last-2`.
    pub alignments: Vec<String>,
    #[serde(default)]
    pub estimator: StatEstimator,
    /// Augmentation for `adabn-aug`; defaults to the training policy.
    #[serde(default)]
    pub augmentation: Option<AugmentationPolicy>,
    #[serde(default)]
    pub metrics: Option<Vec<Metric>>,
}

fn clean() -> Vec<String> {
    vec!["none".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub family: CorruptionFamily,
    #[serde(default = "all_severities")]
    pub severities: Vec<u32>,
    #[serde(default)]
    pub seed: u64,
}

fn all_severities() -> Vec<u32> {
    CorruptionFamily::SEVERITIES.to_vec()
}

/// Alignment of one cell: none, or a mode with a mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignmentChoice {
    pub mode: Option<AlignmentMode>,
    pub mask: MaskRule,
}

impl AlignmentChoice {
    pub const NONE: AlignmentChoice = AlignmentChoice {
        mode: None,
        mask: MaskRule::All,
    };

    pub fn mode_name(&self) -> &'static str {
        match self.mode {
            None => "none",
            Some(AlignmentMode::Adabn) => "adabn",
            Some(AlignmentMode::AdabnAug) => "adabn-aug",
        }
    }

    /// Mask column of a report row; `-` when nothing is aligned.
    pub fn mask_name(&self) -> String {
        match self.mode {
            None => "-".into(),
            Some(_) => self.mask.to_string(),
        }
    }

    pub fn plan(&self, estimator: StatEstimator, augmentation: AugmentationPolicy, seed: u64) -> Option<AlignmentPlan> {
        self.mode.map(|mode| AlignmentPlan {
            mode,
            mask: self.mask,
            estimator,
            augmentation: (mode == AlignmentMode::AdabnAug).then_some(augmentation),
            seed,
        })
    }
}

impl fmt::Display for AlignmentChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            None => f.write_str("none"),
            Some(_) => write!(f, "{}/{}", self.mode_name(), self.mask),
        }
    }
}

impl FromStr for AlignmentChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (mode, mask) = match s.split_once('/') {
            Some((m, k)) => (m, k.parse()?),
            None => (s, MaskRule::All),
        };
        let mode = match mode {
            "none" if mask == MaskRule::All => None,
            "adabn" => Some(AlignmentMode::Adabn),
            "adabn-aug" => Some(AlignmentMode::AdabnAug),
            _ => {
                return Err(Error::Usage(format!(
                    "cannot parse alignment {s:?}; expected none, adabn[/MASK] or adabn-aug[/MASK]"
                )))
            }
        };
        Ok(Self { mode, mask })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AnalyticSpec {
    LabelShift {
        #[serde(default)]
        name: Option<String>,
        p_minus: f64,
        #[serde(default = "all_alignments")]
        alignments: Vec<AnalyticAlignment>,
        #[serde(default)]
        mc_samples: Option<usize>,
    },
    SpatialShift {
        #[serde(default)]
        name: Option<String>,
        #[serde(default = "both_conventions")]
        conventions: Vec<VarianceConvention>,
        #[serde(default)]
        mc_samples: Option<usize>,
    },
    MixtureShift {
        #[serde(default)]
        name: Option<String>,
        source_weights: Vec<f64>,
        target_weights: Vec<f64>,
        #[serde(default = "none_and_full")]
        alignments: Vec<AnalyticAlignment>,
        #[serde(default)]
        mc_samples: Option<usize>,
    },
    Theorem1 {
        #[serde(default)]
        name: Option<String>,
        #[serde(default = "default_trials")]
        trials: usize,
        #[serde(default = "both_modes")]
        modes: Vec<CorrelationMode>,
        #[serde(default)]
        moments: MomentSource,
    },
}

fn all_alignments() -> Vec<AnalyticAlignment> {
    vec![AnalyticAlignment::None, AnalyticAlignment::Mean, AnalyticAlignment::MeanVar]
}
fn none_and_full() -> Vec<AnalyticAlignment> {
    vec![AnalyticAlignment::None, AnalyticAlignment::MeanVar]
}
fn both_conventions() -> Vec<VarianceConvention> {
    vec![VarianceConvention::Pooled, VarianceConvention::PerCoordinate]
}
fn both_modes() -> Vec<CorrelationMode> {
    vec![CorrelationMode::Free, CorrelationMode::Uncorrelated]
}
fn default_trials() -> usize {
    100_000
}

impl AnalyticSpec {
    pub fn name(&self) -> String {
        let (name, default) = match self {
            AnalyticSpec::LabelShift { name, .. } => (name, "analytic-label-shift"),
            AnalyticSpec::SpatialShift { name, .. } => (name, "analytic-spatial-shift"),
            AnalyticSpec::MixtureShift { name, .. } => (name, "analytic-mixture-shift"),
            AnalyticSpec::Theorem1 { name, .. } => (name, "theorem1"),
        };
        name.clone().unwrap_or_else(|| default.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// Also write one CSV per experiment id.
    pub per_experiment_csv: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("reports"),
            per_experiment_csv: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file, or a builtin config when `name` is not a file.
    /// Returns the config and the directory relative paths resolve against.
    pub fn load(name: &Path) -> Result<(Self, PathBuf)> {
        if name.is_file() {
            let text = std::fs::read_to_string(name)?;
            let base = name.parent().map(Path::to_path_buf).unwrap_or_default();
            return Ok((Self::from_toml(&text)?, base));
        }
        let key = name.to_string_lossy();
        match BUILTIN_CONFIGS.iter().find(|(n, _)| *n == key) {
            Some((_, text)) => Ok((Self::from_toml(text)?, PathBuf::from("."))),
            None => Err(Error::Config(format!(
                "config {key} is neither a file nor a builtin ({})",
                BUILTIN_CONFIGS.iter().map(|c| c.0).collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    /// Field-level checks that do not need the dataset.
    pub fn validate(&self) -> Result<()> {
        if !self.cells.is_empty() && self.dataset.is_none() {
            return Err(Error::Config("cells: a [dataset] section is required to evaluate cells".into()));
        }
        if !self.cells.is_empty() && self.train.is_none() && self.checkpoint.is_none() {
            return Err(Error::Config("cells: need a [train] section or a checkpoint path".into()));
        }
        if self.ece_bins == 0 {
            return Err(Error::Config("ece_bins: must be >= 1".into()));
        }
        if let Some(t) = &self.train {
            t.validate().map_err(|e| Error::Config(format!("train: {e}")))?;
        }
        let mut names = std::collections::BTreeSet::new();
        for (i, g) in self.cells.iter().enumerate() {
            let at = |msg: String| Error::Config(format!("cells[{i}] ({}): {msg}", g.name));
            if g.name.is_empty() || g.name.contains(['/', '\\']) {
                return Err(at("name must be non-empty and contain no path separators".into()));
            }
            if !names.insert(g.name.clone()) {
                return Err(at("duplicate name".into()));
            }
            if g.alignments.is_empty() {
                return Err(at("alignments: at least one entry is required".into()));
            }
            g.shift_stacks().map_err(|e| at(format!("shifts: {e}")))?;
            g.alignment_choices().map_err(|e| at(format!("alignments: {e}")))?;
            if let Some(c) = &g.corruption {
                if c.severities.is_empty() {
                    return Err(at("corruption.severities: at least one severity is required".into()));
                }
                for &s in &c.severities {
                    c.family.at(s, 0).map_err(|e| at(format!("corruption: {e}")))?;
                }
            }
        }
        for (i, a) in self.analytic.iter().enumerate() {
            let name = a.name();
            if name.is_empty() || name.contains(['/', '\\']) || !names.insert(name.clone()) {
                return Err(Error::Config(format!("analytic[{i}]: name {name:?} is empty, has separators or is a duplicate")));
            }
            if let AnalyticSpec::LabelShift { mc_samples: Some(n), .. }
            | AnalyticSpec::SpatialShift { mc_samples: Some(n), .. }
            | AnalyticSpec::MixtureShift { mc_samples: Some(n), .. } = a
            {
                if *n < crate::analytic::MIN_MC_SAMPLES {
                    return Err(Error::Config(format!(
                        "analytic[{i}].mc_samples: must be >= {}",
                        crate::analytic::MIN_MC_SAMPLES
                    )));
                }
            }
        }
        Ok(())
    }
}

impl CellGroup {
    pub fn shift_stacks(&self) -> Result<Vec<Vec<ShiftSpec>>> {
        if self.shifts.is_empty() {
            return Err(Error::Config("at least one shift stack is required (use \"none\")".into()));
        }
        self.shifts.iter().map(|s| data::parse_shifts(s)).collect()
    }

    pub fn alignment_choices(&self) -> Result<Vec<AlignmentChoice>> {
        self.alignments.iter().map(|s| s.parse()).collect()
    }
}
