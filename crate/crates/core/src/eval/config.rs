//! Experiment configuration as flat `key=value` pairs.
//!
//! The canonical rendering lists every key in a fixed order; its SHA-256 is
//! the config fingerprint stamped on every report.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::{SvmParams, DEFAULT_GRID};
use crate::data::{Protocol, COMPRESSION_QUALITY, DEFAULT_VAL_FRACTION};
use crate::error::{Error, Result};
use crate::net::{ArchConfig, L1Scope, Objective, ShortcutPool, TrainConfig};
use crate::nn::LabelConvention;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    Standard,
    /// Trains with and without the shortcut branch.
    Ablation,
    /// Runs lossless inputs and JPEG-recompressed inputs side by side.
    Compression,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Standard => "standard",
            ExperimentKind::Ablation => "ablation",
            ExperimentKind::Compression => "compression",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "standard" => Some(Self::Standard),
            "ablation" => Some(Self::Ablation),
            "compression" => Some(Self::Compression),
            _ => None,
        }
    }
}

/// How images are assigned to train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Protocol(u8),
    /// Fixed per-class test/validation sizes for authentic-versus-generated data.
    Generated,
    /// Use the split column already in the manifest.
    Manifest,
}

impl SplitMode {
    pub fn as_string(self) -> String {
        match self {
            SplitMode::Protocol(n) => n.to_string(),
            SplitMode::Generated => "generated".into(),
            SplitMode::Manifest => "manifest".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "generated" => Ok(Self::Generated),
            "manifest" => Ok(Self::Manifest),
            n => {
                let n: u8 = n.parse().map_err(|_| Error::Config(format!("unknown split `{s}`")))?;
                Protocol::from_number(n)?;
                Ok(Self::Protocol(n))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeling {
    /// Every patch takes its image's label.
    WholeImage,
    /// Patches of tampered images are labeled from the region mask when one
    /// exists; images without a mask fall back to the whole-image label.
    Region { coverage_threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Threshold,
    Svm,
    #[default]
    Both,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Threshold => "threshold",
            Aggregation::Svm => "svm",
            Aggregation::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "threshold" => Some(Self::Threshold),
            "svm" => Some(Self::Svm),
            "both" => Some(Self::Both),
            _ => None,
        }
    }

    pub fn uses_threshold(self) -> bool {
        self != Aggregation::Svm
    }

    pub fn uses_svm(self) -> bool {
        self != Aggregation::Threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub split: SplitMode,
    /// Drives the split, weight initialisation and batch order.
    pub seed: u64,
    /// Share of training images held out for validation and aggregator calibration.
    pub val_fraction: f64,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub labeling: Labeling,
    pub aggregation: Aggregation,
    pub svm: SvmParams,
    pub threshold_grid: Vec<f64>,
    pub jpeg_quality: u8,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Standard,
            split: SplitMode::Protocol(1),
            seed: 0,
            val_fraction: DEFAULT_VAL_FRACTION,
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            labeling: Labeling::WholeImage,
            aggregation: Aggregation::Both,
            svm: SvmParams::default(),
            threshold_grid: DEFAULT_GRID.to_vec(),
            jpeg_quality: COMPRESSION_QUALITY,
        }
    }
}

/// Every accepted key, in canonical order.
pub const CONFIG_KEYS: [&str; 28] = [
    "kind",
    "split",
    "seed",
    "val_fraction",
    "patch_size",
    "conv_channels",
    "residual_depth",
    "fc_width",
    "residual",
    "shortcut_pool",
    "learning_rate",
    "lambda_l1",
    "l1_scope",
    "objective",
    "focal_gamma",
    "focal_alpha",
    "label_convention",
    "batch_size",
    "epochs",
    "labeling",
    "coverage_threshold",
    "aggregation",
    "svm_c",
    "svm_gamma",
    "svm_tol",
    "svm_max_iter",
    "threshold_grid",
    "jpeg_quality",
];

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|x| num(key, x.trim())).collect()
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got `{v}`"))),
    }
}

fn choice<T>(key: &str, v: &str, parsed: Option<T>) -> Result<T> {
    parsed.ok_or_else(|| Error::Config(format!("{key}: unknown value `{v}`")))
}

impl ExperimentConfig {
    pub fn get(&self, key: &str) -> Result<String> {
        let coverage = match self.labeling {
            Labeling::WholeImage => 0.0,
            Labeling::Region { coverage_threshold } => coverage_threshold,
        };
        Ok(match key {
            "kind" => self.kind.as_str().into(),
            "split" => self.split.as_string(),
            "seed" => self.seed.to_string(),
            "val_fraction" => self.val_fraction.to_string(),
            "patch_size" => self.arch.patch_size.to_string(),
            "conv_channels" => join(&self.arch.conv_channels),
            "residual_depth" => self.arch.residual_block_depth.to_string(),
            "fc_width" => self.arch.fc_width.to_string(),
            "residual" => self.arch.enable_residual.to_string(),
            "shortcut_pool" => self.arch.shortcut_pool.as_str().into(),
            "learning_rate" => self.train.learning_rate.to_string(),
            "lambda_l1" => self.train.lambda_l1.to_string(),
            "l1_scope" => self.train.l1_scope.as_str().into(),
            "objective" => match self.train.objective {
                Objective::Focal => "focal".into(),
                Objective::CrossEntropy => "cross_entropy".into(),
            },
            "focal_gamma" => self.train.loss.gamma.to_string(),
            "focal_alpha" => join(&self.train.loss.alpha),
            "label_convention" => self.train.loss.label_convention.as_str().into(),
            "batch_size" => self.train.batch_size.to_string(),
            "epochs" => self.train.epochs.to_string(),
            "labeling" => match self.labeling {
                Labeling::WholeImage => "whole".into(),
                Labeling::Region { .. } => "region".into(),
            },
            "coverage_threshold" => coverage.to_string(),
            "aggregation" => self.aggregation.as_str().into(),
            "svm_c" => self.svm.c.to_string(),
            "svm_gamma" => self.svm.gamma.to_string(),
            "svm_tol" => self.svm.tol.to_string(),
            "svm_max_iter" => self.svm.max_iter.to_string(),
            "threshold_grid" => join(&self.threshold_grid),
            "jpeg_quality" => self.jpeg_quality.to_string(),
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        })
    }

    /// Sets one key from its text form. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "kind" => self.kind = choice(key, v, ExperimentKind::parse(v))?,
            "split" => self.split = SplitMode::parse(v)?,
            "seed" => {
                self.seed = num(key, v)?;
                self.train.seed = self.seed;
            }
            "val_fraction" => self.val_fraction = num(key, v)?,
            "patch_size" => self.arch.patch_size = num(key, v)?,
            "conv_channels" => {
                let c: Vec<usize> = list(key, v)?;
                self.arch.conv_channels = c
                    .try_into()
                    .map_err(|c: Vec<usize>| Error::Config(format!("{key}: need 6 widths, got {}", c.len())))?;
            }
            "residual_depth" => self.arch.residual_block_depth = num(key, v)?,
            "fc_width" => self.arch.fc_width = num(key, v)?,
            "residual" => self.arch.enable_residual = boolean(key, v)?,
            "shortcut_pool" => self.arch.shortcut_pool = choice(key, v, ShortcutPool::parse(v))?,
            "learning_rate" => self.train.learning_rate = num(key, v)?,
            "lambda_l1" => self.train.lambda_l1 = num(key, v)?,
            "l1_scope" => self.train.l1_scope = choice(key, v, L1Scope::parse(v))?,
            "objective" => {
                self.train.objective = choice(
                    key,
                    v,
                    match v {
                        "focal" => Some(Objective::Focal),
                        "cross_entropy" => Some(Objective::CrossEntropy),
                        _ => None,
                    },
                )?
            }
            "focal_gamma" => self.train.loss.gamma = num(key, v)?,
            "focal_alpha" => self.train.loss.alpha = list(key, v)?,
            "label_convention" => self.train.loss.label_convention = choice(key, v, LabelConvention::parse(v))?,
            "batch_size" => self.train.batch_size = num(key, v)?,
            "epochs" => self.train.epochs = num(key, v)?,
            "labeling" => {
                let coverage = match self.labeling {
                    Labeling::Region { coverage_threshold } => coverage_threshold,
                    Labeling::WholeImage => 0.0,
                };
                self.labeling = match v {
                    "whole" => Labeling::WholeImage,
                    "region" => Labeling::Region { coverage_threshold: coverage },
                    _ => return Err(Error::Config(format!("{key}: unknown value `{v}`"))),
                }
            }
            "coverage_threshold" => {
                let t: f64 = num(key, v)?;
                if let Labeling::Region { coverage_threshold } = &mut self.labeling {
                    *coverage_threshold = t;
                } else if t != 0.0 {
                    return Err(Error::Config(format!("{key} needs labeling=region")));
                }
            }
            "aggregation" => self.aggregation = choice(key, v, Aggregation::parse(v))?,
            "svm_c" => self.svm.c = num(key, v)?,
            "svm_gamma" => self.svm.gamma = num(key, v)?,
            "svm_tol" => self.svm.tol = num(key, v)?,
            "svm_max_iter" => self.svm.max_iter = num(key, v)?,
            "threshold_grid" => self.threshold_grid = list(key, v)?,
            "jpeg_quality" => self.jpeg_quality = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
            self.set(k.trim(), v).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Every key with its current value, one `key=value` per line.
    pub fn to_text(&self) -> String {
        CONFIG_KEYS.iter().map(|k| format!("{k}={}\n", self.get(k).expect("listed key"))).collect()
    }

    pub fn fingerprint(&self) -> String {
        Sha256::digest(self.to_text().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.train.validate()?;
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction)));
        }
        if let Labeling::Region { coverage_threshold } = self.labeling {
            if !(0.0..=1.0).contains(&coverage_threshold) {
                return Err(Error::Config(format!("coverage_threshold must lie in [0, 1], got {coverage_threshold}")));
            }
        }
        if self.threshold_grid.is_empty() {
            return Err(Error::Config("threshold_grid must not be empty".into()));
        }
        if !(1..=100).contains(&self.jpeg_quality) {
            return Err(Error::Config(format!("jpeg_quality must lie in 1..=100, got {}", self.jpeg_quality)));
        }
        if self.train.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        Ok(())
    }
}
