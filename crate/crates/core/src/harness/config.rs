//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Arch;
use crate::penalties::{AdMode, AdScope, Metric, PenaltyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Synthetic,
    IdxMnist,
    Cifar10Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// `tau` is relative to the layer's mean filter norm.
    MeanRelative,
    /// `tau` is an absolute norm threshold.
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub arch: Arch,
    pub dataset: DatasetKind,
    /// IDX image/label files or CIFAR batch files; unused for synthetic.
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Synthetic sample counts, or caps on file-backed sets (0 = all).
    pub train_size: usize,
    pub test_size: usize,
    pub data_seed: u64,
    pub epochs: usize,
    pub phase1_fraction: f64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub batch: usize,
    pub seed: u64,
    pub penalty: PenaltyConfig,
    pub beta_phase2_scale: f64,
    pub tau: f64,
    pub threshold_mode: ThresholdMode,
    pub finetune_epochs: usize,
    pub augment: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            arch: Arch::ToyCnn,
            dataset: DatasetKind::Synthetic,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            train_size: 512,
            test_size: 256,
            data_seed: 0,
            epochs: 30,
            phase1_fraction: 0.6,
            lr_max: 0.05,
            lr_min: 0.001,
            momentum: 0.9,
            batch: 32,
            seed: 0,
            penalty: PenaltyConfig::default(),
            beta_phase2_scale: 0.5,
            tau: 0.1,
            threshold_mode: ThresholdMode::MeanRelative,
            finetune_epochs: 0,
            augment: false,
        }
    }
}

fn parse<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config {
        line,
        detail: format!("invalid value '{v}' for {key}"),
    })
}

fn parse_enum<T>(line: usize, key: &str, v: &str, options: &[(&str, T)]) -> Result<T>
where
    T: Copy,
{
    options
        .iter()
        .find(|(name, _)| *name == v)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::Config {
            line,
            detail: format!(
                "invalid value '{v}' for {key}; expected one of {}",
                options
                    .iter()
                    .map(|(n, _)| *n)
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        })
}

const DATASETS: &[(&str, DatasetKind)] = &[
    ("synthetic", DatasetKind::Synthetic),
    ("idx-mnist", DatasetKind::IdxMnist),
    ("cifar10-binary", DatasetKind::Cifar10Binary),
];
const SCOPES: &[(&str, AdScope)] = &[
    ("channels-only", AdScope::ChannelsOnly),
    ("channels-and-filters", AdScope::ChannelsAndFilters),
];
const MODES: &[(&str, AdMode)] = &[
    ("exact", AdMode::Exact),
    ("approximate", AdMode::Approximate),
];
const METRICS: &[(&str, Metric)] = &[("angular", Metric::Angular), ("cosine", Metric::Cosine)];
const THRESHOLDS: &[(&str, ThresholdMode)] = &[
    ("mean-relative", ThresholdMode::MeanRelative),
    ("absolute", ThresholdMode::Absolute),
];

fn name_of<T: PartialEq + Copy>(options: &[(&'static str, T)], v: T) -> &'static str {
    options
        .iter()
        .find(|(_, t)| *t == v)
        .map(|(n, _)| *n)
        .unwrap_or("?")
}

impl ExperimentConfig {
    /// Parses `key = value` lines. `#` starts a comment; unknown or
    /// repeated keys are errors. Missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                detail: format!("expected 'key = value', got '{content}'"),
            })?;
            let (key, v) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config {
                    line,
                    detail: format!("duplicate key '{key}'"),
                });
            }
            let p = &mut cfg.penalty;
            match key {
                "arch" => {
                    cfg.arch = v.parse().map_err(|e: Error| Error::Config {
                        line,
                        detail: e.to_string(),
                    })?
                }
                "dataset" => cfg.dataset = parse_enum(line, key, v, DATASETS)?,
                "train_images" => cfg.train_images = Some(PathBuf::from(v)),
                "train_labels" => cfg.train_labels = Some(PathBuf::from(v)),
                "test_images" => cfg.test_images = Some(PathBuf::from(v)),
                "test_labels" => cfg.test_labels = Some(PathBuf::from(v)),
                "train_size" => cfg.train_size = parse(line, key, v)?,
                "test_size" => cfg.test_size = parse(line, key, v)?,
                "data_seed" => cfg.data_seed = parse(line, key, v)?,
                "epochs" => cfg.epochs = parse(line, key, v)?,
                "phase1_fraction" => cfg.phase1_fraction = parse(line, key, v)?,
                "lr_max" => cfg.lr_max = parse(line, key, v)?,
                "lr_min" => cfg.lr_min = parse(line, key, v)?,
                "momentum" => cfg.momentum = parse(line, key, v)?,
                "batch" => cfg.batch = parse(line, key, v)?,
                "seed" => cfg.seed = parse(line, key, v)?,
                "lambda_ad" => p.lambda_ad = parse(line, key, v)?,
                "beta_gl" => p.beta_gl = parse(line, key, v)?,
                "l1" => p.l1 = parse(line, key, v)?,
                "l2" => p.l2 = parse(line, key, v)?,
                "ad_scope" => p.ad_scope = parse_enum(line, key, v, SCOPES)?,
                "ad_mode" => p.ad_mode = parse_enum(line, key, v, MODES)?,
                "ad_metric" => p.ad_metric = parse_enum(line, key, v, METRICS)?,
                "epsilon_norm" => p.epsilon_norm = parse(line, key, v)?,
                "beta_phase2_scale" => cfg.beta_phase2_scale = parse(line, key, v)?,
                "tau" => cfg.tau = parse(line, key, v)?,
                "threshold_mode" => cfg.threshold_mode = parse_enum(line, key, v, THRESHOLDS)?,
                "finetune_epochs" => cfg.finetune_epochs = parse(line, key, v)?,
                "augment" => cfg.augment = parse(line, key, v)?,
                _ => {
                    return Err(Error::Config {
                        line,
                        detail: format!("unknown key '{key}'"),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Epochs spent in the group-lasso-only phase.
    pub fn phase1_epochs(&self) -> usize {
        let p = (self.epochs as f64 * self.phase1_fraction).round() as usize;
        p.clamp(1, self.epochs.saturating_sub(1).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::Config { line: 0, detail });
        self.penalty.validate().map_err(|e| Error::Config {
            line: 0,
            detail: e.to_string(),
        })?;
        if !(self.lr_min > 0.0 && self.lr_max >= self.lr_min && self.lr_max.is_finite()) {
            return bad(format!(
                "need lr_max >= lr_min > 0, got {} / {}",
                self.lr_max, self.lr_min
            ));
        }
        if !(self.phase1_fraction > 0.0 && self.phase1_fraction < 1.0) {
            return bad(format!(
                "phase1_fraction must be in (0, 1), got {}",
                self.phase1_fraction
            ));
        }
        if self.epochs < 2 {
            return bad(format!(
                "epochs must be >= 2 for two training phases, got {}",
                self.epochs
            ));
        }
        if !(0.0..=1.0).contains(&self.beta_phase2_scale) {
            return bad(format!(
                "beta_phase2_scale must be in [0, 1], got {}",
                self.beta_phase2_scale
            ));
        }
        if self.tau < 0.0 || (self.threshold_mode == ThresholdMode::MeanRelative && self.tau >= 1.0)
        {
            return bad(format!("tau out of range: {}", self.tau));
        }
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        Ok(())
    }

    /// Renders the config in the same `key = value` format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = &self.penalty;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("arch", self.arch.to_string());
        kv("dataset", name_of(DATASETS, self.dataset).into());
        for (k, v) in [
            ("train_images", &self.train_images),
            ("train_labels", &self.train_labels),
            ("test_images", &self.test_images),
            ("test_labels", &self.test_labels),
        ] {
            if let Some(v) = v {
                kv(k, v.display().to_string());
            }
        }
        kv("train_size", self.train_size.to_string());
        kv("test_size", self.test_size.to_string());
        kv("data_seed", self.data_seed.to_string());
        kv("epochs", self.epochs.to_string());
        kv("phase1_fraction", self.phase1_fraction.to_string());
        kv("lr_max", self.lr_max.to_string());
        kv("lr_min", self.lr_min.to_string());
        kv("momentum", self.momentum.to_string());
        kv("batch", self.batch.to_string());
        kv("seed", self.seed.to_string());
        kv("lambda_ad", p.lambda_ad.to_string());
        kv("beta_gl", p.beta_gl.to_string());
        kv("l1", p.l1.to_string());
        kv("l2", p.l2.to_string());
        kv("ad_scope", name_of(SCOPES, p.ad_scope).into());
        kv("ad_mode", name_of(MODES, p.ad_mode).into());
        kv("ad_metric", name_of(METRICS, p.ad_metric).into());
        kv("epsilon_norm", p.epsilon_norm.to_string());
        kv("beta_phase2_scale", self.beta_phase2_scale.to_string());
        kv("tau", self.tau.to_string());
        kv(
            "threshold_mode",
            name_of(THRESHOLDS, self.threshold_mode).into(),
        );
        kv("finetune_epochs", self.finetune_epochs.to_string());
        kv("augment", self.augment.to_string());
        s
    }
}
