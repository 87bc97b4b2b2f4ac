//! The run configuration file (TOML) read by the command-line driver.
//!
//! ```toml
//! seed = 7
//!
//! [generator]
//! n_samples = 100000
//! payer_rate = 0.05
//!
//! [train]
//! epochs = 10
//!
//! [train_overrides.mse]
//! learning_rate = 0.003
//!
//! [paths]
//! reports = "out/reports"
//! ```
//!
//! Every section is optional and every field has a default. Relative paths
//! are resolved against the directory holding the config file, or against
//! `--out` when given.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::GeneratorConfig;
use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::labeling::{LabelConfig, DEFAULT_WINDOW_HOURS};
use crate::model::ModelKind;
use crate::nn::Method;
use crate::pipeline::{ModelConfig, ProtocolConfig};
use crate::train::{FinetuneConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelSection {
    pub window_hours: f64,
}

impl Default for LabelSection {
    fn default() -> Self {
        LabelSection {
            window_hours: DEFAULT_WINDOW_HOURS,
        }
    }
}

/// Per-model replacements for fields of `[train]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverride {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub optimizer: Option<Method>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub caltv: TrainOverride,
    pub ziln: TrainOverride,
    pub mse: TrainOverride,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            dataset: "data/dataset.jsonl".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// The only seed: feeds the generator, initialization, shuffling and
    /// fine-tuning. Section-level `seed` fields are rejected if they disagree.
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub label: LabelSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_overrides: TrainOverrides,
    pub finetune: FinetuneConfig,
    pub protocol: ProtocolConfig,
    pub eval: EvalConfig,
    pub paths: PathsSection,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| line_of(text, s.start));
            Error::config(format!("line {line}"), e.message().trim_end().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        for (section, seed) in [
            ("generator.seed", self.generator.seed),
            ("train.seed", self.train.seed),
        ] {
            if seed != 0 && seed != self.seed {
                return Err(Error::config(section, "set the top-level `seed` instead"));
            }
        }
        self.generator.validate()?;
        self.label_config()?;
        for kind in ModelKind::ALL {
            self.train_config(kind).validate()?;
        }
        if !(self.finetune.learning_rate_scale > 0.0
            && self.finetune.learning_rate_scale.is_finite())
        {
            return Err(Error::config(
                "finetune.learning_rate_scale",
                "must be positive",
            ));
        }
        if self.model.hidden_dims.is_empty() || self.model.hidden_dims.contains(&0) {
            return Err(Error::config(
                "model.hidden_dims",
                "need at least one positive width",
            ));
        }
        if self.model.embedding_widths.contains(&0) {
            return Err(Error::config(
                "model.embedding_widths",
                "widths must be positive",
            ));
        }
        if self.protocol.train_days == 0 || self.protocol.train_days >= self.generator.n_days {
            return Err(Error::config(
                "protocol.train_days",
                format!("must lie in 1..{}", self.generator.n_days),
            ));
        }
        self.eval.validate()
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            seed: self.seed,
            ..self.generator.clone()
        }
    }

    pub fn label_config(&self) -> Result<LabelConfig> {
        LabelConfig::new(
            self.label.window_hours,
            self.generator.price_catalog.clone(),
        )
    }

    /// `[train]` with the model's overrides applied and the global seed.
    pub fn train_config(&self, kind: ModelKind) -> TrainConfig {
        let o = match kind {
            ModelKind::Caltv => &self.train_overrides.caltv,
            ModelKind::Ziln => &self.train_overrides.ziln,
            ModelKind::Mse => &self.train_overrides.mse,
        };
        TrainConfig {
            epochs: o.epochs.unwrap_or(self.train.epochs),
            batch_size: o.batch_size.unwrap_or(self.train.batch_size),
            learning_rate: o.learning_rate.unwrap_or(self.train.learning_rate),
            optimizer: o.optimizer.unwrap_or(self.train.optimizer),
            seed: self.seed,
        }
    }
}

/// Config with its file paths resolved.
#[derive(Debug, Clone)]
pub struct ResolvedPaths {
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl ResolvedPaths {
    pub fn new(paths: &PathsSection, base: &Path) -> Self {
        let resolve = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        ResolvedPaths {
            dataset: resolve(&paths.dataset),
            checkpoints: resolve(&paths.checkpoints),
            reports: resolve(&paths.reports),
        }
    }

    pub fn checkpoint(&self, kind: ModelKind) -> PathBuf {
        self.checkpoints.join(format!("{kind}.ckpt"))
    }

    pub fn train_log(&self, kind: ModelKind) -> PathBuf {
        self.checkpoints.join(format!("{kind}.log"))
    }

    pub fn model_reports(&self, kind: ModelKind) -> PathBuf {
        self.reports.join(kind.name())
    }
}
