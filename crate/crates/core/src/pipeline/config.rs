//! Pipeline configuration: a flat TOML key-value file.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Every key has a default except the corpus inputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::analytics::{DEFAULT_BUCKETS, DEFAULT_CATEGORY_MIN_COUNT, DEFAULT_INSTALL_THRESHOLD};
use crate::crop::DEFAULT_MARGIN_FRACTION;
use crate::detector::{KeywordRegistry, OfficialClasses};
use crate::heatmap::{DEFAULT_COLS, DEFAULT_ROWS};
use crate::verifier::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierChoice {
    Reference,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Directory of `<package>/<screen>.json` + screenshot pairs.
    pub corpus: PathBuf,
    pub metadata: PathBuf,
    pub exclusions: Option<PathBuf>,
    /// Keyword registry; the built-in registry when absent.
    pub keywords: Option<PathBuf>,
    /// Stock class names used to label training positives.
    pub official_classes: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,

    pub grid_cols: usize,
    pub grid_rows: usize,
    pub margin_fraction: f64,
    /// Mined negatives per candidate crop of the same kind.
    pub negatives_per_candidate: f64,

    pub classifier: ClassifierChoice,
    /// Program and arguments; the exchange directory is appended.
    pub scorer_command: Option<String>,
    pub scorer_threshold: f64,
    pub input_size: u32,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub l2: f64,
    pub threshold: f64,
    pub tune_threshold: bool,
    pub failure_margin: f64,

    pub install_threshold: f64,
    pub category_min_count: usize,
    pub buckets: usize,

    pub contact_thumbnail: u32,
    pub contact_columns: u32,
    pub heatmap_scale: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            corpus: PathBuf::from("screens"),
            metadata: PathBuf::from("metadata.csv"),
            exclusions: None,
            keywords: None,
            official_classes: None,
            out: PathBuf::from("out"),
            seed: 0,
            grid_cols: DEFAULT_COLS,
            grid_rows: DEFAULT_ROWS,
            margin_fraction: DEFAULT_MARGIN_FRACTION,
            negatives_per_candidate: 2.0,
            classifier: ClassifierChoice::Reference,
            scorer_command: None,
            scorer_threshold: 0.5,
            input_size: train.input_size,
            learning_rate: train.learning_rate,
            max_epochs: train.max_epochs,
            batch_size: train.batch_size,
            patience: train.patience,
            l2: train.l2,
            threshold: train.threshold,
            tune_threshold: train.tune_threshold,
            failure_margin: train.failure_margin,
            install_threshold: DEFAULT_INSTALL_THRESHOLD,
            category_min_count: DEFAULT_CATEGORY_MIN_COUNT,
            buckets: DEFAULT_BUCKETS,
            contact_thumbnail: 48,
            contact_columns: 10,
            heatmap_scale: 8,
        }
    }
}

fn config_err(message: impl Into<String>) -> PipelineError {
    PipelineError::Config(message.into())
}

impl PipelineConfig {
    /// Parses, resolves relative paths against `base_dir`, and validates.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = if base.as_os_str().is_empty() { Path::new(".") } else { base };
        Self::from_toml(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut self.corpus);
        resolve(&mut self.metadata);
        resolve(&mut self.out);
        for p in [&mut self.exclusions, &mut self.keywords, &mut self.official_classes]
            .into_iter()
            .flatten()
        {
            resolve(p);
        }
    }

    /// Checks values and that every input path exists.
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !self.corpus.is_dir() {
            return Err(config_err(format!("corpus directory {} not found", self.corpus.display())));
        }
        let files = [Some(&self.metadata), self.exclusions.as_ref(), self.keywords.as_ref(), self.official_classes.as_ref()];
        for p in files.into_iter().flatten() {
            if !p.is_file() {
                return Err(config_err(format!("input file {} not found", p.display())));
            }
        }
        if self.grid_cols == 0 || self.grid_rows == 0 {
            return Err(config_err("grid_cols and grid_rows must be positive"));
        }
        if !(self.margin_fraction >= 0.0 && self.margin_fraction.is_finite()) {
            return Err(config_err("margin_fraction must be a non-negative number"));
        }
        if !(self.negatives_per_candidate > 0.0 && self.negatives_per_candidate.is_finite()) {
            return Err(config_err("negatives_per_candidate must be positive"));
        }
        for (name, t) in [("threshold", self.threshold), ("scorer_threshold", self.scorer_threshold)] {
            if !(t > 0.0 && t < 1.0) {
                return Err(config_err(format!("{name} must lie in (0, 1)")));
            }
        }
        if self.classifier == ClassifierChoice::External
            && self.scorer_command.as_deref().is_none_or(|c| c.trim().is_empty())
        {
            return Err(config_err("classifier = \"external\" requires scorer_command"));
        }
        if self.input_size == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(config_err("input_size, batch_size and max_epochs must be positive"));
        }
        if self.buckets == 0 || self.contact_thumbnail == 0 || self.contact_columns == 0 || self.heatmap_scale == 0 {
            return Err(config_err("buckets and report sizes must be positive"));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            input_size: self.input_size,
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            l2: self.l2,
            threshold: self.threshold,
            tune_threshold: self.tune_threshold,
            seed: self.seed,
            failure_margin: self.failure_margin,
        }
    }

    pub fn keyword_registry(&self) -> Result<KeywordRegistry, PipelineError> {
        match &self.keywords {
            Some(p) => KeywordRegistry::load(p).map_err(|e| config_err(e.to_string())),
            None => Ok(KeywordRegistry::default()),
        }
    }

    pub fn official_classes(&self) -> Result<OfficialClasses, PipelineError> {
        match &self.official_classes {
            Some(p) => OfficialClasses::load(p).map_err(|e| config_err(e.to_string())),
            None => Ok(OfficialClasses::default()),
        }
    }
}
