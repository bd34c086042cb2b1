//! Per-kind crop verification and aggregation to per-app usage.
//!
//! An app uses a component kind iff at least one of its candidate crops for
//! that kind scores at or above the kind's threshold. A single positive
//! screen is enough, which keeps components that are occluded on some
//! screens.

mod external;
mod model;
mod split;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::ComponentKind;

pub use external::{read_manifest, serve_exchange, ExternalScorer, MANIFEST_FILE, SCORES_FILE};
pub use model::{thumbnail, train, Metrics, TrainConfig, TrainReport, TrainingSample, VerifierModel};
pub use split::{
    split_dataset, DatasetSplit, Partition, SplitSample, MIN_APPS, TRAIN_FRACTION, VALIDATION_FRACTION,
};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("samples carry a single label; both positives and negatives are required")]
    SingleLabel,
    #[error("samples come from {found} apps; at least {required} are required")]
    TooFewApps { found: usize, required: usize },
    #[error("training split for {0} has a single label")]
    SingleLabelKind(ComponentKind),
    #[error("decision threshold {0} is outside (0, 1)")]
    InvalidThreshold(f64),
    #[error(
        "training for {kind} failed: validation accuracy {validation_accuracy:.3} is at chance \
         (epochs {}, best epoch {}, train accuracy {:.3})",
        report.epochs_run,
        report.best_epoch,
        report.train.accuracy
    )]
    TrainingFailed {
        kind: ComponentKind,
        validation_accuracy: f64,
        report: Box<TrainReport>,
    },
    #[error("malformed image: {0}")]
    MalformedImage(String),
    #[error("malformed model file: {0}")]
    ModelFormat(String),
    #[error("no verifier model for {0}")]
    MissingModel(ComponentKind),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("external scorer failed ({status}): {stderr}")]
    ExternalFailed { status: String, stderr: String },
    #[error("external scorer protocol violation: {0}")]
    ExternalProtocol(String),
}

/// Candidate and verified counts for one kind in one app.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindUsage {
    pub candidate_count: usize,
    pub verified_count: usize,
    pub uses: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppComponentUsage {
    pub package_id: String,
    pub kinds: BTreeMap<ComponentKind, KindUsage>,
}

impl AppComponentUsage {
    pub fn empty(package_id: &str) -> Self {
        Self {
            package_id: package_id.to_string(),
            kinds: ComponentKind::ALL.iter().map(|k| (*k, KindUsage::default())).collect(),
        }
    }

    pub fn uses(&self, kind: ComponentKind) -> bool {
        self.kinds.get(&kind).is_some_and(|u| u.uses)
    }

    /// True iff any kind is used.
    pub fn uses_any(&self) -> bool {
        self.kinds.values().any(|u| u.uses)
    }

    /// Counts add; `uses` is recomputed from the merged verified count.
    pub fn merge(&mut self, other: &AppComponentUsage) {
        for (kind, u) in &other.kinds {
            let e = self.kinds.entry(*kind).or_default();
            e.candidate_count += u.candidate_count;
            e.verified_count += u.verified_count;
            e.uses = e.verified_count >= 1;
        }
    }
}

/// One detection after scoring. `score` is `None` when the crop was
/// degenerate and could not be scored; it still counts as a candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredCandidate {
    pub kind: ComponentKind,
    pub score: Option<f64>,
}

/// Applies the any-positive rule per kind.
pub fn verify_app(
    package_id: &str,
    candidates: &[ScoredCandidate],
    thresholds: &BTreeMap<ComponentKind, f64>,
) -> Result<AppComponentUsage, VerifyError> {
    let mut usage = AppComponentUsage::empty(package_id);
    for c in candidates {
        let entry = usage.kinds.entry(c.kind).or_default();
        entry.candidate_count += 1;
        if let Some(score) = c.score {
            let t = thresholds.get(&c.kind).ok_or(VerifyError::MissingModel(c.kind))?;
            if score >= *t {
                entry.verified_count += 1;
            }
        }
    }
    for u in usage.kinds.values_mut() {
        u.uses = u.verified_count >= 1;
    }
    Ok(usage)
}

/// Anything that maps crops to scores in [0, 1].
pub trait Scorer: Sync {
    fn threshold(&self, kind: ComponentKind) -> Option<f64>;
    fn score_batch(&self, batch: &[(ComponentKind, &RgbImage)]) -> Result<Vec<f64>, VerifyError>;

    fn thresholds(&self) -> BTreeMap<ComponentKind, f64> {
        ComponentKind::ALL
            .iter()
            .filter_map(|k| self.threshold(*k).map(|t| (*k, t)))
            .collect()
    }
}

/// One trained model per kind.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelSet {
    pub models: BTreeMap<ComponentKind, VerifierModel>,
}

impl ModelSet {
    pub fn insert(&mut self, model: VerifierModel) {
        self.models.insert(model.kind, model);
    }

    pub fn get(&self, kind: ComponentKind) -> Option<&VerifierModel> {
        self.models.get(&kind)
    }

    pub fn file_name(kind: ComponentKind) -> String {
        format!("{kind}.model")
    }

    pub fn save_dir(&self, dir: &Path) -> Result<(), VerifyError> {
        fs::create_dir_all(dir).map_err(|e| VerifyError::Io(dir.display().to_string(), e))?;
        for (kind, model) in &self.models {
            model.save(&dir.join(Self::file_name(*kind)))?;
        }
        Ok(())
    }

    /// Loads every `<Kind>.model` present in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, VerifyError> {
        let mut set = Self::default();
        for kind in ComponentKind::ALL {
            let path = dir.join(Self::file_name(kind));
            if path.exists() {
                let model = VerifierModel::load(&path)?;
                if model.kind != kind {
                    return Err(VerifyError::ModelFormat(format!(
                        "{} declares kind {}",
                        path.display(),
                        model.kind
                    )));
                }
                set.insert(model);
            }
        }
        Ok(set)
    }
}

impl Scorer for ModelSet {
    fn threshold(&self, kind: ComponentKind) -> Option<f64> {
        self.get(kind).map(|m| m.threshold)
    }

    fn score_batch(&self, batch: &[(ComponentKind, &RgbImage)]) -> Result<Vec<f64>, VerifyError> {
        batch
            .par_iter()
            .map(|(kind, crop)| self.get(*kind).ok_or(VerifyError::MissingModel(*kind))?.score(crop))
            .collect()
    }
}
