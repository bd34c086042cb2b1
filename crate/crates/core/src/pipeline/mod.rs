//! Staged pipeline driver.
//!
//! Each stage writes into `<out>/<stage>/` through a temporary directory
//! that is renamed into place when the stage succeeds. `<out>/manifest.json`
//! records, per stage, a fingerprint of its inputs (relevant settings,
//! external input files, and upstream outputs) and the hash of every output
//! file. A stage whose fingerprint and outputs are unchanged is skipped.

mod config;
mod stages;
pub mod tables;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytics::AnalyticsError;
use crate::report::ReportError;
use crate::verifier::VerifyError;

pub use config::{ClassifierChoice, PipelineConfig};
pub use stages::{build_scorer, load_usage};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Detect,
    Heatmap,
    Crop,
    Train,
    Verify,
    Analyze,
    Report,
}

impl Stage {
    /// Execution order. Heatmaps come before crops because negative mining
    /// needs them.
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Detect,
        Stage::Heatmap,
        Stage::Crop,
        Stage::Train,
        Stage::Verify,
        Stage::Analyze,
        Stage::Report,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Detect => "detect",
            Stage::Heatmap => "heatmap",
            Stage::Crop => "crop",
            Stage::Train => "train",
            Stage::Verify => "verify",
            Stage::Analyze => "analyze",
            Stage::Report => "report",
        }
    }

    pub fn dependencies(&self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Detect => &[Stage::Ingest],
            Stage::Heatmap => &[Stage::Ingest, Stage::Detect],
            Stage::Crop => &[Stage::Ingest, Stage::Detect, Stage::Heatmap],
            Stage::Train => &[Stage::Crop],
            Stage::Verify => &[Stage::Ingest, Stage::Crop, Stage::Train],
            Stage::Analyze => &[Stage::Ingest, Stage::Verify],
            Stage::Report => &[Stage::Ingest, Stage::Heatmap, Stage::Crop, Stage::Verify, Stage::Analyze],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("stage `{stage}` needs the outputs of `{needs}`; run `{needs}` first")]
    MissingDependency { stage: Stage, needs: Stage },
    #[error("input: {0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("analysis: {0}")]
    Analysis(#[from] AnalyticsError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{0}")]
    Other(String),
}

impl PipelineError {
    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
        move |source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::MissingDependency { .. } => 3,
            PipelineError::Input(_) => 4,
            PipelineError::Io { .. } => 5,
            PipelineError::Verify(VerifyError::ExternalFailed { .. } | VerifyError::ExternalProtocol(_)) => 7,
            PipelineError::Verify(_) => 6,
            PipelineError::Report(_) => 8,
            PipelineError::Analysis(_) => 9,
            PipelineError::Other(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct StageRecord {
    fingerprint: String,
    /// Relative path -> sha256 of each output file.
    outputs: BTreeMap<String, String>,
}

impl StageRecord {
    fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (path, hash) in &self.outputs {
            h.update(path.as_bytes());
            h.update([0]);
            h.update(hash.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Manifest {
    stages: BTreeMap<Stage, StageRecord>,
}

fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(PipelineError::io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Relative path -> content hash for every file under `dir`, sorted.
fn hash_tree(dir: &Path) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(PipelineError::io(&d))? {
            let path = entry.map_err(PipelineError::io(&d))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(dir)
                    .expect("walked below dir")
                    .to_string_lossy()
                    .replace('\\', "/");
                out.insert(rel, sha256_file(&path)?);
            }
        }
    }
    Ok(out)
}

fn digest_map(map: &BTreeMap<String, String>) -> String {
    StageRecord {
        fingerprint: String::new(),
        outputs: map.clone(),
    }
    .digest()
}

pub struct Pipeline {
    pub config: PipelineConfig,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.out
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.config.out.join(stage.as_str())
    }

    fn manifest_path(&self) -> PathBuf {
        self.config.out.join(MANIFEST_FILE)
    }

    fn load_manifest(&self) -> Result<Manifest, PipelineError> {
        let path = self.manifest_path();
        if !path.exists() {
            return Ok(Manifest::default());
        }
        tables::read_json(&path)
    }

    fn save_manifest(&self, manifest: &Manifest) -> Result<(), PipelineError> {
        let path = self.manifest_path();
        let tmp = self.config.out.join(format!(".{MANIFEST_FILE}.tmp"));
        tables::write_json(&tmp, manifest)?;
        fs::rename(&tmp, &path).map_err(PipelineError::io(&path))
    }

    /// Settings that influence a stage's outputs. Paths are left out so a
    /// relocated corpus with identical content keeps its fingerprints.
    fn stage_params(&self, stage: Stage) -> Value {
        let c = &self.config;
        match stage {
            Stage::Ingest | Stage::Detect => json!({}),
            Stage::Heatmap => json!({ "grid_cols": c.grid_cols, "grid_rows": c.grid_rows }),
            Stage::Crop => json!({
                "margin_fraction": c.margin_fraction,
                "negatives_per_candidate": c.negatives_per_candidate,
                "seed": c.seed,
            }),
            Stage::Train => json!({ "classifier": c.classifier, "train": c.train_config() }),
            Stage::Verify => json!({
                "classifier": c.classifier,
                "scorer_command": c.scorer_command,
                "scorer_threshold": c.scorer_threshold,
            }),
            Stage::Analyze => json!({
                "install_threshold": c.install_threshold,
                "category_min_count": c.category_min_count,
                "buckets": c.buckets,
            }),
            Stage::Report => json!({
                "contact_thumbnail": c.contact_thumbnail,
                "contact_columns": c.contact_columns,
                "heatmap_scale": c.heatmap_scale,
            }),
        }
    }

    /// Hashes of files outside the output directory that a stage reads.
    fn external_inputs(&self, stage: Stage) -> Result<BTreeMap<String, String>, PipelineError> {
        let c = &self.config;
        let mut out = BTreeMap::new();
        match stage {
            Stage::Ingest => {
                out.insert("corpus".into(), digest_map(&hash_tree(&c.corpus)?));
                out.insert("metadata".into(), sha256_file(&c.metadata)?);
                if let Some(p) = &c.exclusions {
                    out.insert("exclusions".into(), sha256_file(p)?);
                }
            }
            Stage::Detect => {
                if let Some(p) = &c.keywords {
                    out.insert("keywords".into(), sha256_file(p)?);
                }
            }
            Stage::Crop => {
                if let Some(p) = &c.official_classes {
                    out.insert("official_classes".into(), sha256_file(p)?);
                }
            }
            _ => {}
        }
        Ok(out)
    }

    fn fingerprint(&self, stage: Stage, manifest: &Manifest) -> Result<String, PipelineError> {
        let mut deps = BTreeMap::new();
        for dep in stage.dependencies() {
            let record = manifest
                .stages
                .get(dep)
                .filter(|_| self.stage_dir(*dep).is_dir())
                .ok_or(PipelineError::MissingDependency { stage, needs: *dep })?;
            deps.insert(dep.as_str(), record.digest());
        }
        let doc = json!({
            "stage": stage,
            "params": self.stage_params(stage),
            "inputs": self.external_inputs(stage)?,
            "upstream": deps,
        });
        Ok(hex::encode(Sha256::digest(doc.to_string().as_bytes())))
    }

    /// Runs one stage, or skips it when its inputs and outputs are unchanged
    /// and `force` is false.
    pub fn run_stage(&self, stage: Stage, force: bool) -> Result<StageOutcome, PipelineError> {
        fs::create_dir_all(&self.config.out).map_err(PipelineError::io(&self.config.out))?;
        let mut manifest = self.load_manifest()?;
        let fingerprint = self.fingerprint(stage, &manifest)?;
        let dir = self.stage_dir(stage);
        if !force {
            if let Some(record) = manifest.stages.get(&stage) {
                if record.fingerprint == fingerprint && dir.is_dir() && hash_tree(&dir)? == record.outputs {
                    info!("{stage}: inputs unchanged, skipped");
                    return Ok(StageOutcome::Skipped);
                }
            }
        }
        info!("{stage}: running");
        let tmp = self.config.out.join(format!(".{stage}.tmp"));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(PipelineError::io(&tmp))?;
        }
        fs::create_dir_all(&tmp).map_err(PipelineError::io(&tmp))?;
        let result = stages::run(self, stage, &tmp);
        if let Err(e) = result {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
        let outputs = hash_tree(&tmp)?;
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(PipelineError::io(&dir))?;
        }
        fs::rename(&tmp, &dir).map_err(PipelineError::io(&dir))?;
        manifest.stages.insert(stage, StageRecord { fingerprint, outputs });
        self.save_manifest(&manifest)?;
        info!("{stage}: done");
        Ok(StageOutcome::Ran)
    }

    /// Runs every stage in order.
    pub fn run_all(&self, force: bool) -> Result<Vec<(Stage, StageOutcome)>, PipelineError> {
        Stage::ALL
            .iter()
            .map(|s| self.run_stage(*s, force).map(|o| (*s, o)))
            .collect()
    }
}
