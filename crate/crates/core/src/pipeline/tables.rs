//! Row types of the CSV artifacts exchanged between stages.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::crop::CropLabel;
use crate::detector::ComponentKind;

pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), PipelineError> {
    let io = PipelineError::io(path);
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| PipelineError::Other(format!("{}: {e}", path.display())))?;
    w.write_record(header).map_err(|e| PipelineError::Other(e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| PipelineError::Other(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(io)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Other(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(PipelineError::io(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(PipelineError::io(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppRow {
    pub package: String,
    pub screens: usize,
    pub excluded: bool,
    pub exclusion_reason: String,
    pub has_metadata: bool,
    pub avg_rating: Option<f64>,
    pub installs: Option<u64>,
    pub category: String,
}

pub const APP_HEADER: &[&str] = &[
    "package",
    "screens",
    "excluded",
    "exclusion_reason",
    "has_metadata",
    "avg_rating",
    "installs",
    "category",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub record: usize,
    pub package: String,
    pub reason: String,
}

pub const REJECTED_HEADER: &[&str] = &["record", "package", "reason"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub package: String,
    pub screen: String,
    pub kind: ComponentKind,
    pub node_path: String,
    pub bounds: String,
    pub matched_via: String,
    pub keyword: String,
}

pub const DETECTION_HEADER: &[&str] = &["package", "screen", "kind", "node_path", "bounds", "matched_via", "keyword"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateCountRow {
    pub package: String,
    pub kind: ComponentKind,
    pub candidates: usize,
}

pub const CANDIDATE_COUNT_HEADER: &[&str] = &["package", "kind", "candidates"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSummaryRow {
    pub kind: ComponentKind,
    pub total: u64,
    pub argmax_row: Option<usize>,
    pub argmax_col: Option<usize>,
    pub median_width: Option<f64>,
    pub median_height: Option<f64>,
}

pub const HEATMAP_SUMMARY_HEADER: &[&str] =
    &["kind", "total", "argmax_row", "argmax_col", "median_width", "median_height"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRow {
    pub kind: ComponentKind,
    pub label: CropLabel,
    pub package: String,
    pub screen: String,
    pub rect: String,
}

pub const CROP_HEADER: &[&str] = &["kind", "label", "package", "screen", "rect"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceRow {
    pub file: String,
    pub kind: ComponentKind,
    pub label: CropLabel,
    pub package: String,
    pub screen: String,
    pub node_path: String,
    /// Candidate whose class or ancestors name the stock implementation.
    pub official: bool,
}

pub const PROVENANCE_HEADER: &[&str] = &["file", "kind", "label", "package", "screen", "node_path", "official"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegenerateRow {
    pub package: String,
    pub screen: String,
    pub kind: ComponentKind,
    pub node_path: String,
    pub reason: String,
}

pub const DEGENERATE_HEADER: &[&str] = &["package", "screen", "kind", "node_path", "reason"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRow {
    pub package: String,
    pub partition: String,
}

pub const SPLIT_HEADER: &[&str] = &["package", "partition"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub kind: ComponentKind,
    pub partition: String,
    pub n: usize,
    pub positives: usize,
    pub accuracy: f64,
    pub balanced_accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub threshold: f64,
    pub epochs: usize,
    pub best_epoch: usize,
}

pub const TRAIN_HEADER: &[&str] = &[
    "kind",
    "partition",
    "n",
    "positives",
    "accuracy",
    "balanced_accuracy",
    "precision",
    "recall",
    "threshold",
    "epochs",
    "best_epoch",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub file: String,
    pub kind: ComponentKind,
    pub package: String,
    pub screen: String,
    pub score: f64,
    pub verified: bool,
}

pub const SCORE_HEADER: &[&str] = &["file", "kind", "package", "screen", "score", "verified"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRow {
    pub package: String,
    pub kind: ComponentKind,
    pub candidate_count: usize,
    pub verified_count: usize,
    pub uses: bool,
}

pub const USAGE_HEADER: &[&str] = &["package", "kind", "candidate_count", "verified_count", "uses"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub metric: String,
    pub rule: String,
    pub threshold: f64,
    pub low_apps: usize,
    pub high_apps: usize,
}

pub const GROUP_HEADER: &[&str] = &["metric", "rule", "threshold", "low_apps", "high_apps"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupUsageRow {
    pub metric: String,
    /// Component kind, or `any` for use of at least one kind.
    pub kind: String,
    pub low_apps: usize,
    pub low_users: usize,
    pub low_rate: Option<f64>,
    pub low_pct: String,
    pub high_apps: usize,
    pub high_users: usize,
    pub high_rate: Option<f64>,
    pub high_pct: String,
    pub high_share: Option<f64>,
}

pub const GROUP_USAGE_HEADER: &[&str] = &[
    "metric",
    "kind",
    "low_apps",
    "low_users",
    "low_rate",
    "low_pct",
    "high_apps",
    "high_users",
    "high_rate",
    "high_pct",
    "high_share",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub metric: String,
    pub kind: String,
    pub bucket: usize,
    pub apps: usize,
    pub users: usize,
    pub fraction: f64,
    pub min_value: f64,
    pub max_value: f64,
}

pub const BUCKET_HEADER: &[&str] = &["metric", "kind", "bucket", "apps", "users", "fraction", "min_value", "max_value"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub metric: String,
    pub kind: String,
    pub n: usize,
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
}

pub const CORRELATION_HEADER: &[&str] = &["metric", "kind", "n", "rho", "p_value"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRow {
    /// `avg_rating` or `log10_installs`.
    pub metric: String,
    pub kind: String,
    /// `users` or `non_users` of the kind.
    pub group: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
}

pub const BOX_HEADER: &[&str] = &[
    "metric",
    "kind",
    "group",
    "n",
    "min",
    "q1",
    "median",
    "q3",
    "max",
    "whisker_low",
    "whisker_high",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub kind: String,
    pub rank: usize,
    pub category: String,
    pub apps: usize,
    pub users: usize,
    pub rate: f64,
    pub rate_pct: String,
}

pub const CATEGORY_HEADER: &[&str] = &["kind", "rank", "category", "apps", "users", "rate", "rate_pct"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactRow {
    pub kind: ComponentKind,
    pub category: String,
    pub thumbnails: usize,
    pub file: String,
}

pub const CONTACT_HEADER: &[&str] = &["kind", "category", "thumbnails", "file"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRow {
    pub file: String,
    pub source: String,
}

pub const FILE_HEADER: &[&str] = &["file", "source"];
