//! Walks a corpus directory, joins screens with metadata and applies the
//! exclusion list.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::hierarchy::{parse_view_hierarchy, Screen, ScreenshotRef};
use super::metadata::{AppMetadata, MetadataTable};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus at {0} contains no app directories")]
    Empty(PathBuf),
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    ExclusionList,
    NoScreens,
}

impl ExclusionReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExclusionReason::ExclusionList => "exclusion_list",
            ExclusionReason::NoScreens => "no_screens",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppRecord {
    pub package_id: String,
    pub screens: Vec<Screen>,
    pub metadata: Option<AppMetadata>,
    pub exclusion: Option<ExclusionReason>,
}

impl AppRecord {
    pub fn is_excluded(&self) -> bool {
        self.exclusion.is_some()
    }

    /// Included in the statistics: not excluded and joined with metadata.
    pub fn is_analyzable(&self) -> bool {
        !self.is_excluded() && self.metadata.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub total: usize,
    pub excluded: usize,
    /// Non-excluded apps without a metadata row.
    pub metadata_missing: usize,
    pub analyzable: usize,
    pub screens: usize,
    pub dropped_screens: usize,
    pub normalized_bounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub apps: Vec<AppRecord>,
    pub summary: CorpusSummary,
    pub warnings: Vec<String>,
}

impl Corpus {
    pub fn app(&self, package_id: &str) -> Option<&AppRecord> {
        self.apps.iter().find(|a| a.package_id == package_id)
    }

    pub fn analyzable(&self) -> impl Iterator<Item = &AppRecord> {
        self.apps.iter().filter(|a| a.is_analyzable())
    }
}

/// File naming inside `<root>/<package_id>/`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub hierarchy_ext: String,
    /// Tried in order for each screen.
    pub screenshot_exts: Vec<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            hierarchy_ext: "json".into(),
            screenshot_exts: vec!["jpg".into(), "jpeg".into(), "png".into()],
        }
    }
}

/// Newline-delimited package ids; blank lines and `#` comments are ignored.
pub fn parse_exclusions(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn load_exclusions(path: &Path) -> Result<BTreeSet<String>, CorpusError> {
    Ok(parse_exclusions(
        &fs::read_to_string(path).map_err(io_error(path))?,
    ))
}

/// Orders numeric ids numerically, others lexically after them.
fn screen_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

struct LoadedApp {
    screens: Vec<Screen>,
    warnings: Vec<String>,
    dropped: usize,
}

fn load_app(dir: &Path, package_id: &str, opts: &IngestOptions) -> Result<LoadedApp, CorpusError> {
    let mut stems: Vec<String> = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_error(dir))? {
        let path = entry.map_err(io_error(dir))?.path();
        let is_hierarchy = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case(&opts.hierarchy_ext));
        if is_hierarchy && path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort_by(|a, b| screen_order(a, b));

    let mut loaded = LoadedApp {
        screens: Vec::with_capacity(stems.len()),
        warnings: Vec::new(),
        dropped: 0,
    };
    for stem in stems {
        let json_path = dir.join(format!("{stem}.{}", opts.hierarchy_ext));
        let shot_path = opts
            .screenshot_exts
            .iter()
            .map(|ext| dir.join(format!("{stem}.{ext}")))
            .find(|p| p.is_file());
        let Some(shot_path) = shot_path else {
            loaded.dropped += 1;
            loaded
                .warnings
                .push(format!("{package_id}/{stem}: screenshot missing, screen dropped"));
            continue;
        };
        let (width, height) = match image::image_dimensions(&shot_path) {
            Ok(d) => d,
            Err(e) => {
                loaded.dropped += 1;
                loaded
                    .warnings
                    .push(format!("{package_id}/{stem}: unreadable screenshot ({e}), screen dropped"));
                continue;
            }
        };
        let text = fs::read_to_string(&json_path).map_err(io_error(&json_path))?;
        let screen = parse_view_hierarchy(&text).and_then(|root| {
            Screen::new(
                stem.clone(),
                root,
                ScreenshotRef {
                    path: shot_path,
                    width,
                    height,
                },
            )
        });
        match screen {
            Ok(s) if s.screenshot.width > 0 && s.screenshot.height > 0 => loaded.screens.push(s),
            Ok(_) => {
                loaded.dropped += 1;
                loaded
                    .warnings
                    .push(format!("{package_id}/{stem}: empty screenshot, screen dropped"));
            }
            Err(e) => {
                loaded.dropped += 1;
                loaded
                    .warnings
                    .push(format!("{package_id}/{stem}: {e}, screen dropped"));
            }
        }
    }
    Ok(loaded)
}

/// Builds the corpus from `<root>/<package_id>/<screen_id>.{json,jpg}`.
///
/// Excluded apps and apps without metadata stay in the result, flagged, so
/// detection can still run on them while analytics skips them.
pub fn assemble_corpus(
    screens_dir: &Path,
    metadata: &MetadataTable,
    exclusions: &BTreeSet<String>,
    opts: &IngestOptions,
) -> Result<Corpus, CorpusError> {
    let mut packages: Vec<(String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(screens_dir).map_err(io_error(screens_dir))? {
        let path = entry.map_err(io_error(screens_dir))?.path();
        if !path.is_dir() {
            continue;
        }
        if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
            if !name.is_empty() && !name.starts_with('.') {
                packages.push((name.to_string(), path));
            }
        }
    }
    if packages.is_empty() {
        return Err(CorpusError::Empty(screens_dir.to_path_buf()));
    }
    packages.sort();

    let loaded: Vec<LoadedApp> = packages
        .par_iter()
        .map(|(pkg, dir)| load_app(dir, pkg, opts))
        .collect::<Result<_, _>>()?;

    let mut summary = CorpusSummary::default();
    let mut warnings = Vec::new();
    let mut apps = Vec::with_capacity(packages.len());
    for ((package_id, _), app) in packages.into_iter().zip(loaded) {
        for w in &app.warnings {
            warn!("{w}");
        }
        warnings.extend(app.warnings);
        summary.dropped_screens += app.dropped;
        summary.screens += app.screens.len();
        summary.normalized_bounds += app
            .screens
            .iter()
            .map(|s| s.root.normalized_count())
            .sum::<usize>();

        let exclusion = if exclusions.contains(&package_id) {
            Some(ExclusionReason::ExclusionList)
        } else if app.screens.is_empty() {
            warnings.push(format!("{package_id}: no usable screens, app skipped by analytics"));
            Some(ExclusionReason::NoScreens)
        } else {
            None
        };
        let meta = metadata.get(&package_id).cloned();
        apps.push(AppRecord {
            package_id,
            screens: app.screens,
            metadata: meta,
            exclusion,
        });
    }

    summary.total = apps.len();
    summary.excluded = apps.iter().filter(|a| a.is_excluded()).count();
    summary.metadata_missing = apps
        .iter()
        .filter(|a| !a.is_excluded() && a.metadata.is_none())
        .count();
    summary.analyzable = apps.iter().filter(|a| a.is_analyzable()).count();
    Ok(Corpus {
        apps,
        summary,
        warnings,
    })
}
