//! Stage bodies. Each reads upstream artifacts from `<out>/<stage>/` and
//! writes its own outputs into the temporary directory it is given.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use super::tables::*;
use super::{ClassifierChoice, Pipeline, PipelineError, Stage};
use crate::analytics::{
    bucket_curve, category_rates, five_number_summary, pearson, split_by_median, split_by_threshold, AnalyticsError,
    AppStats, FiveNumberSummary, GroupSplit, Metric,
};
use crate::crop::{candidate_crop, load_screenshot, negative_sample, CropError, CropLabel, CropSample};
use crate::detector::{detect_in_screen, parse_path, ComponentKind, Detection, MatchVia};
use crate::heatmap::Heatmap;
use crate::ingest::{assemble_corpus, load_exclusions, load_metadata, Corpus, IngestOptions, Screen};
use crate::report::{box_plot_chart, contact_sheet, curve_chart, format_pct, grouped_bar_chart, BarGroup, ReportError};
use crate::verifier::{
    split_dataset, thumbnail, train, verify_app, AppComponentUsage, ExternalScorer, KindUsage, ModelSet,
    ScoredCandidate, Scorer, TrainingSample, VerifyError,
};

const CORPUS_FILE: &str = "corpus.json";
const HEATMAPS_FILE: &str = "heatmaps.json";
const EXTERNAL_MARKER: &str = "external_scorer.txt";

fn input(e: impl Display) -> PipelineError {
    PipelineError::Input(e.to_string())
}

pub(super) fn run(p: &Pipeline, stage: Stage, out: &Path) -> Result<(), PipelineError> {
    match stage {
        Stage::Ingest => ingest(p, out),
        Stage::Detect => detect(p, out),
        Stage::Heatmap => heatmap(p, out),
        Stage::Crop => crop(p, out),
        Stage::Train => train_stage(p, out),
        Stage::Verify => verify(p, out),
        Stage::Analyze => analyze(p, out),
        Stage::Report => report(p, out),
    }
}

fn write_lines(path: &Path, lines: &[String]) -> Result<(), PipelineError> {
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).map_err(PipelineError::io(path))
}

fn save_png<P>(path: &Path, img: &image::ImageBuffer<P, Vec<u8>>) -> Result<(), PipelineError>
where
    P: image::Pixel<Subpixel = u8> + image::PixelWithColorType,
{
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(PipelineError::io(parent))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| PipelineError::Other(format!("{}: {e}", path.display())))
}

fn load_png(path: &Path) -> Result<RgbImage, PipelineError> {
    Ok(image::open(path)
        .map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?
        .to_rgb8())
}

// ---------------------------------------------------------------- ingest

fn ingest(p: &Pipeline, out: &Path) -> Result<(), PipelineError> {
    let c = &p.config;
    let metadata = load_metadata(&c.metadata).map_err(input)?;
    let exclusions = match &c.exclusions {
        Some(path) => load_exclusions(path).map_err(input)?,
        None => BTreeSet::new(),
    };
    let mut corpus = assemble_corpus(&c.corpus, &metadata, &exclusions, &IngestOptions::default()).map_err(input)?;

    // Screenshot paths are stored relative to the corpus root so the
    // artifact does not depend on where the corpus lives.
    for app in &mut corpus.apps {
        for screen in &mut app.screens {
            if let Ok(rel) = screen.screenshot.path.strip_prefix(&c.corpus) {
                screen.screenshot.path = rel.to_path_buf();
            }
        }
    }

    let path = out.join(CORPUS_FILE);
    let mut bytes = serde_json::to_vec(&corpus).map_err(|e| PipelineError::Other(e.to_string()))?;
    bytes.push(b'\n');
    fs::write(&path, bytes).map_err(PipelineError::io(&path))?;

    let apps: Vec<AppRow> = corpus
        .apps
        .iter()
        .map(|a| AppRow {
            package: a.package_id.clone(),
            screens: a.screens.len(),
            excluded: a.is_excluded(),
            exclusion_reason: a.exclusion.map(|r| r.as_str().to_string()).unwrap_or_default(),
            has_metadata: a.metadata.is_some(),
            avg_rating: a.metadata.as_ref().map(|m| m.avg_rating),
            installs: a.metadata.as_ref().map(|m| m.installs),
            category: a.metadata.as_ref().map(|m| m.category.clone()).unwrap_or_default(),
        })
        .collect();
    write_csv(&out.join("apps.csv"), APP_HEADER, &apps)?;

    let rejected: Vec<RejectedRow> = metadata
        .rejected
        .iter()
        .map(|r| RejectedRow {
            record: r.record,
            package: r.package.clone(),
            reason: r.reason.clone(),
        })
        .collect();
    write_csv(&out.join("rejected_metadata.csv"), REJECTED_HEADER, &rejected)?;
    write_json(&out.join("summary.json"), &corpus.summary)?;
    write_lines(&out.join("warnings.txt"), &corpus.warnings)
}

/// Loads the ingested corpus with screenshot paths made absolute again.
fn load_corpus(p: &Pipeline) -> Result<Corpus, PipelineError> {
    let path = p.stage_dir(Stage::Ingest).join(CORPUS_FILE);
    let bytes = fs::read(&path).map_err(PipelineError::io(&path))?;
    let mut corpus: Corpus =
        serde_json::from_slice(&bytes).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
    for app in &mut corpus.apps {
        for screen in &mut app.screens {
            screen.screenshot.path = p.config.corpus.join(&screen.screenshot.path);
        }
    }
    Ok(corpus)
}

type ScreenKey = (String, String);

fn screen_index(corpus: &Corpus) -> BTreeMap<ScreenKey, &Screen> {
    corpus
        .apps
        .iter()
        .flat_map(|a| a.screens.iter().map(move |s| ((a.package_id.clone(), s.screen_id.clone()), s)))
        .collect()
}

// ---------------------------------------------------------------- detect

fn detect(p: &Pipeline, out: &Path) -> Result<(), PipelineError> {
    let corpus = load_corpus(p)?;
    let registry = p.config.keyword_registry()?;
    let per_app: Vec<Vec<Detection>> = corpus
        .apps
        .par_iter()
        .map(|app| {
            app.screens
                .iter()
                .flat_map(|s| detect_in_screen(&app.package_id, s, registry.rules()))
                .collect()
        })
        .collect();

    let mut rows = Vec::new();
    let mut counts = Vec::new();
    for (app, dets) in corpus.apps.iter().zip(&per_app) {
        for d in dets {
            rows.push(DetectionRow {
                package: d.package_id.clone(),
                screen: d.screen_id.clone(),
                kind: d.kind,
                node_path: d.path_string(),
                bounds: d.bounds.to_string(),
                matched_via: d.matched_via.as_str().to_string(),
                keyword: d.matched_keyword.clone(),
            });
        }
        for kind in ComponentKind::ALL {
            counts.push(CandidateCountRow {
                package: app.package_id.clone(),
                kind,
                candidates: dets.iter().filter(|d| d.kind == kind).count(),
            });
        }
    }
    write_csv(&out.join("detections.csv"), DETECTION_HEADER, &rows)?;
    write_csv(&out.join("candidates.csv"), CANDIDATE_COUNT_HEADER, &counts)
}

fn load_detections(p: &Pipeline) -> Result<Vec<Detection>, PipelineError> {
    let rows: Vec<DetectionRow> = read_csv(&p.stage_dir(Stage::Detect).join("detections.csv"))?;
    rows.into_iter()
        .map(|r| {
            Ok(Detection {
                node_path: parse_path(&r.node_path)
                    .ok_or_else(|| PipelineError::Input(format!("bad node path `{}`", r.node_path)))?,
                bounds: r.bounds.parse().map_err(PipelineError::Input)?,
                matched_via: if r.matched_via == MatchVia::ClassName.as_str() {
                    MatchVia::ClassName
                } else {
                    MatchVia::Ancestor
                },
                package_id: r.package,
                screen_id: r.screen,
                kind: r.kind,
                matched_keyword: r.keyword,
            })
        })
        .collect()
}

// ---------------------------------------------------------------- heatmap

fn heatmap(p: &Pipeline, out: &Path) -> Result<(), PipelineError> {
    let corpus = load_corpus(p)?;
    let screens = screen_index(&corpus);
    let detections = load_detections(p)?;
    let mut maps: Vec<Heatmap> = ComponentKind::ALL
        .iter()
        .map(|k| Heatmap::new(*k, p.config.grid_cols, p.config.grid_rows))
        .collect::<Result<_, _>>()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    for d in &detections {
        let screen = screens
            .get(&(d.package_id.clone(), d.screen_id.clone()))
            .ok_or_else(|| PipelineError::Input(format!("detection on unknown screen {}/{}", d.package_id, d.screen_id)))?;
        maps[d.kind.index()].accumulate(d, screen).map_err(input)?;
    }

    let mut summary = Vec::new();
    for map in &maps {
        let path = out.join(format!("{}.csv", map.kind()));
        fs::write(&path, map.to_grid_text()).map_err(PipelineError::io(&path))?;
        let argmax = map.argmax_cell().ok();
        let size = map.median_size();
        summary.push(HeatmapSummaryRow {
            kind: map.kind(),
            total: map.total(),
            argmax_row: argmax.map(|a| a.0),
            argmax_col: argmax.map(|a| a.1),
            median_width: size.map(|s| s.0),
            median_height: size.map(|s| s.1),
        });
    }
    write_csv(&out.join("summary.csv"), HEATMAP_SUMMARY_HEADER, &summary)?;
    write_json(&out.join(HEATMAPS_FILE), &maps)
}

fn load_heatmaps(p: &Pipeline) -> Result<Vec<Heatmap>, PipelineError> {
    read_json(&p.stage_dir(Stage::Heatmap).join(HEATMAPS_FILE))
}

// ---------------------------------------------------------------- crop

enum Job<'a> {
    Candidate(&'a Detection, usize),
    Negative(ComponentKind),
}

enum CropOutcome {
    Saved(CropRow, ProvenanceRow),
    Degenerate(DegenerateRow),
}

fn crop_file(kind: ComponentKind, label: CropLabel, package: &str, screen: &str, n: usize) -> String {
    format!("{kind}/{label}/{package}__{screen}__{n}.png")
}

fn kind_seed(seed: u64, kind: ComponentKind) -> u64 {
    seed ^ (kind.index() as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

fn crop(p: &Pipeline, out: &Path) -> Result<(), PipelineError> {
    let c = &p.config;
    let corpus = load_corpus(p)?;
    let detections = load_detections(p)?;
    let heatmaps = load_heatmaps(p)?;
    let official = c.official_classes()?;

    let mut jobs: BTreeMap<(usize, usize), Vec<Job>> = BTreeMap::new();
    let mut position: BTreeMap<(&str, &str), (usize, usize)> = BTreeMap::new();
    for (ai, app) in corpus.apps.iter().enumerate() {
        for (si, s) in app.screens.iter().enumerate() {
            position.insert((app.package_id.as_str(), s.screen_id.as_str()), (ai, si));
        }
    }

    let mut per_kind = [0usize; 6];
    let mut seen: BTreeMap<(usize, usize, ComponentKind), usize> = BTreeMap::new();
    for d in &detections {
        let pos = *position
            .get(&(d.package_id.as_str(), d.screen_id.as_str()))
            .ok_or_else(|| PipelineError::Input(format!("detection on unknown screen {}/{}", d.package_id, d.screen_id)))?;
        let n = seen.entry((pos.0, pos.1, d.kind)).or_default();
        jobs.entry(pos).or_default().push(Job::Candidate(d, *n));
        *n += 1;
        per_kind[d.kind.index()] += 1;
    }

    // Negatives come from screens without a candidate of the kind, drawn in
    // a seeded order.
    let mut warnings = Vec::new();
    for map in &heatmaps {
        let kind = map.kind();
        if map.total() == 0 {
            warnings.push(format!("{kind}: no candidates, no negatives mined"));
            continue;
        }
        let mut slots: Vec<(usize, usize)> = position
            .values()
            .copied()
            .filter(|(ai, si)| !seen.contains_key(&(*ai, *si, kind)))
            .collect();
        slots.sort_unstable();
        slots.shuffle(&mut ChaCha8Rng::seed_from_u64(kind_seed(c.seed, kind)));
        let wanted = (c.negatives_per_candidate * per_kind[kind.index()] as f64).ceil() as usize;
        if wanted > slots.len() {
            warnings.push(format!(
                "{kind}: {wanted} negatives wanted, only {} screens lack the kind",
                slots.len()
            ));
        }
        for pos in slots.into_iter().take(wanted) {
            jobs.entry(pos).or_default().push(Job::Negative(kind));
        }
    }

    let jobs: Vec<((usize, usize), Vec<Job>)> = jobs.into_iter().collect();
    let outcomes: Vec<Vec<CropOutcome>> = jobs
        .par_iter()
        .map(|((ai, si), list)| {
            let app = &corpus.apps[*ai];
            let screen = &app.screens[*si];
            let shot = load_screenshot(&app.package_id, screen).map_err(input)?;
            list.iter()
                .map(|job| crop_one(p, out, &official, &app.package_id, screen, &shot, &heatmaps, job))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, PipelineError>>()?;

    let mut crops = Vec::new();
    let mut provenance = Vec::new();
    let mut degenerate = Vec::new();
    for o in outcomes.into_iter().flatten() {
        match o {
            CropOutcome::Saved(row, prov) => {
                crops.push((prov.file.clone(), row));
                provenance.push(prov);
            }
            CropOutcome::Degenerate(row) => degenerate.push(row),
        }
    }
    crops.sort_by(|a, b| a.0.cmp(&b.0));
    provenance.sort_by(|a, b| a.file.cmp(&b.file));
    let crops: Vec<CropRow> = crops.into_iter().map(|(_, r)| r).collect();
    for w in &warnings {
        warn!("{w}");
    }
    write_csv(&out.join("crops.csv"), CROP_HEADER, &crops)?;
    write_csv(&out.join("provenance.csv"), PROVENANCE_HEADER, &provenance)?;
    write_csv(&out.join("degenerate.csv"), DEGENERATE_HEADER, &degenerate)?;
    write_lines(&out.join("warnings.txt"), &warnings)
}

#[allow(clippy::too_many_arguments)]
fn crop_one(
    p: &Pipeline,
    out: &Path,
    official: &crate::detector::OfficialClasses,
    package: &str,
    screen: &Screen,
    shot: &RgbImage,
    heatmaps: &[Heatmap],
    job: &Job,
) -> Result<CropOutcome, PipelineError> {
    let margin = p.config.margin_fraction;
    let (sample, n, is_official): (Result<CropSample, CropError>, usize, bool) = match job {
        Job::Candidate(d, n) => {
            let is_official = screen
                .node_at(&d.node_path)
                .is_some_and(|node| official.is_official(d.kind, &node.class_name, &node.ancestors));
            (candidate_crop(d, screen, shot, margin), *n, is_official)
        }
        Job::Negative(kind) => (
            negative_sample(package, screen, shot, &heatmaps[kind.index()], margin),
            0,
            false,
        ),
    };
    let (kind, node_path) = match job {
        Job::Candidate(d, _) => (d.kind, d.path_string()),
        Job::Negative(k) => (*k, String::new()),
    };
    let sample = match sample {
        Ok(s) => s,
        Err(e @ CropError::Degenerate { .. }) => {
            warn!("{package}/{}: {kind} crop dropped: {e}", screen.screen_id);
            return Ok(CropOutcome::Degenerate(DegenerateRow {
                package: package.to_string(),
                screen: screen.screen_id.clone(),
                kind,
                node_path,
                reason: e.to_string(),
            }));
        }
        Err(e) => return Err(input(e)),
    };
    let file = crop_file(kind, sample.label, package, &screen.screen_id, n);
    save_png(&out.join(&file), &sample.image)?;
    Ok(CropOutcome::Saved(
        CropRow {
            kind,
            label: sample.label,
            package: package.to_string(),
            screen: screen.screen_id.clone(),
            rect: sample.pixel_rect.to_string(),
        },
        ProvenanceRow {
            file,
            kind,
            label: sample.label,
            package: package.to_string(),
            screen: screen.screen_id.clone(),
            node_path,
            official: is_official,
        },
    ))
}

fn load_provenance(p: &Pipeline) -> Result<Vec<ProvenanceRow>, PipelineError> {
    read_csv(&p.stage_dir(Stage::Crop).join("provenance.csv"))
}

fn crop_path(p: &Pipeline, file: &str) -> PathBuf {
    p.stage_dir(Stage::Crop).join(file)
}

// ---------------------------------------------------------------- train

fn train_stage(p: &Pipeline, out: &Path) -> Result<(), PipelineError> {
    let c = &p.config;
    if c.classifier == ClassifierChoice::External {
        let command = c.scorer_command.clone().unwrap_or_default();
        return write_lines(&out.join(EXTERNAL_MARKER), &[command]);
    }
    let size = c.input_size;
    // Stock-implementation candidates are the positives; mined crops the
    // negatives. Other candidates are left for verification only.
    let chosen: Vec<ProvenanceRow> = load_provenance(p)?
        .into_iter()
        .filter(|r| r.label == CropLabel::Negative || r.official)
        .collect();
    let samples: Vec<TrainingSample> = chosen
        .par_iter()
        .map(|r| {
            Ok(TrainingSample {
                kind: r.kind,
                app_id: r.package.clone(),
                positive: r.label == CropLabel::Candidate,
                thumb: thumbnail(&load_png(&crop_path(p, &r.file))?, size),
            })
        })
        .collect::<Result<_, PipelineError>>()?;

    let split = split_dataset(&samples, c.seed)?;
    let split_rows: Vec<SplitRow> = split
        .apps
        .iter()
        .map(|(pkg, part)| SplitRow {
            package: pkg.clone(),
            partition: part.as_str().to_string(),
        })
        .collect();
    write_csv(&out.join("split.csv"), SPLIT_HEADER, &split_rows)?;

    let config = c.train_config();
    let mut models = ModelSet::default();
    let mut report = Vec::new();
    let mut warnings = Vec::new();
    for kind in ComponentKind::ALL {
        match train(&samples, &split, kind, &config) {
            Ok((model, r)) => {
                for (partition, m) in [("train", &r.train), ("validation", &r.validation), ("test", &r.test)] {
                    report.push(TrainRow {
                        kind,
                        partition: partition.to_string(),
                        n: m.n,
                        positives: m.positives,
                        accuracy: m.accuracy,
                        balanced_accuracy: m.balanced_accuracy,
                        precision: m.precision,
                        recall: m.recall,
                        threshold: r.threshold,
                        epochs: r.epochs_run,
                        best_epoch: r.best_epoch,
                    });
                }
                models.insert(model);
            }
            Err(VerifyError::SingleLabelKind(k)) => {
                let w = format!("{k}: training data lacks a label, no model trained");
                warn!("{w}");
                warnings.push(w);
            }
            Err(e) => return Err(e.into()),
        }
    }
    models.save_dir(out)?;
    write_csv(&out.join("report.csv"), TRAIN_HEADER, &report)?;
    write_lines(&out.join("warnings.txt"), &warnings)
}

/// Thresholded scorer chosen by the configuration.
pub fn build_scorer(p: &Pipeline) -> Result<Box<dyn Scorer>, PipelineError> {
    let c = &p.config;
    Ok(match c.classifier {
        ClassifierChoice::Reference => Box::new(ModelSet::load_dir(&p.stage_dir(Stage::Train))?),
        ClassifierChoice::External => Box::new(ExternalScorer::from_command_line(
            c.scorer_command.as_deref().unwrap_or_default(),
            c.scorer_threshold,
        )?),
    })
}

// ---------------------------------------------------------------- verify

fn verify(p: &Pipeline, out: &Path) -> Result<(), PipelineError> {
    let corpus = load_corpus(p)?;
    let scorer = build_scorer(p)?;
    let candidates: Vec<ProvenanceRow> = load_provenance(p)?
        .into_iter()
        .filter(|r| r.label == CropLabel::Candidate)
        .collect();
    let degenerate: Vec<DegenerateRow> = read_csv(&p.stage_dir(Stage::Crop).join("degenerate.csv"))?;

    let images: Vec<RgbImage> = candidates
        .par_iter()
        .map(|r| load_png(&crop_path(p, &r.file)))
        .collect::<Result<_, _>>()?;
    let batch: Vec<(ComponentKind, &RgbImage)> = candidates.iter().zip(&images).map(|(r, img)| (r.kind, img)).collect();
    let scores = scorer.score_batch(&batch)?;
    let thresholds = scorer.thresholds();

    let mut per_app: BTreeMap<&str, Vec<ScoredCandidate>> = BTreeMap::new();
    let mut score_rows = Vec::with_capacity(candidates.len());
    for (r, score) in candidates.iter().zip(&scores) {
        let t = thresholds.get(&r.kind).ok_or(VerifyError::MissingModel(r.kind))?;
        per_app.entry(&r.package).or_default().push(ScoredCandidate {
            kind: r.kind,
            score: Some(*score),
        });
        score_rows.push(ScoreRow {
            file: r.file.clone(),
            kind: r.kind,
            package: r.package.clone(),
            screen: r.screen.clone(),
            score: *score,
            verified: *score >= *t,
        });
    }
    for d in degenerate.iter().filter(|d| !d.node_path.is_empty()) {
        per_app.entry(&d.package).or_default().push(ScoredCandidate { kind: d.kind, score: None });
    }

    let mut usage_rows = Vec::new();
    for app in &corpus.apps {
        let cands = per_app.get(app.package_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        let usage = verify_app(&app.package_id, cands, &thresholds)?;
        for (kind, u) in &usage.kinds {
            usage_rows.push(UsageRow {
                package: app.package_id.clone(),
                kind: *kind,
                candidate_count: u.candidate_count,
                verified_count: u.verified_count,
                uses: u.uses,
            });
        }
    }
    write_csv(&out.join("scores.csv"), SCORE_HEADER, &score_rows)?;
    write_csv(&out.join("usage.csv"), USAGE_HEADER, &usage_rows)
}

/// Reads `verify/usage.csv` into per-app usage records.
pub fn load_usage(dir: &Path) -> Result<BTreeMap<String, AppComponentUsage>, PipelineError> {
    let rows: Vec<UsageRow> = read_csv(&dir.join("usage.csv"))?;
    let mut map: BTreeMap<String, AppComponentUsage> = BTreeMap::new();
    for r in rows {
        map.entry(r.package.clone())
            .or_insert_with(|| AppComponentUsage::empty(&r.package))
            .kinds
            .insert(
                r.kind,
                KindUsage {
                    candidate_count: r.candidate_count,
                    verified_count: r.verified_count,
                    uses: r.uses,
                },
            );
    }
    Ok(map)
}

// ---------------------------------------------------------------- analyze

fn targets() -> Vec<(String, Option<ComponentKind>)> {
    ComponentKind::ALL
        .iter()
        .map(|k| (k.as_str().to_string(), Some(*k)))
        .chain([("any".to_string(), None)])
        .collect()
}

fn app_uses(usage: &BTreeMap<String, AppComponentUsage>, pkg: &str, kind: Option<ComponentKind>) -> bool {
    usage.get(pkg).is_some_and(|u| match kind {
        Some(k) => u.uses(k),
        None => u.uses_any(),
    })
}

fn box_value(metric: Metric, app: &AppStats) -> f64 {
    match metric {
        Metric::AvgRating => app.avg_rating,
        Metric::Installs => (app.installs.max(1) as f64).log10(),
    }
}

fn box_metric_name(metric: Metric) -> &'static str {
    match metric {
        Metric::AvgRating => "avg_rating",
        Metric::Installs => "log10_installs",
    }
}

fn analyzable_stats(corpus: &Corpus) -> Vec<AppStats> {
    corpus
        .analyzable()
        .filter_map(|a| {
            a.metadata.as_ref().map(|m| AppStats {
                package_id: a.package_id.clone(),
                avg_rating: m.avg_rating,
                installs: m.installs,
                category: m.category.clone(),
            })
        })
        .collect()
}

fn group_split(p: &Pipeline, apps: &[AppStats], metric: Metric) -> Result<(GroupSplit, &'static str), AnalyticsError> {
    match metric {
        Metric::AvgRating => split_by_median(apps, metric).map(|s| (s, "median")),
        Metric::Installs => split_by_threshold(apps, metric, p.config.install_threshold).map(|s| (s, "threshold")),
    }
}

fn analyze(p: &Pipeline, out: &Path) -> Result<(), PipelineError> {
    let corpus = load_corpus(p)?;
    let usage = load_usage(&p.stage_dir(Stage::Verify))?;
    let apps = analyzable_stats(&corpus);
    if apps.len() < 2 {
        return Err(AnalyticsError::TooFewApps {
            metric: Metric::AvgRating,
            found: apps.len(),
            required: 2,
        }
        .into());
    }
    let mut warnings = Vec::new();
    let mut groups = Vec::new();
    let mut group_usage = Vec::new();
    let mut buckets = Vec::new();
    let mut correlations = Vec::new();
    let mut boxes = Vec::new();
    let mut categories = Vec::new();

    for metric in Metric::ALL {
        match group_split(p, &apps, metric) {
            Ok((split, rule)) => {
                groups.push(GroupRow {
                    metric: metric.to_string(),
                    rule: rule.to_string(),
                    threshold: split.threshold,
                    low_apps: split.low.len(),
                    high_apps: split.high.len(),
                });
                for (name, kind) in targets() {
                    let users = |g: &BTreeSet<String>| g.iter().filter(|a| app_uses(&usage, a, kind)).count();
                    let rate = |u: usize, n: usize| (n > 0).then(|| u as f64 / n as f64);
                    let (lu, hu) = (users(&split.low), users(&split.high));
                    let (lr, hr) = (rate(lu, split.low.len()), rate(hu, split.high.len()));
                    group_usage.push(GroupUsageRow {
                        metric: metric.to_string(),
                        kind: name,
                        low_apps: split.low.len(),
                        low_users: lu,
                        low_rate: lr,
                        low_pct: lr.map(format_pct).unwrap_or_default(),
                        high_apps: split.high.len(),
                        high_users: hu,
                        high_rate: hr,
                        high_pct: hr.map(format_pct).unwrap_or_default(),
                        high_share: rate(hu, lu + hu),
                    });
                }
            }
            Err(e) => warnings.push(format!("{metric}: no group split: {e}")),
        }

        for (name, kind) in targets() {
            match bucket_curve(&apps, metric, p.config.buckets, |a| app_uses(&usage, &a.package_id, kind)) {
                Ok(curve) => {
                    for (b, ((frac, n), (lo, hi))) in curve
                        .fractions
                        .iter()
                        .zip(&curve.counts)
                        .zip(&curve.ranges)
                        .enumerate()
                    {
                        buckets.push(BucketRow {
                            metric: metric.to_string(),
                            kind: name.clone(),
                            bucket: b + 1,
                            apps: *n,
                            users: (frac * *n as f64).round() as usize,
                            fraction: *frac,
                            min_value: *lo,
                            max_value: *hi,
                        });
                    }
                    let xs: Vec<f64> = (1..=curve.k).map(|i| i as f64).collect();
                    let (rho, p_value) = match pearson(&xs, &curve.fractions) {
                        Ok(r) => (Some(r.rho), Some(r.p_value)),
                        Err(e) => {
                            warnings.push(format!("{metric}/{name}: no correlation: {e}"));
                            (None, None)
                        }
                    };
                    correlations.push(CorrelationRow {
                        metric: metric.to_string(),
                        kind: name.clone(),
                        n: curve.k,
                        rho,
                        p_value,
                    });
                }
                Err(e) => warnings.push(format!("{metric}/{name}: no bucket curve: {e}")),
            }

            for (group, want) in [("users", true), ("non_users", false)] {
                let values: Vec<f64> = apps
                    .iter()
                    .filter(|a| app_uses(&usage, &a.package_id, kind) == want)
                    .map(|a| box_value(metric, a))
                    .collect();
                if let Ok(s) = five_number_summary(&values) {
                    boxes.push(BoxRow {
                        metric: box_metric_name(metric).to_string(),
                        kind: name.clone(),
                        group: group.to_string(),
                        n: s.n,
                        min: s.min,
                        q1: s.q1,
                        median: s.median,
                        q3: s.q3,
                        max: s.max,
                        whisker_low: s.whisker_low,
                        whisker_high: s.whisker_high,
                    });
                }
            }
        }
    }

    for (name, kind) in targets() {
        for (rank, r) in category_rates(&apps, kind, &usage, p.config.category_min_count)
            .into_iter()
            .enumerate()
        {
            categories.push(CategoryRow {
                kind: name.clone(),
                rank: rank + 1,
                category: r.category,
                apps: r.apps,
                users: r.users,
                rate: r.rate,
                rate_pct: format_pct(r.rate),
            });
        }
    }

    for w in &warnings {
        warn!("{w}");
    }
    let users: BTreeMap<String, usize> = targets()
        .into_iter()
        .map(|(name, kind)| {
            let n = apps.iter().filter(|a| app_uses(&usage, &a.package_id, kind)).count();
            (name, n)
        })
        .collect();
    write_csv(&out.join("groups.csv"), GROUP_HEADER, &groups)?;
    write_csv(&out.join("usage_by_group.csv"), GROUP_USAGE_HEADER, &group_usage)?;
    write_csv(&out.join("buckets.csv"), BUCKET_HEADER, &buckets)?;
    write_csv(&out.join("correlations.csv"), CORRELATION_HEADER, &correlations)?;
    write_csv(&out.join("boxplots.csv"), BOX_HEADER, &boxes)?;
    write_csv(&out.join("categories.csv"), CATEGORY_HEADER, &categories)?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "analyzable_apps": apps.len(),
            "buckets": p.config.buckets,
            "users": users,
        }),
    )?;
    write_lines(&out.join("warnings.txt"), &warnings)
}

// ---------------------------------------------------------------- report

fn target_label(name: &str) -> String {
    match name.parse::<ComponentKind>() {
        Ok(k) => k.label().to_string(),
        Err(_) => "Any component".to_string(),
    }
}

fn series_names(rule: &str) -> Vec<String> {
    match rule {
        "median" => vec!["below median".into(), "at or above median".into()],
        _ => vec!["below threshold".into(), "at or above threshold".into()],
    }
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn report(p: &Pipeline, out: &Path) -> Result<(), PipelineError> {
    let c = &p.config;
    let analyze_dir = p.stage_dir(Stage::Analyze);
    let groups: Vec<GroupRow> = read_csv(&analyze_dir.join("groups.csv"))?;
    let group_usage: Vec<GroupUsageRow> = read_csv(&analyze_dir.join("usage_by_group.csv"))?;
    let buckets: Vec<BucketRow> = read_csv(&analyze_dir.join("buckets.csv"))?;
    let boxes: Vec<BoxRow> = read_csv(&analyze_dir.join("boxplots.csv"))?;
    if group_usage.is_empty() && buckets.is_empty() && boxes.is_empty() {
        return Err(ReportError::Empty("the analysis produced no group, bucket or box-plot rows".into()).into());
    }
    let mut files: Vec<FileRow> = Vec::new();
    let mut write_svg = |name: String, svg: String, source: &str| -> Result<(), PipelineError> {
        let path = out.join(&name);
        fs::write(&path, svg).map_err(PipelineError::io(&path))?;
        files.push(FileRow {
            file: name,
            source: source.to_string(),
        });
        Ok(())
    };

    for g in &groups {
        let bars: Vec<BarGroup> = group_usage
            .iter()
            .filter(|r| r.metric == g.metric)
            .filter_map(|r| {
                Some(BarGroup {
                    label: target_label(&r.kind),
                    values: vec![r.low_rate?, r.high_rate?],
                })
            })
            .collect();
        if bars.is_empty() {
            continue;
        }
        let svg = grouped_bar_chart(
            &format!("Component usage by {} group", g.metric),
            &series_names(&g.rule),
            &bars,
        )?;
        write_svg(format!("usage_{}.svg", g.metric), svg, "analyze/usage_by_group.csv")?;
    }

    let mut box_keys: Vec<(String, String)> = boxes.iter().map(|b| (b.metric.clone(), b.kind.clone())).collect();
    box_keys.dedup();
    for (metric, kind) in box_keys {
        let entries: Vec<(String, FiveNumberSummary)> = boxes
            .iter()
            .filter(|b| b.metric == metric && b.kind == kind)
            .map(|b| {
                (
                    b.group.replace('_', "-"),
                    FiveNumberSummary {
                        n: b.n,
                        min: b.min,
                        q1: b.q1,
                        median: b.median,
                        q3: b.q3,
                        max: b.max,
                        whisker_low: b.whisker_low,
                        whisker_high: b.whisker_high,
                    },
                )
            })
            .collect();
        let svg = box_plot_chart(&format!("{metric} of {} users and non-users", target_label(&kind)), &entries)?;
        write_svg(format!("box_{metric}_{kind}.svg"), svg, "analyze/boxplots.csv")?;
    }

    let mut curve_keys: Vec<(String, String)> = buckets.iter().map(|b| (b.metric.clone(), b.kind.clone())).collect();
    curve_keys.dedup();
    for (metric, kind) in curve_keys {
        let fractions: Vec<f64> = buckets
            .iter()
            .filter(|b| b.metric == metric && b.kind == kind)
            .map(|b| b.fraction)
            .collect();
        let svg = curve_chart(
            &format!("{} usage across {metric} buckets", target_label(&kind)),
            &[(target_label(&kind), fractions)],
        )?;
        write_svg(format!("curve_{metric}_{kind}.svg"), svg, "analyze/buckets.csv")?;
    }

    for map in load_heatmaps(p)? {
        if map.total() == 0 {
            continue;
        }
        let name = format!("heatmap_{}.png", map.kind());
        save_png(&out.join(&name), &map.render(c.heatmap_scale))?;
        files.push(FileRow {
            file: name,
            source: format!("heatmap/{}.csv", map.kind()),
        });
    }

    // Contact sheets of verified crops, one per kind and category.
    let corpus = load_corpus(p)?;
    let category: BTreeMap<&str, &str> = corpus
        .analyzable()
        .filter_map(|a| a.metadata.as_ref().map(|m| (a.package_id.as_str(), m.category.as_str())))
        .collect();
    let scores: Vec<ScoreRow> = read_csv(&p.stage_dir(Stage::Verify).join("scores.csv"))?;
    let mut sheets: BTreeMap<(ComponentKind, String), Vec<&str>> = BTreeMap::new();
    for s in scores.iter().filter(|s| s.verified) {
        if let Some(cat) = category.get(s.package.as_str()) {
            sheets.entry((s.kind, cat.to_string())).or_default().push(&s.file);
        }
    }
    let sheet_rows: Vec<(ContactRow, RgbImage)> = sheets
        .into_par_iter()
        .map(|((kind, cat), crop_files)| {
            let crops: Vec<RgbImage> = crop_files
                .iter()
                .map(|f| load_png(&crop_path(p, f)))
                .collect::<Result<_, _>>()?;
            let sheet = contact_sheet(&crops, c.contact_thumbnail, c.contact_columns).expect("non-empty group");
            Ok((
                ContactRow {
                    kind,
                    file: format!("contact/{kind}/{}.png", file_safe(&cat)),
                    category: cat,
                    thumbnails: crops.len(),
                },
                sheet,
            ))
        })
        .collect::<Result<_, PipelineError>>()?;
    let mut contact_rows = Vec::with_capacity(sheet_rows.len());
    for (row, sheet) in sheet_rows {
        save_png(&out.join(&row.file), &sheet)?;
        files.push(FileRow {
            file: row.file.clone(),
            source: "verify/scores.csv".into(),
        });
        contact_rows.push(row);
    }
    write_csv(&out.join("contact_sheets.csv"), CONTACT_HEADER, &contact_rows)?;
    files.sort_by(|a, b| a.file.cmp(&b.file));
    write_csv(&out.join("files.csv"), FILE_HEADER, &files)
}
