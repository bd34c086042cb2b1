//! Synthetic corpora with planted ground truth.
//!
//! Every app gets a fixed screen layout in a 1440x2560 virtual space. Each
//! adopted component is drawn as one flat-color glyph inside its hierarchy
//! bounds, so verification is learnable by construction. Decoys carry a
//! keyword-matching class name but render as plain text; occluded instances
//! stay visible in the hierarchy while a keyboard-like block covers their
//! pixels. All randomness of an app comes from a stream derived from the seed
//! and the package id, so output does not depend on scheduling.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::detector::{format_path, ComponentKind};
use crate::geometry::Rect;
use crate::ingest::{format_installs, AppMetadata, ViewNode};

pub const VIRTUAL_WIDTH: i32 = 1440;
pub const VIRTUAL_HEIGHT: i32 = 2560;

const STATUS_BAR: Rect = Rect::new(0, 0, 1440, 72);
const CONTENT_FRAME: Rect = Rect::new(0, 72, 1440, 2560);
/// Text rows fill the whole body below the status bar; components are
/// drawn over them. Decoys only replace rows inside `DECOY_BAND`.
const LIST: Rect = Rect::new(0, 72, 1440, 2560);
const DECOY_BAND: Rect = Rect::new(0, 456, 1440, 1920);
const ROW_HEIGHT: i32 = 96;
const DRAWER_PANEL: Rect = Rect::new(0, 72, 1080, 2560);
const OCCLUDER_PAD: i32 = 16;
/// Chance that an adopted non-drawer component appears on a given screen.
const SCREEN_PRESENCE: f64 = 0.7;

const BACKGROUND: Rgb<u8> = Rgb([250, 250, 250]);
const STATUS_COLOR: Rgb<u8> = Rgb([38, 50, 56]);
const TEXT_COLOR: Rgb<u8> = Rgb([117, 117, 117]);
const KEYBOARD_COLOR: Rgb<u8> = Rgb([236, 239, 241]);
const KEY_COLOR: Rgb<u8> = Rgb([207, 216, 220]);

const DEFAULT_CATEGORIES: [&str; 12] = [
    "COMMUNICATION",
    "EDUCATION",
    "ENTERTAINMENT",
    "FINANCE",
    "HEALTH_AND_FITNESS",
    "LIFESTYLE",
    "MUSIC_AND_AUDIO",
    "PRODUCTIVITY",
    "SHOPPING",
    "SOCIAL",
    "TOOLS",
    "TRAVEL_AND_LOCAL",
];

/// Install bucket lower bounds and weights; half of the mass is at or above
/// one million.
const INSTALL_BUCKETS: [(u64, u32); 14] = [
    (100, 2),
    (500, 3),
    (1_000, 4),
    (5_000, 5),
    (10_000, 6),
    (50_000, 7),
    (100_000, 8),
    (500_000, 9),
    (1_000_000, 12),
    (5_000_000, 10),
    (10_000_000, 10),
    (50_000_000, 6),
    (100_000_000, 4),
    (500_000_000, 2),
];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{name} = {value} is not a probability")]
    InvalidProbability { name: String, value: f64 },
    #[error("invalid spec: {0}")]
    Invalid(String),
    #[error("unsatisfiable spec: {0}")]
    Unsatisfiable(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Adoption probability as a function of the app's rating percentile in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "curve", rename_all = "snake_case")]
pub enum Adoption {
    Constant { p: f64 },
    Linear { low: f64, high: f64 },
}

impl Adoption {
    pub fn at(&self, percentile: f64) -> f64 {
        match *self {
            Adoption::Constant { p } => p,
            Adoption::Linear { low, high } => low + (high - low) * percentile,
        }
    }

    fn max(&self) -> f64 {
        match *self {
            Adoption::Constant { p } => p,
            Adoption::Linear { low, high } => low.max(high),
        }
    }

    fn probabilities(&self) -> Vec<f64> {
        match *self {
            Adoption::Constant { p } => vec![p],
            Adoption::Linear { low, high } => vec![low, high],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub apps: usize,
    pub screens_min: usize,
    pub screens_max: usize,
    pub adoption: BTreeMap<ComponentKind, Adoption>,
    /// Per (app, kind): chance of one or two text decoys.
    pub decoy_rate: f64,
    /// Per adopting (app, kind): chance that one instance is covered.
    pub occlusion_rate: f64,
    /// Per app: chance of an invisible node with a stock component class.
    pub hidden_rate: f64,
    pub exclusion_rate: f64,
    pub missing_metadata_rate: f64,
    pub rating_mean: f64,
    pub rating_sd: f64,
    pub categories: Vec<String>,
    pub image_width: u32,
    pub image_height: u32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            apps: 50,
            screens_min: 3,
            screens_max: 5,
            adoption: ComponentKind::ALL
                .iter()
                .map(|k| (*k, Adoption::Constant { p: 0.3 }))
                .collect(),
            decoy_rate: 0.2,
            occlusion_rate: 0.1,
            hidden_rate: 0.1,
            exclusion_rate: 0.02,
            missing_metadata_rate: 0.0,
            rating_mean: 4.0,
            rating_sd: 0.45,
            categories: DEFAULT_CATEGORIES.iter().map(|c| c.to_string()).collect(),
            image_width: 270,
            image_height: 480,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn with_adoption(mut self, adoption: Adoption) -> Self {
        self.adoption = ComponentKind::ALL.iter().map(|k| (*k, adoption)).collect();
        self
    }

    pub fn adoption_for(&self, kind: ComponentKind) -> Adoption {
        self.adoption
            .get(&kind)
            .copied()
            .unwrap_or(Adoption::Constant { p: 0.0 })
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let mut probs: Vec<(String, f64)> = vec![
            ("decoy_rate".into(), self.decoy_rate),
            ("occlusion_rate".into(), self.occlusion_rate),
            ("hidden_rate".into(), self.hidden_rate),
            ("exclusion_rate".into(), self.exclusion_rate),
            ("missing_metadata_rate".into(), self.missing_metadata_rate),
        ];
        for (kind, a) in &self.adoption {
            probs.extend(a.probabilities().into_iter().map(|p| (format!("adoption.{kind}"), p)));
        }
        for (name, value) in probs {
            if !(0.0..=1.0).contains(&value) {
                return Err(SynthError::InvalidProbability { name, value });
            }
        }
        if self.apps == 0 {
            return Err(SynthError::Invalid("apps must be positive".into()));
        }
        if self.screens_min < 2 || self.screens_min > self.screens_max {
            return Err(SynthError::Invalid(format!(
                "screen range {}..={} must start at 2 or more and be non-empty",
                self.screens_min, self.screens_max
            )));
        }
        if self.image_width < 16 || self.image_height < 16 {
            return Err(SynthError::Invalid("images must be at least 16x16".into()));
        }
        if self.categories.is_empty() || self.categories.iter().any(|c| c.trim().is_empty()) {
            return Err(SynthError::Invalid("categories must be non-empty names".into()));
        }
        if !(self.rating_sd >= 0.0 && (0.0..=5.0).contains(&self.rating_mean)) {
            return Err(SynthError::Invalid("rating distribution out of range".into()));
        }
        if self.occlusion_rate > 0.0 && ComponentKind::ALL.iter().all(|k| self.adoption_for(*k).max() == 0.0) {
            return Err(SynthError::Unsatisfiable(
                "occlusion requested but no component can be adopted".into(),
            ));
        }
        Ok(())
    }
}

/// How a planted component's class relates to the stock implementation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// The stock class itself.
    Official,
    /// A custom class whose ancestor chain contains the stock class.
    Subclass,
    /// A custom class whose own name contains a keyword.
    Custom,
}

impl Variant {
    const ALL: [Variant; 3] = [Variant::Official, Variant::Subclass, Variant::Custom];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Official => "official",
            Variant::Subclass => "subclass",
            Variant::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindTruth {
    pub uses: bool,
    pub instances: usize,
    pub occluded_count: usize,
    pub decoy_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppTruth {
    pub package_id: String,
    pub rating_percentile: f64,
    pub excluded: bool,
    pub metadata: Option<AppMetadata>,
    pub kinds: BTreeMap<ComponentKind, KindTruth>,
}

impl AppTruth {
    pub fn uses(&self, kind: ComponentKind) -> bool {
        self.kinds.get(&kind).is_some_and(|k| k.uses)
    }

    pub fn uses_any(&self) -> bool {
        self.kinds.values().any(|k| k.uses)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedInstance {
    pub package_id: String,
    pub screen_id: String,
    pub node_path: Vec<usize>,
    pub kind: ComponentKind,
    pub variant: Variant,
    pub occluded: bool,
    pub bounds: Rect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedDecoy {
    pub package_id: String,
    pub screen_id: String,
    pub node_path: Vec<usize>,
    pub kind: ComponentKind,
}

#[derive(Debug, Clone)]
pub struct SynthScreen {
    pub screen_id: String,
    pub root: ViewNode,
    pub image: RgbImage,
}

#[derive(Debug, Clone)]
pub struct SynthApp {
    pub truth: AppTruth,
    pub screens: Vec<SynthScreen>,
    pub instances: Vec<PlantedInstance>,
    pub decoys: Vec<PlantedDecoy>,
}

/// Per-app metadata drawn before layout, so adoption can depend on the
/// app's rating percentile across the whole corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct AppPlan {
    pub package_id: String,
    pub metadata: AppMetadata,
    pub has_metadata: bool,
    pub excluded: bool,
    pub rating_percentile: f64,
}

pub fn package_id(index: usize) -> String {
    format!("com.synth.app{index:05}")
}

fn app_rng(seed: u64, package_id: &str, stream: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(package_id.as_bytes());
    h.update([0]);
    h.update(stream.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

pub fn plan_apps(spec: &SynthSpec) -> Result<Vec<AppPlan>, SynthError> {
    spec.validate()?;
    let rating = Normal::new(spec.rating_mean, spec.rating_sd).map_err(|e| SynthError::Invalid(e.to_string()))?;
    let installs = WeightedIndex::new(INSTALL_BUCKETS.iter().map(|b| b.1)).expect("static weights");
    let mut plans: Vec<AppPlan> = (0..spec.apps)
        .map(|i| {
            let pkg = package_id(i);
            let mut rng = app_rng(spec.seed, &pkg, "meta");
            let r: f64 = rating.sample(&mut rng);
            let avg_rating = (r.clamp(1.0, 5.0) * 100.0).round() / 100.0;
            let installs = INSTALL_BUCKETS[installs.sample(&mut rng)].0;
            let category = spec.categories[rng.random_range(0..spec.categories.len())].clone();
            let has_metadata = !rng.random_bool(spec.missing_metadata_rate);
            let excluded = rng.random_bool(spec.exclusion_rate);
            AppPlan {
                package_id: pkg,
                metadata: AppMetadata {
                    avg_rating,
                    installs,
                    category,
                },
                has_metadata,
                excluded,
                rating_percentile: 0.0,
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..plans.len()).collect();
    order.sort_by(|&a, &b| {
        plans[a]
            .metadata
            .avg_rating
            .total_cmp(&plans[b].metadata.avg_rating)
            .then_with(|| plans[a].package_id.cmp(&plans[b].package_id))
    });
    let denom = (plans.len().max(2) - 1) as f64;
    for (rank, idx) in order.into_iter().enumerate() {
        plans[idx].rating_percentile = rank as f64 / denom;
    }
    Ok(plans)
}

fn kind_bounds(kind: ComponentKind) -> Rect {
    match kind {
        ComponentKind::AppBar => Rect::new(0, 96, 1440, 264),
        ComponentKind::TabLayout => Rect::new(0, 288, 1440, 432),
        ComponentKind::SnackBar => Rect::new(48, 1944, 1392, 2088),
        ComponentKind::FloatingActionButton => Rect::new(1188, 2140, 1384, 2336),
        ComponentKind::BottomNavigation => Rect::new(0, 2392, 1440, 2560),
        ComponentKind::NavigationDrawer => CONTENT_FRAME,
    }
}

fn kind_color(kind: ComponentKind) -> Rgb<u8> {
    match kind {
        ComponentKind::AppBar => Rgb([33, 150, 243]),
        ComponentKind::TabLayout => Rgb([255, 87, 34]),
        ComponentKind::SnackBar => Rgb([50, 50, 50]),
        ComponentKind::FloatingActionButton => Rgb([233, 30, 99]),
        ComponentKind::BottomNavigation => Rgb([0, 121, 107]),
        ComponentKind::NavigationDrawer => Rgb([103, 58, 183]),
    }
}

const OBJECT: &str = "java.lang.Object";
const VIEW: &str = "android.view.View";
const VIEW_GROUP: &str = "android.view.ViewGroup";
const FRAME: &str = "android.widget.FrameLayout";
const LINEAR: &str = "android.widget.LinearLayout";
const TEXT: &str = "android.widget.TextView";
const IMAGE: &str = "android.widget.ImageView";

fn chain(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Class name and ancestor chain of a planted component.
fn component_class(kind: ComponentKind, variant: Variant, pkg: &str) -> (String, Vec<String>) {
    use ComponentKind::*;
    let (official, base, sub_name, custom_name): (&str, &[&str], &str, &str) = match kind {
        AppBar => (
            "android.support.design.widget.AppBarLayout",
            &[LINEAR, VIEW_GROUP, VIEW, OBJECT],
            "MainHeader",
            "CustomToolbar",
        ),
        FloatingActionButton => (
            "android.support.design.widget.FloatingActionButton",
            &["android.widget.ImageButton", IMAGE, VIEW, OBJECT],
            "ComposeButton",
            "FloatingButton",
        ),
        BottomNavigation => (
            "android.support.design.widget.BottomNavigationView",
            &[FRAME, VIEW_GROUP, VIEW, OBJECT],
            "FooterMenu",
            "BottomNavigationBar",
        ),
        NavigationDrawer => (
            "android.support.v4.widget.DrawerLayout",
            &[VIEW_GROUP, VIEW, OBJECT],
            "SideMenuLayout",
            "SlideDrawer",
        ),
        SnackBar => (
            "android.support.design.widget.Snackbar$SnackbarLayout",
            &[LINEAR, VIEW_GROUP, VIEW, OBJECT],
            "NoticeStrip",
            "SnackNotice",
        ),
        TabLayout => (
            "android.support.design.widget.TabLayout",
            &["android.widget.HorizontalScrollView", FRAME, VIEW_GROUP, VIEW, OBJECT],
            "SectionSwitcher",
            "SlidingTabStrip",
        ),
    };
    match variant {
        Variant::Official => (official.to_string(), chain(base)),
        Variant::Subclass => {
            let mut anc = vec![official.to_string()];
            anc.extend(chain(base));
            (format!("{pkg}.ui.{sub_name}"), anc)
        }
        Variant::Custom => (format!("{pkg}.widget.{custom_name}"), chain(base)),
    }
}

fn decoy_name(kind: ComponentKind) -> &'static str {
    match kind {
        ComponentKind::AppBar => "ToolbarTitleText",
        ComponentKind::FloatingActionButton => "FloatingTextLabel",
        ComponentKind::BottomNavigation => "BottomNavigationHintText",
        ComponentKind::NavigationDrawer => "DrawerItemLabel",
        ComponentKind::SnackBar => "SnackMessageText",
        ComponentKind::TabLayout => "TabBarCaption",
    }
}

fn node(class: impl Into<String>, ancestors: Vec<String>, bounds: Rect, visible: bool) -> ViewNode {
    let mut n = ViewNode::leaf(class, bounds, visible);
    n.ancestors = ancestors;
    n
}

fn text_node(bounds: Rect) -> ViewNode {
    node(TEXT, chain(&[VIEW, OBJECT]), bounds, true)
}

struct Canvas {
    img: RgbImage,
    sx: f64,
    sy: f64,
}

impl Canvas {
    fn new(width: u32, height: u32) -> Self {
        Self {
            img: RgbImage::from_pixel(width, height, BACKGROUND),
            sx: f64::from(width) / f64::from(VIRTUAL_WIDTH),
            sy: f64::from(height) / f64::from(VIRTUAL_HEIGHT),
        }
    }

    fn px(&self, r: Rect) -> (u32, u32, u32, u32) {
        let (w, h) = (f64::from(self.img.width()), f64::from(self.img.height()));
        let x = |v: i32| (f64::from(v) * self.sx).round().clamp(0.0, w) as u32;
        let y = |v: i32| (f64::from(v) * self.sy).round().clamp(0.0, h) as u32;
        (x(r.left), y(r.top), x(r.right), y(r.bottom))
    }

    fn fill(&mut self, r: Rect, color: Rgb<u8>) {
        let (x0, y0, x1, y1) = self.px(r);
        for y in y0..y1 {
            for x in x0..x1 {
                self.img.put_pixel(x, y, color);
            }
        }
    }

    /// Ellipse inscribed in `r`, tested at pixel centers.
    fn disc(&mut self, r: Rect, color: Rgb<u8>) {
        let (x0, y0, x1, y1) = self.px(r);
        let (cx, cy) = (f64::from(x0 + x1) / 2.0, f64::from(y0 + y1) / 2.0);
        let (rx, ry) = (f64::from(x1 - x0) / 2.0, f64::from(y1 - y0) / 2.0);
        for y in y0..y1 {
            for x in x0..x1 {
                let dx = (f64::from(x) + 0.5 - cx) / rx;
                let dy = (f64::from(y) + 0.5 - cy) / ry;
                if dx * dx + dy * dy <= 1.0 {
                    self.img.put_pixel(x, y, color);
                }
            }
        }
    }

    /// A list item: a leading text line of random length and usually a
    /// short trailing label, vertically centered in `r`.
    fn text(&mut self, r: Rect, rng: &mut ChaCha8Rng) {
        let width = r.right - r.left;
        let len = (f64::from(width) * rng.random_range(0.3..0.7)) as i32;
        let mid = (r.top + r.bottom) / 2;
        self.fill(Rect::new(r.left, mid - 12, r.left + len, mid + 12), TEXT_COLOR);
        if rng.random_bool(0.8) {
            let trail = (f64::from(width) * rng.random_range(0.1..0.25)) as i32;
            self.fill(Rect::new(r.right - trail, mid - 12, r.right, mid + 12), TEXT_COLOR);
        }
    }

    fn keyboard(&mut self, r: Rect) {
        self.fill(r, KEYBOARD_COLOR);
        let (w, h) = (r.right - r.left, r.bottom - r.top);
        for row in 0..4 {
            for col in 0..10 {
                let key = Rect::new(
                    r.left + col * w / 10 + w / 60,
                    r.top + row * h / 4 + h / 24,
                    r.left + (col + 1) * w / 10 - w / 60,
                    r.top + (row + 1) * h / 4 - h / 24,
                );
                self.fill(key, KEY_COLOR);
            }
        }
    }

    fn component(&mut self, kind: ComponentKind, bounds: Rect) {
        match kind {
            ComponentKind::FloatingActionButton => self.disc(bounds, kind_color(kind)),
            ComponentKind::NavigationDrawer => {
                self.fill(DRAWER_PANEL.intersect(&bounds), kind_color(kind));
            }
            _ => self.fill(bounds, kind_color(kind)),
        }
    }
}

struct KindPlan {
    adopt: bool,
    occluded: bool,
    decoys: usize,
    variant: Variant,
}

fn children_for(kind: ComponentKind, bounds: Rect) -> Vec<ViewNode> {
    match kind {
        ComponentKind::AppBar => vec![text_node(Rect::new(48, bounds.top + 44, 720, bounds.bottom - 44))],
        ComponentKind::TabLayout => (0..3)
            .map(|i| text_node(Rect::new(i * 480, bounds.top, (i + 1) * 480, bounds.bottom)))
            .collect(),
        ComponentKind::SnackBar => vec![text_node(Rect::new(
            bounds.left + 48,
            bounds.top + 36,
            bounds.right - 240,
            bounds.bottom - 36,
        ))],
        ComponentKind::BottomNavigation => (0..4)
            .map(|i| {
                node(
                    IMAGE,
                    chain(&[VIEW, OBJECT]),
                    Rect::new(i * 360 + 132, bounds.top + 36, i * 360 + 228, bounds.bottom - 36),
                    true,
                )
            })
            .collect(),
        _ => Vec::new(),
    }
}

/// Builds one app's screens, hierarchy and ground truth.
pub fn generate_app(spec: &SynthSpec, plan: &AppPlan) -> SynthApp {
    let pkg = plan.package_id.as_str();
    let mut rng = app_rng(spec.seed, pkg, "layout");

    let kinds: BTreeMap<ComponentKind, KindPlan> = ComponentKind::ALL
        .iter()
        .map(|&kind| {
            let p = spec.adoption_for(kind).at(plan.rating_percentile).clamp(0.0, 1.0);
            let adopt = rng.random::<f64>() < p;
            let occluded = rng.random::<f64>() < spec.occlusion_rate;
            let decoyed = rng.random::<f64>() < spec.decoy_rate;
            let decoys = if decoyed { rng.random_range(1..=2) } else { 0 };
            let variant = Variant::ALL[rng.random_range(0..3)];
            (
                kind,
                KindPlan {
                    adopt,
                    occluded: adopt && occluded,
                    decoys,
                    variant,
                },
            )
        })
        .collect();

    let n_normal = rng.random_range(spec.screens_min..=spec.screens_max);
    // presence[kind][screen] for the in-content kinds
    let mut presence: BTreeMap<ComponentKind, Vec<bool>> = BTreeMap::new();
    let mut occluded_screen: BTreeMap<ComponentKind, usize> = BTreeMap::new();
    for (&kind, kp) in &kinds {
        if kind == ComponentKind::NavigationDrawer {
            continue;
        }
        let mut on: Vec<bool> = (0..n_normal).map(|_| rng.random_bool(SCREEN_PRESENCE)).collect();
        if !kp.adopt {
            on.iter_mut().for_each(|b| *b = false);
        } else {
            let required = if kp.occluded { 2 } else { 1 };
            while on.iter().filter(|b| **b).count() < required {
                let absent: Vec<usize> = (0..n_normal).filter(|&s| !on[s]).collect();
                on[absent[rng.random_range(0..absent.len())]] = true;
            }
            if kp.occluded {
                let present: Vec<usize> = (0..n_normal).filter(|&s| on[s]).collect();
                occluded_screen.insert(kind, present[rng.random_range(0..present.len())]);
            }
        }
        presence.insert(kind, on);
    }

    // decoy placements: (screen, kind)
    let mut decoys_on: Vec<Vec<ComponentKind>> = vec![Vec::new(); n_normal];
    for (&kind, kp) in &kinds {
        for _ in 0..kp.decoys {
            decoys_on[rng.random_range(0..n_normal)].push(kind);
        }
    }
    let hidden: Option<ComponentKind> = rng
        .random_bool(spec.hidden_rate)
        .then(|| ComponentKind::ALL[rng.random_range(0..ComponentKind::ALL.len())]);

    let mut app = SynthApp {
        truth: AppTruth {
            package_id: pkg.to_string(),
            rating_percentile: plan.rating_percentile,
            excluded: plan.excluded,
            metadata: plan.has_metadata.then(|| plan.metadata.clone()),
            kinds: kinds
                .iter()
                .map(|(k, kp)| {
                    (
                        *k,
                        KindTruth {
                            uses: kp.adopt,
                            instances: 0,
                            occluded_count: 0,
                            decoy_count: kp.decoys,
                        },
                    )
                })
                .collect(),
        },
        screens: Vec::new(),
        instances: Vec::new(),
        decoys: Vec::new(),
    };

    let root_of = |children: Vec<ViewNode>| {
        let mut root = node(
            "com.android.internal.policy.PhoneWindow$DecorView",
            chain(&[FRAME, VIEW_GROUP, VIEW, OBJECT]),
            Rect::new(0, 0, VIRTUAL_WIDTH, VIRTUAL_HEIGHT),
            true,
        );
        root.children = children;
        root
    };

    for s in 0..n_normal {
        let screen_id = s.to_string();
        let mut canvas = Canvas::new(spec.image_width, spec.image_height);
        canvas.fill(STATUS_BAR, STATUS_COLOR);
        let mut frame = node(FRAME, chain(&[VIEW_GROUP, VIEW, OBJECT]), CONTENT_FRAME, true);
        let mut occluders = Vec::new();

        let mut plant = |kind: ComponentKind, frame: &mut ViewNode, canvas: &mut Canvas, app: &mut SynthApp| {
            let kp = &kinds[&kind];
            let bounds = kind_bounds(kind);
            let (class, ancestors) = component_class(kind, kp.variant, pkg);
            let mut n = node(class, ancestors, bounds, true);
            n.children = children_for(kind, bounds);
            frame.children.push(n);
            canvas.component(kind, bounds);
            let occluded = occluded_screen.get(&kind) == Some(&s);
            if occluded {
                occluders.push(Rect::new(
                    bounds.left - OCCLUDER_PAD,
                    bounds.top - OCCLUDER_PAD,
                    bounds.right + OCCLUDER_PAD,
                    bounds.bottom + OCCLUDER_PAD,
                ));
            }
            let t = app.truth.kinds.get_mut(&kind).expect("all kinds");
            t.instances += 1;
            t.occluded_count += usize::from(occluded);
            app.instances.push(PlantedInstance {
                package_id: pkg.to_string(),
                screen_id: screen_id.clone(),
                node_path: vec![1, frame.children.len() - 1],
                kind,
                variant: kp.variant,
                occluded,
                bounds,
            });
        };

        let mut content = node(LINEAR, chain(&[VIEW_GROUP, VIEW, OBJECT]), LIST, true);
        // A random scroll offset keeps text from sitting at fixed heights.
        let scroll = rng.random_range(0..ROW_HEIGHT);
        let rows = ((LIST.bottom - LIST.top - scroll) / ROW_HEIGHT) as usize;
        let row_top = |r: usize| LIST.top + scroll + r as i32 * ROW_HEIGHT;
        let eligible: Vec<usize> = (0..rows)
            .filter(|&r| row_top(r) >= DECOY_BAND.top && row_top(r) + ROW_HEIGHT <= DECOY_BAND.bottom)
            .collect();
        let mut decoy_rows: BTreeMap<usize, ComponentKind> = BTreeMap::new();
        for &kind in &decoys_on[s] {
            let free: Vec<usize> = eligible.iter().copied().filter(|r| !decoy_rows.contains_key(r)).collect();
            if let Some(&r) = free.get(rng.random_range(0..free.len().max(1))) {
                decoy_rows.insert(r, kind);
            }
        }
        let content_index = frame.children.len();
        for r in 0..rows {
            let top = row_top(r);
            let bounds = Rect::new(48, top + 12, 1392, top + ROW_HEIGHT - 12);
            let n = match decoy_rows.get(&r) {
                Some(&kind) => {
                    app.decoys.push(PlantedDecoy {
                        package_id: pkg.to_string(),
                        screen_id: screen_id.clone(),
                        node_path: vec![1, content_index, content.children.len()],
                        kind,
                    });
                    node(
                        format!("{pkg}.widget.{}", decoy_name(kind)),
                        chain(&[TEXT, VIEW, OBJECT]),
                        bounds,
                        true,
                    )
                }
                None => text_node(bounds),
            };
            canvas.text(bounds, &mut rng);
            content.children.push(n);
        }
        frame.children.push(content);

        for kind in [ComponentKind::AppBar, ComponentKind::TabLayout] {
            if presence[&kind][s] {
                plant(kind, &mut frame, &mut canvas, &mut app);
            }
        }

        for kind in [
            ComponentKind::SnackBar,
            ComponentKind::FloatingActionButton,
            ComponentKind::BottomNavigation,
        ] {
            if presence[&kind][s] {
                plant(kind, &mut frame, &mut canvas, &mut app);
            }
        }

        if s == 0 {
            if let Some(kind) = hidden {
                let (class, ancestors) = component_class(kind, Variant::Official, pkg);
                frame.children.push(node(class, ancestors, kind_bounds(kind), false));
            }
        }
        for r in occluders {
            canvas.keyboard(r);
        }
        app.screens.push(SynthScreen {
            screen_id,
            root: root_of(vec![
                node(VIEW, chain(&[OBJECT]), STATUS_BAR, true),
                frame,
            ]),
            image: canvas.img,
        });
    }

    let drawer = &kinds[&ComponentKind::NavigationDrawer];
    if drawer.adopt {
        let count = if drawer.occluded { 2 } else { 1 };
        let occluded_at = drawer.occluded.then(|| rng.random_range(0..count));
        for d in 0..count {
            let screen_id = (n_normal + d).to_string();
            let mut canvas = Canvas::new(spec.image_width, spec.image_height);
            canvas.fill(STATUS_BAR, STATUS_COLOR);
            let mut content = node(FRAME, chain(&[VIEW_GROUP, VIEW, OBJECT]), CONTENT_FRAME, true);
            let scroll = rng.random_range(0..ROW_HEIGHT);
            for r in 0..(LIST.bottom - LIST.top - scroll) / ROW_HEIGHT {
                let top = LIST.top + scroll + r * ROW_HEIGHT;
                let bounds = Rect::new(48, top + 12, 1392, top + ROW_HEIGHT - 12);
                canvas.text(bounds, &mut rng);
                content.children.push(text_node(bounds));
            }
            let bounds = kind_bounds(ComponentKind::NavigationDrawer);
            canvas.component(ComponentKind::NavigationDrawer, bounds);
            let mut panel = node(
                "android.support.design.widget.NavigationView",
                chain(&[FRAME, VIEW_GROUP, VIEW, OBJECT]),
                DRAWER_PANEL,
                true,
            );
            panel.children = (0..5)
                .map(|i| text_node(Rect::new(48, 264 + i * 144, 1032, 360 + i * 144)))
                .collect();
            let (class, ancestors) = component_class(ComponentKind::NavigationDrawer, drawer.variant, pkg);
            let mut layout = node(class, ancestors, bounds, true);
            layout.children = vec![content, panel];
            let occluded = occluded_at == Some(d);
            if occluded {
                canvas.keyboard(Rect::new(
                    bounds.left - OCCLUDER_PAD,
                    bounds.top - OCCLUDER_PAD,
                    bounds.right + OCCLUDER_PAD,
                    bounds.bottom + OCCLUDER_PAD,
                ));
            }
            let t = app
                .truth
                .kinds
                .get_mut(&ComponentKind::NavigationDrawer)
                .expect("all kinds");
            t.instances += 1;
            t.occluded_count += usize::from(occluded);
            app.instances.push(PlantedInstance {
                package_id: pkg.to_string(),
                screen_id: screen_id.clone(),
                node_path: vec![1],
                kind: ComponentKind::NavigationDrawer,
                variant: drawer.variant,
                occluded,
                bounds,
            });
            app.screens.push(SynthScreen {
                screen_id,
                root: root_of(vec![node(VIEW, chain(&[OBJECT]), STATUS_BAR, true), layout]),
                image: canvas.img,
            });
        }
    }
    app
}

/// Hierarchy document in the crawler's wrapper format.
pub fn hierarchy_json(root: &ViewNode) -> Value {
    json!({ "activity": { "root": root.to_json() } })
}

/// File layout written by [`generate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthLayout {
    pub screens_dir: PathBuf,
    pub metadata: PathBuf,
    pub exclusions: PathBuf,
    pub ground_truth: PathBuf,
    pub instances: PathBuf,
}

impl SynthLayout {
    pub fn new(root: &Path) -> Self {
        Self {
            screens_dir: root.join("screens"),
            metadata: root.join("metadata.csv"),
            exclusions: root.join("exclusions.txt"),
            ground_truth: root.join("ground_truth.csv"),
            instances: root.join("ground_truth_instances.csv"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub layout: SynthLayout,
    pub truth: Vec<AppTruth>,
    pub instances: Vec<PlantedInstance>,
    pub decoys: Vec<PlantedDecoy>,
}

fn write_app(app: &SynthApp, screens_dir: &Path) -> Result<(), SynthError> {
    let dir = screens_dir.join(&app.truth.package_id);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    for s in &app.screens {
        let json_path = dir.join(format!("{}.json", s.screen_id));
        let text = serde_json::to_string(&hierarchy_json(&s.root)).expect("JSON values serialize");
        fs::write(&json_path, text).map_err(io_err(&json_path))?;
        let png = dir.join(format!("{}.png", s.screen_id));
        s.image.save(&png).map_err(|source| SynthError::Image { path: png, source })?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), SynthError> {
    fs::write(path, text).map_err(io_err(path))
}

/// Writes the corpus under `root` and returns the ground truth.
pub fn generate(spec: &SynthSpec, root: &Path) -> Result<SynthOutput, SynthError> {
    let plans = plan_apps(spec)?;
    let layout = SynthLayout::new(root);
    fs::create_dir_all(&layout.screens_dir).map_err(io_err(&layout.screens_dir))?;

    let apps: Vec<(AppTruth, Vec<PlantedInstance>, Vec<PlantedDecoy>)> = plans
        .par_iter()
        .map(|plan| {
            let app = generate_app(spec, plan);
            write_app(&app, &layout.screens_dir)?;
            Ok((app.truth, app.instances, app.decoys))
        })
        .collect::<Result<_, SynthError>>()?;

    let mut meta = String::from("package,avg_rating,installs,category\n");
    let mut excl = String::new();
    let mut gt = String::from("package,kind,uses,occluded_count,decoy_count\n");
    let mut inst = String::from("package,screen,node_path,kind,variant,occluded\n");
    let mut out = SynthOutput {
        layout: layout.clone(),
        truth: Vec::with_capacity(apps.len()),
        instances: Vec::new(),
        decoys: Vec::new(),
    };
    for (truth, instances, decoys) in apps {
        if let Some(m) = &truth.metadata {
            meta.push_str(&format!(
                "{},{:.2},\"{}\",{}\n",
                truth.package_id,
                m.avg_rating,
                format_installs(m.installs),
                m.category
            ));
        }
        if truth.excluded {
            excl.push_str(&truth.package_id);
            excl.push('\n');
        }
        for (kind, k) in &truth.kinds {
            gt.push_str(&format!(
                "{},{},{},{},{}\n",
                truth.package_id, kind, k.uses, k.occluded_count, k.decoy_count
            ));
        }
        for i in &instances {
            inst.push_str(&format!(
                "{},{},{},{},{},{}\n",
                i.package_id,
                i.screen_id,
                format_path(&i.node_path),
                i.kind,
                i.variant.as_str(),
                i.occluded
            ));
        }
        out.truth.push(truth);
        out.instances.extend(instances);
        out.decoys.extend(decoys);
    }
    write_text(&layout.metadata, &meta)?;
    write_text(&layout.exclusions, &excl)?;
    write_text(&layout.ground_truth, &gt)?;
    write_text(&layout.instances, &inst)?;
    let spec_path = root.join("synth_spec.toml");
    let spec_text = toml::to_string(spec).map_err(|e| SynthError::Invalid(e.to_string()))?;
    let mut f = fs::File::create(&spec_path).map_err(io_err(&spec_path))?;
    f.write_all(spec_text.as_bytes()).map_err(io_err(&spec_path))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{detect_in_screen, KeywordRegistry, OfficialClasses};
    use crate::ingest::{parse_view_hierarchy, Screen, ScreenshotRef};

    fn small(apps: usize) -> SynthSpec {
        SynthSpec {
            apps,
            image_width: 90,
            image_height: 160,
            seed: 7,
            ..SynthSpec::default()
        }
    }

    fn as_screen(s: &SynthScreen) -> Screen {
        Screen::new(
            s.screen_id.clone(),
            s.root.clone(),
            ScreenshotRef {
                path: PathBuf::from("x.png"),
                width: s.image.width(),
                height: s.image.height(),
            },
        )
        .unwrap()
    }

    fn all_apps(spec: &SynthSpec) -> Vec<SynthApp> {
        plan_apps(spec).unwrap().iter().map(|p| generate_app(spec, p)).collect()
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = SynthSpec {
            decoy_rate: 1.5,
            ..small(5)
        };
        assert!(matches!(bad.validate(), Err(SynthError::InvalidProbability { .. })));
        let unsat = SynthSpec {
            occlusion_rate: 0.5,
            ..small(5).with_adoption(Adoption::Constant { p: 0.0 })
        };
        assert!(matches!(unsat.validate(), Err(SynthError::Unsatisfiable(_))));
        let screens = SynthSpec {
            screens_min: 1,
            ..small(5)
        };
        assert!(screens.validate().is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small(6);
        let a = all_apps(&spec);
        let b = all_apps(&spec);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.truth, y.truth);
            assert_eq!(x.instances, y.instances);
            for (s, t) in x.screens.iter().zip(&y.screens) {
                assert_eq!(s.root, t.root);
                assert_eq!(s.image, t.image);
            }
        }
    }

    #[test]
    fn hierarchy_round_trips_through_parser() {
        let spec = small(3);
        for app in all_apps(&spec) {
            for s in &app.screens {
                let text = serde_json::to_string(&hierarchy_json(&s.root)).unwrap();
                assert_eq!(parse_view_hierarchy(&text).unwrap(), s.root);
            }
        }
    }

    #[test]
    fn planted_nodes_match_instances_and_classes() {
        let spec = small(40);
        let official = OfficialClasses::default();
        let registry = KeywordRegistry::default();
        for app in all_apps(&spec) {
            for inst in &app.instances {
                let screen = app.screens.iter().find(|s| s.screen_id == inst.screen_id).unwrap();
                let n = screen.root.descendant(&inst.node_path).unwrap();
                assert_eq!(n.bounds, inst.bounds);
                assert!(n.visible_to_user);
                let is_official = official.is_official(inst.kind, &n.class_name, &n.ancestors);
                assert_eq!(is_official, inst.variant != Variant::Custom, "{}", n.class_name);
                let rule = registry.rule(inst.kind).unwrap();
                assert!(crate::detector::match_node(n, rule).is_some());
            }
            for k in ComponentKind::ALL {
                let t = app.truth.kinds[&k];
                assert_eq!(t.uses, t.instances > 0);
                if t.occluded_count > 0 {
                    assert!(t.instances >= 2);
                }
            }
        }
    }

    #[test]
    fn glyphs_render_inside_bounds() {
        let spec = SynthSpec {
            occlusion_rate: 0.0,
            ..small(20)
        };
        for app in all_apps(&spec) {
            for inst in &app.instances {
                let screen = app.screens.iter().find(|s| s.screen_id == inst.screen_id).unwrap();
                let canvas = Canvas::new(spec.image_width, spec.image_height);
                let (x0, y0, x1, y1) = canvas.px(inst.bounds);
                let color = kind_color(inst.kind);
                let inside = |x: u32, y: u32| x >= x0 && x < x1 && y >= y0 && y < y1;
                let mut hits = 0;
                for (x, y, p) in screen.image.enumerate_pixels() {
                    if *p == color {
                        assert!(inside(x, y), "{:?} pixel outside bounds", inst.kind);
                        hits += 1;
                    }
                }
                assert!(hits > 0);
            }
        }
    }

    #[test]
    fn noiseless_plant_is_recovered_exactly() {
        let spec = SynthSpec {
            decoy_rate: 0.0,
            occlusion_rate: 0.0,
            hidden_rate: 1.0,
            ..small(10).with_adoption(Adoption::Constant { p: 1.0 })
        };
        let registry = KeywordRegistry::default();
        for app in all_apps(&spec) {
            let mut found = Vec::new();
            for s in &app.screens {
                for d in detect_in_screen(&app.truth.package_id, &as_screen(s), registry.rules()) {
                    found.push((d.screen_id, d.node_path, d.kind));
                }
            }
            let mut planted: Vec<_> = app
                .instances
                .iter()
                .map(|i| (i.screen_id.clone(), i.node_path.clone(), i.kind))
                .collect();
            found.sort();
            planted.sort();
            assert_eq!(found, planted);
        }
    }

    #[test]
    fn zero_adoption_yields_only_decoys() {
        let spec = SynthSpec {
            occlusion_rate: 0.0,
            decoy_rate: 0.5,
            ..small(10).with_adoption(Adoption::Constant { p: 0.0 })
        };
        let registry = KeywordRegistry::default();
        for app in all_apps(&spec) {
            assert!(!app.truth.uses_any());
            let n: usize = app
                .screens
                .iter()
                .map(|s| detect_in_screen("p", &as_screen(s), registry.rules()).len())
                .sum();
            assert_eq!(n, app.decoys.len());
        }
    }

    #[test]
    fn linear_adoption_tracks_percentile() {
        let spec = SynthSpec {
            screens_min: 2,
            screens_max: 2,
            ..small(600).with_adoption(Adoption::Linear { low: 0.0, high: 1.0 })
        };
        let apps = all_apps(&spec);
        let (mut lo, mut hi) = (0, 0);
        for a in &apps {
            if a.truth.uses(ComponentKind::FloatingActionButton) {
                if a.truth.rating_percentile < 0.5 {
                    lo += 1
                } else {
                    hi += 1
                }
            }
        }
        // expected 75 vs 225
        assert!(hi > 2 * lo, "{lo} vs {hi}");
    }

    #[test]
    fn corpus_files_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let out = generate(&small(4), dir.path()).unwrap();
        let gt = fs::read_to_string(&out.layout.ground_truth).unwrap();
        assert!(gt.starts_with("package,kind,uses,occluded_count,decoy_count\n"));
        assert_eq!(gt.lines().count(), 1 + 4 * 6);
        let meta = fs::read_to_string(&out.layout.metadata).unwrap();
        assert!(meta.lines().nth(1).unwrap().starts_with("com.synth.app00000,"));
        assert!(out.layout.screens_dir.join("com.synth.app00000/0.json").exists());
        assert!(out.layout.screens_dir.join("com.synth.app00000/0.png").exists());
    }
}
