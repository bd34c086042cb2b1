//! Acceptance checks for the whole tool, one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the summary lines are always shown.
//! Pass a substring as the first argument to run only matching criteria.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::panic;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rayon::prelude::*;

use patternscope::analytics::{bucket_curve, pearson, pearson_p_value, split_by_median, split_by_threshold, AppStats, Metric};
use patternscope::detector::{detect_in_screen, ComponentKind, KeywordRegistry};
use patternscope::geometry::{Extent, Rect};
use patternscope::heatmap::Heatmap;
use patternscope::ingest::{parse_view_hierarchy, Screen, ScreenshotRef};
use patternscope::pipeline::{load_usage, ClassifierChoice, Pipeline, PipelineConfig};
use patternscope::synth::{generate, generate_app, plan_apps, Adoption, SynthSpec};

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn copy_tree(src: &Path, dst: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dst)?;
    for entry in fs::read_dir(src)? {
        let entry = entry?;
        let target = dst.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            if entry.file_name() != "out" {
                copy_tree(&entry.path(), &target)?;
            }
        } else {
            fs::copy(entry.path(), target)?;
        }
    }
    Ok(())
}

/// Copies the bundled smoke corpus into `dir` and returns its config.
fn smoke_copy(dir: &Path) -> Result<PipelineConfig, String> {
    copy_tree(&fixtures().join("smoke"), dir).map_err(|e| e.to_string())?;
    PipelineConfig::load(&dir.join("pipeline.toml")).map_err(|e| e.to_string())
}

fn run_all(config: PipelineConfig) -> Result<Pipeline, String> {
    let p = Pipeline::new(config).map_err(|e| e.to_string())?;
    p.run_all(false).map_err(|e| e.to_string())?;
    Ok(p)
}

fn tempdir() -> Result<tempfile::TempDir, String> {
    tempfile::tempdir().map_err(|e| e.to_string())
}

// 1

fn node_fidelity() -> Outcome {
    let text = fs::read_to_string(fixtures().join("invisible_fab.json")).map_err(|e| e.to_string())?;
    let node = parse_view_hierarchy(&text).map_err(|e| e.to_string())?;
    ensure(node.class_name == "android.support.design.widget.FloatingActionButton", || {
        format!("class {}", node.class_name)
    })?;
    let ancestors = [
        "android.support.design.widget.VisibilityAwareImageButton",
        "android.widget.ImageButton",
        "android.widget.ImageView",
        "android.view.View",
        "java.lang.Object",
    ];
    ensure(node.ancestors == ancestors, || format!("ancestors {:?}", node.ancestors))?;
    ensure(node.bounds == Rect::new(1188, 2140, 1384, 2336), || format!("bounds {:?}", node.bounds))?;
    ensure(!node.visible_to_user, || "visible_to_user should be false".into())?;

    let shot = ScreenshotRef {
        path: PathBuf::from("fab.png"),
        width: 1384,
        height: 2336,
    };
    let rules = KeywordRegistry::default();
    let screen = Screen::new("fab", node.clone(), shot.clone()).map_err(|e| e.to_string())?;
    let fabs = detect_in_screen("se.perigee.android.seven", &screen, rules.rules())
        .into_iter()
        .filter(|d| d.kind == ComponentKind::FloatingActionButton)
        .count();
    ensure(fabs == 0, || format!("{fabs} FAB detections on an invisible node"))?;

    // the same node made visible is detected, so visibility is the reason
    let mut shown = node;
    shown.visible_to_user = true;
    let screen = Screen::new("fab", shown, shot).map_err(|e| e.to_string())?;
    let fabs = detect_in_screen("se.perigee.android.seven", &screen, rules.rules())
        .into_iter()
        .filter(|d| d.kind == ComponentKind::FloatingActionButton)
        .count();
    ensure(fabs == 1, || format!("visible copy gave {fabs} FAB detections"))?;
    Ok("fields exact, 0 FAB detections".into())
}

// 2

fn thousand_app_spec() -> SynthSpec {
    SynthSpec {
        apps: 1000,
        decoy_rate: 0.2,
        occlusion_rate: 0.1,
        seed: 20170601,
        ..SynthSpec::default()
    }
}

fn detector_recovery() -> Outcome {
    let spec = thousand_app_spec();
    let plans = plan_apps(&spec).map_err(|e| e.to_string())?;
    let registry = KeywordRegistry::default();
    // (planted, planted found, detections)
    let per_app: Vec<Result<(usize, usize, usize), String>> = plans
        .par_iter()
        .map(|plan| {
            let app = generate_app(&spec, plan);
            let pkg = &app.truth.package_id;
            let planted: BTreeSet<(String, Vec<usize>, ComponentKind)> = app
                .instances
                .iter()
                .map(|i| (i.screen_id.clone(), i.node_path.clone(), i.kind))
                .collect();
            let mut found = BTreeSet::new();
            let mut detections = 0;
            for s in &app.screens {
                let shot = ScreenshotRef {
                    path: PathBuf::new(),
                    width: s.image.width(),
                    height: s.image.height(),
                };
                let screen = Screen::new(s.screen_id.clone(), s.root.clone(), shot).map_err(|e| e.to_string())?;
                for d in detect_in_screen(pkg, &screen, registry.rules()) {
                    detections += 1;
                    let key = (d.screen_id, d.node_path, d.kind);
                    if planted.contains(&key) {
                        found.insert(key);
                    }
                }
            }
            Ok((planted.len(), found.len(), detections))
        })
        .collect();
    let (mut planted, mut found, mut detections) = (0, 0, 0);
    for r in per_app {
        let (p, f, d) = r?;
        planted += p;
        found += f;
        detections += d;
    }
    let recall = found as f64 / planted as f64;
    let precision = found as f64 / detections as f64;
    let summary = format!("recall {recall:.4} ({found}/{planted}), precision {precision:.4} ({found}/{detections})");
    ensure(planted > 0, || "no planted components".into())?;
    ensure(recall == 1.0, || summary.clone())?;
    ensure(precision < 1.0, || format!("{summary}; decoys should lower precision"))?;
    Ok(summary)
}

// 3

fn verifier_lift() -> Outcome {
    let dir = tempdir()?;
    let spec = thousand_app_spec();
    let output = generate(&spec, dir.path()).map_err(|e| e.to_string())?;
    let config = PipelineConfig::from_toml(
        "corpus = \"screens\"\nmetadata = \"metadata.csv\"\nexclusions = \"exclusions.txt\"\nseed = 7\n",
        dir.path(),
    )
    .map_err(|e| e.to_string())?;
    let p = run_all(config)?;

    let mut report = csv::Reader::from_path(p.out_dir().join("train/report.csv")).map_err(|e| e.to_string())?;
    let mut accuracies = BTreeMap::new();
    for row in report.records() {
        let row = row.map_err(|e| e.to_string())?;
        if &row[1] == "test" {
            accuracies.insert(row[0].to_string(), row[4].parse::<f64>().map_err(|e| e.to_string())?);
        }
    }
    ensure(accuracies.len() == ComponentKind::ALL.len(), || {
        format!("test accuracy for {} kinds", accuracies.len())
    })?;
    let worst = accuracies.iter().min_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty");
    ensure(*worst.1 >= 0.95, || format!("{} held-out accuracy {:.4}", worst.0, worst.1))?;

    let usage = load_usage(&p.out_dir().join("verify")).map_err(|e| e.to_string())?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    let (mut occluded, mut occluded_hit) = (0usize, 0usize);
    for truth in output.truth.iter().filter(|t| !t.excluded) {
        let app = usage
            .get(&truth.package_id)
            .ok_or_else(|| format!("{} missing from usage", truth.package_id))?;
        for (kind, kt) in &truth.kinds {
            let predicted = app.kinds.get(kind).is_some_and(|k| k.uses);
            match (predicted, kt.uses) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
            if kt.uses && kt.occluded_count > 0 {
                occluded += 1;
                occluded_hit += usize::from(predicted);
            }
        }
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    let occluded_recall = occluded_hit as f64 / occluded.max(1) as f64;
    let summary = format!(
        "min held-out accuracy {:.4} ({}), precision {precision:.4}, recall {recall:.4}, occluded {occluded_hit}/{occluded}",
        worst.1, worst.0
    );
    ensure(precision >= 0.98 && recall >= 0.95, || summary.clone())?;
    ensure(occluded > 0 && occluded_recall >= 0.95, || summary.clone())?;
    Ok(summary)
}

// 4

/// Correlation from exact integer moment sums.
fn exact_pearson(xs: &[i64], ys: &[i64]) -> f64 {
    let n = xs.len() as i128;
    let sx: i128 = xs.iter().map(|&x| x as i128).sum();
    let sy: i128 = ys.iter().map(|&y| y as i128).sum();
    let sxy: i128 = xs.iter().zip(ys).map(|(&x, &y)| x as i128 * y as i128).sum();
    let sxx: i128 = xs.iter().map(|&x| x as i128 * x as i128).sum();
    let syy: i128 = ys.iter().map(|&y| y as i128 * y as i128).sum();
    let cov = n * sxy - sx * sy;
    let vx = n * sxx - sx * sx;
    let vy = n * syy - sy * sy;
    cov as f64 / ((vx as f64).sqrt() * (vy as f64).sqrt())
}

/// Composite Simpson, doubling the panel count until two successive
/// Richardson-extrapolated estimates agree to `rel`.
fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> f64 {
    let simpson = |panels: usize| {
        let h = (b - a) / panels as f64;
        let mut s = f(a) + f(b);
        for i in 1..panels {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let mut panels = 16;
    let mut prev = simpson(panels);
    let mut prev_extrapolated = f64::NAN;
    loop {
        panels *= 2;
        let next = simpson(panels);
        let extrapolated = (16.0 * next - prev) / 15.0;
        if (extrapolated - prev_extrapolated).abs() <= rel * extrapolated.abs() || panels >= 1 << 24 {
            return extrapolated;
        }
        prev = next;
        prev_extrapolated = extrapolated;
    }
}

/// Two-tailed tail mass of Student's t with n - 2 degrees of freedom beyond
/// the statistic of `rho`. With t = sqrt(nu) tan(theta) the density becomes
/// proportional to cos^(nu - 1)(theta), and |t| maps to theta = asin(|rho|).
fn quadrature_p_value(rho: f64, n: usize) -> f64 {
    let nu = (n - 2) as i32;
    let f = |theta: f64| theta.cos().powi(nu - 1);
    let tail = integrate(f, rho.abs().asin(), FRAC_PI_2, 1e-13);
    let whole = integrate(f, 0.0, FRAC_PI_2, 1e-13);
    tail / whole
}

fn statistics_oracle() -> Outcome {
    let vectors: [(&[i64], &[i64]); 22] = [
        (&[1, 2, 3], &[2, 4, 7]),
        (&[1, 2, 3], &[3, 2, 1]),
        (&[0, 1, 0, 1], &[1, 1, 0, 0]),
        (&[1, 2, 3, 4], &[1, 3, 2, 4]),
        (&[5, 1, 4, 2, 3], &[10, 2, 9, 3, 6]),
        (&[-3, -1, 0, 2, 7], &[4, 1, 0, -1, -9]),
        (&[1, 1, 2, 2, 3, 3], &[1, 2, 2, 3, 3, 4]),
        (&[10, 20, 30, 40, 50], &[12, 18, 33, 41, 49]),
        (&[2, 4, 6, 8, 10, 12], &[1, 0, 1, 0, 1, 0]),
        (&[7, 3, 9, 1, 5, 6, 2], &[8, 2, 9, 2, 4, 7, 1]),
        (&[1, 2, 3, 4, 5, 6, 7, 8], &[8, 6, 7, 5, 3, 0, 9, 1]),
        (&[100, 200, 300], &[-1, 0, 2]),
        (&[0, 0, 1], &[0, 1, 1]),
        (&[3, 1, 4, 1, 5, 9, 2, 6], &[5, 3, 5, 8, 9, 7, 9, 3]),
        (&[-5, -4, -3, -2, -1], &[25, 16, 9, 4, 1]),
        (&[1, 4, 9, 16, 25, 36], &[1, 2, 3, 4, 5, 6]),
        (&[2, 7, 1, 8, 2, 8], &[1, 8, 2, 8, 4, 5]),
        (&[1000, 1001, 1002, 1003], &[5, 7, 6, 9]),
        (&[13, 21, 34, 55, 89], &[1, 1, 2, 3, 5]),
        (&[0, 2, 4, 6, 8, 10, 12], &[3, 3, 4, 3, 3, 4, 3]),
        (&[-1, 1, -1, 1, -1, 1], &[2, -2, 2, -2, 2, -2]),
        (&[6, 2, 8, 4, 0], &[1, 3, 5, 7, 9]),
    ];
    let mut worst_rho: f64 = 0.0;
    for (xs, ys) in vectors {
        let fx: Vec<f64> = xs.iter().map(|&v| v as f64).collect();
        let fy: Vec<f64> = ys.iter().map(|&v| v as f64).collect();
        let got = pearson(&fx, &fy).map_err(|e| format!("{xs:?}: {e}"))?.rho;
        let want = exact_pearson(xs, ys);
        let err = (got - want).abs();
        ensure(err <= 1e-12, || format!("rho {got} vs {want} for {xs:?}, {ys:?}"))?;
        worst_rho = worst_rho.max(err);
    }

    let ns = [3, 4, 5, 8, 12, 20, 30, 50, 100, 250];
    let rhos = [0.0, 0.05, -0.1, 0.25, -0.4, 0.5, 0.6, -0.75, 0.85, -0.9, 0.95, 0.99];
    let mut worst_p: f64 = 0.0;
    let mut cells = 0;
    for &n in &ns {
        for &rho in &rhos {
            let want = quadrature_p_value(rho, n);
            let got = pearson_p_value(rho, n);
            let rel = (got - want).abs() / want;
            ensure(rel <= 1e-9, || format!("p({rho}, {n}) = {got:e}, quadrature {want:e}"))?;
            worst_p = worst_p.max(rel);
            cells += 1;
        }
    }

    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (
        prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..50),
        prop_oneof![0.01f64..100.0, -100.0f64..-0.01],
        -1e3f64..1e3,
        prop_oneof![0.01f64..100.0, -100.0f64..-0.01],
        -1e3f64..1e3,
    );
    runner
        .run(&strategy, |(pairs, a, b, c, d)| {
            let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let r = pearson(&xs, &ys).unwrap();
            let swapped = pearson(&ys, &xs).unwrap();
            prop_assert!((r.rho - swapped.rho).abs() <= 1e-12);
            prop_assert!((r.p_value - swapped.p_value).abs() <= 1e-12);
            let u: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let v: Vec<f64> = ys.iter().map(|y| c * y + d).collect();
            let t = pearson(&u, &v).unwrap();
            let sign = (a * c).signum();
            prop_assert!((t.rho - sign * r.rho).abs() <= 1e-9, "{} vs {}", t.rho, sign * r.rho);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!(
        "22 vectors max |err| {worst_rho:.1e}, {cells} p-values max rel err {worst_p:.1e}, 10000 property cases"
    ))
}

// 5

/// Bucket-curve correlations over 10,000 apps whose per-kind adoption is
/// `adoption`; `targets` names kinds, `None` meaning use of any kind.
fn planted_curves(
    adoption: BTreeMap<ComponentKind, Adoption>,
    targets: &[Option<ComponentKind>],
) -> Result<Vec<(String, f64)>, String> {
    let spec = SynthSpec {
        apps: 10_000,
        screens_min: 2,
        screens_max: 2,
        adoption,
        decoy_rate: 0.0,
        occlusion_rate: 0.0,
        hidden_rate: 0.0,
        exclusion_rate: 0.0,
        image_width: 18,
        image_height: 32,
        seed: 41,
        ..SynthSpec::default()
    };
    let plans = plan_apps(&spec).map_err(|e| e.to_string())?;
    let uses: BTreeMap<String, BTreeSet<ComponentKind>> = plans
        .par_iter()
        .map(|plan| {
            let truth = generate_app(&spec, plan).truth;
            let used = truth.kinds.iter().filter(|(_, k)| k.uses).map(|(kind, _)| *kind).collect();
            (truth.package_id, used)
        })
        .collect();
    let apps: Vec<AppStats> = plans
        .iter()
        .map(|p| AppStats {
            package_id: p.package_id.clone(),
            avg_rating: p.metadata.avg_rating,
            installs: p.metadata.installs,
            category: p.metadata.category.clone(),
        })
        .collect();
    let index: Vec<f64> = (0..100).map(f64::from).collect();
    targets
        .iter()
        .map(|&target| {
            let curve = bucket_curve(&apps, Metric::AvgRating, 100, |a| match target {
                Some(k) => uses[&a.package_id].contains(&k),
                None => !uses[&a.package_id].is_empty(),
            })
            .map_err(|e| e.to_string())?;
            let rho = pearson(&index, &curve.fractions).map_err(|e| e.to_string())?.rho;
            Ok((target.map_or("any".to_string(), |k| k.to_string()), rho))
        })
        .collect()
}

fn planted_correlation() -> Outcome {
    let linear = Adoption::Linear { low: 0.05, high: 0.65 };
    // every kind planted: each kind's curve carries the linear trend
    let all: BTreeMap<_, _> = ComponentKind::ALL.iter().map(|k| (*k, linear)).collect();
    let kinds: Vec<Option<ComponentKind>> = ComponentKind::ALL.iter().map(|k| Some(*k)).collect();
    let mut results = planted_curves(all, &kinds)?;
    // one kind planted: use of any kind is itself linear in the percentile
    let single = ComponentKind::ALL
        .iter()
        .map(|k| (*k, if *k == ComponentKind::AppBar { linear } else { Adoption::Constant { p: 0.0 } }))
        .collect();
    results.extend(planted_curves(single, &[None])?);
    let worst = results.iter().min_by(|a, b| a.1.total_cmp(&b.1)).expect("non-empty");
    let summary = format!("{} curves, lowest rho {:.4} ({})", results.len(), worst.1, worst.0);
    ensure(worst.1 >= 0.9, || summary.clone())?;
    Ok(summary)
}

// 6

fn split_invariants() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 2_000,
        failure_persistence: None,
        ..Config::default()
    });
    let stats = |values: &[u16]| -> Vec<AppStats> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| AppStats {
                package_id: format!("app{i:04}"),
                avg_rating: f64::from(*v) / 10.0,
                installs: u64::from(*v) * 1000,
                category: "C".into(),
            })
            .collect()
    };
    runner
        .run(&(prop::collection::vec(0u16..60, 2..200), 0u16..60), |(values, t)| {
            let apps = stats(&values);
            for metric in Metric::ALL {
                let threshold = metric.value(&apps[usize::from(t) % apps.len()]);
                let split = split_by_threshold(&apps, metric, threshold).unwrap();
                prop_assert_eq!(split.low.len() + split.high.len(), apps.len());
                prop_assert!(split.low.is_disjoint(&split.high));
                for a in &apps {
                    // ties with the threshold belong to the high group
                    prop_assert_eq!(split.high.contains(&a.package_id), metric.value(a) >= threshold);
                }
                if let Ok(m) = split_by_median(&apps, metric) {
                    let mut sorted: Vec<f64> = apps.iter().map(|a| metric.value(a)).collect();
                    sorted.sort_by(f64::total_cmp);
                    let n = sorted.len();
                    let median = if n % 2 == 1 { sorted[n / 2] } else { (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0 };
                    prop_assert_eq!(m.threshold, median);
                    prop_assert_eq!(m.low.len() + m.high.len(), n);
                    prop_assert!(m.low.is_disjoint(&m.high));
                    for a in &apps {
                        prop_assert_eq!(m.high.contains(&a.package_id), metric.value(a) >= median);
                    }
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    runner
        .run(&(prop::collection::vec(0u16..100, 1..400), 1usize..120), |(values, k)| {
            let apps = stats(&values);
            prop_assume!(k <= apps.len());
            let curve = bucket_curve(&apps, Metric::AvgRating, k, |a| a.avg_rating >= 5.0).unwrap();
            prop_assert_eq!(curve.counts.len(), k);
            let (lo, hi) = (curve.counts.iter().min().unwrap(), curve.counts.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
            let mut order: Vec<&AppStats> = apps.iter().collect();
            order.sort_by(|a, b| a.avg_rating.total_cmp(&b.avg_rating).then_with(|| a.package_id.cmp(&b.package_id)));
            let expected: Vec<String> = order.iter().map(|a| a.package_id.clone()).collect();
            prop_assert_eq!(curve.members.concat(), expected);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("2000 split cases, 2000 bucket cases".into())
}

// 7

fn heatmap_properties() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 2_000,
        failure_persistence: None,
        ..Config::default()
    });
    let rect = (0i32..1440, 0i32..2560, 1i32..600, 1i32..600).prop_map(|(l, t, w, h)| Rect::new(l, t, l + w, t + h));
    let strategy = (
        prop::collection::vec(rect, 1..120),
        1usize..40,
        1usize..70,
        any::<u64>(),
        0usize..120,
    );
    let extent = Extent::new(1440, 2560);
    runner
        .run(&strategy, |(rects, cols, rows, shuffle_seed, cut)| {
            let kind = ComponentKind::FloatingActionButton;
            let build = |rs: &[Rect]| {
                let mut h = Heatmap::new(kind, cols, rows).unwrap();
                rs.iter().for_each(|r| h.add(r, extent));
                h
            };
            let whole = build(&rects);

            let mut shuffled = rects.clone();
            let mut state = shuffle_seed | 1;
            for i in (1..shuffled.len()).rev() {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                shuffled.swap(i, (state % (i as u64 + 1)) as usize);
            }
            let reordered = build(&shuffled);
            prop_assert_eq!(whole.counts(), reordered.counts());
            prop_assert_eq!(whole.median_size(), reordered.median_size());

            let cut = cut.min(rects.len());
            let mut merged = build(&rects[..cut]);
            merged.merge(&build(&rects[cut..])).unwrap();
            prop_assert_eq!(merged.counts(), whole.counts());
            prop_assert_eq!(merged.total(), whole.total());
            prop_assert_eq!(merged.median_size(), whole.median_size());

            let norm = whole.normalized().unwrap();
            let max = norm.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(max, 1.0);
            prop_assert!(norm.iter().flatten().all(|v| (0.0..=1.0).contains(v)));

            // first maximal cell in row-major order
            let counts = whole.counts();
            let top = *counts.iter().max().unwrap();
            let mut expected = None;
            'scan: for r in 0..rows {
                for c in 0..cols {
                    if counts[r * cols + c] == top {
                        expected = Some((r, c));
                        break 'scan;
                    }
                }
            }
            prop_assert_eq!(Some(whole.argmax_cell().unwrap()), expected);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("2000 random detection multisets".into())
}

// 8

fn collect_outputs(root: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else if matches!(path.extension().and_then(|e| e.to_str()), Some("csv" | "json")) {
                let bytes = fs::read(&path).map_err(|e| e.to_string())?;
                out.insert(path.strip_prefix(root).expect("under root").to_path_buf(), bytes);
            }
        }
    }
    Ok(out)
}

fn pipeline_determinism() -> Outcome {
    let (a, b) = (tempdir()?, tempdir()?);
    let pa = run_all(smoke_copy(a.path())?)?;
    let pb = run_all(smoke_copy(b.path())?)?;
    let (fa, fb) = (collect_outputs(pa.out_dir())?, collect_outputs(pb.out_dir())?);
    ensure(!fa.is_empty(), || "no outputs".into())?;
    let names_a: Vec<&PathBuf> = fa.keys().collect();
    let names_b: Vec<&PathBuf> = fb.keys().collect();
    ensure(names_a == names_b, || "different output file sets".into())?;
    if let Some(path) = fa.keys().find(|k| fa[*k] != fb[*k]) {
        return Err(format!("{} differs between runs", path.display()));
    }
    Ok(format!("{} CSV/JSON files byte-identical", fa.len()))
}

// 9

fn external_equivalence() -> Outcome {
    let dir = tempdir()?;
    let config = smoke_copy(dir.path())?;
    let reference = run_all(config.clone())?;
    let train_dir = reference.out_dir().join("train");

    let mut external = config;
    external.out = dir.path().join("out_external");
    external.classifier = ClassifierChoice::External;
    external.scorer_command = Some(format!(
        "{} score --models {}",
        env!("CARGO_BIN_EXE_patternscope"),
        train_dir.display()
    ));
    let external = run_all(external)?;

    let a = load_usage(&reference.out_dir().join("verify")).map_err(|e| e.to_string())?;
    let b = load_usage(&external.out_dir().join("verify")).map_err(|e| e.to_string())?;
    let used = a.values().flat_map(|u| u.kinds.values()).filter(|k| k.uses).count();
    ensure(used > 0, || "no verified usage to compare".into())?;
    if let Some(pkg) = a.keys().find(|k| a.get(*k) != b.get(*k)) {
        return Err(format!("usage of {pkg} differs"));
    }
    ensure(a.len() == b.len(), || format!("{} vs {} apps", a.len(), b.len()))?;
    Ok(format!("{} apps, {used} (app, kind) uses identical", a.len()))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { name: "hierarchy node fidelity", budget: Duration::from_secs(1), run: node_fidelity },
        Criterion { name: "detector recovery", budget: Duration::from_secs(30), run: detector_recovery },
        Criterion { name: "verifier lift", budget: Duration::from_secs(300), run: verifier_lift },
        Criterion { name: "statistics oracle", budget: Duration::from_secs(60), run: statistics_oracle },
        Criterion { name: "planted correlation", budget: Duration::from_secs(120), run: planted_correlation },
        Criterion { name: "split invariants", budget: Duration::from_secs(60), run: split_invariants },
        Criterion { name: "heatmap properties", budget: Duration::from_secs(60), run: heatmap_properties },
        Criterion { name: "pipeline determinism", budget: Duration::from_secs(120), run: pipeline_determinism },
        Criterion { name: "external scorer equivalence", budget: Duration::from_secs(60), run: external_equivalence },
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, c) in criteria.iter().enumerate() {
        if filter.as_deref().is_some_and(|f| !c.name.contains(f)) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(c.run).unwrap_or_else(|payload| {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > c.budget => Err(format!("{detail}; over the {:?} budget", c.budget)),
            r => r,
        };
        match result {
            Ok(detail) => println!("criterion {} {}: PASS in {elapsed:.2?} ({detail})", i + 1, c.name),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {}: FAIL in {elapsed:.2?} ({detail})", i + 1, c.name);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
