//! Group splits, usage rates, percentile usage curves, correlations and
//! box-plot summaries over per-app usage.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::detector::ComponentKind;
use crate::verifier::AppComponentUsage;

pub const DEFAULT_INSTALL_THRESHOLD: f64 = 1_000_000.0;
pub const DEFAULT_CATEGORY_MIN_COUNT: usize = 20;
pub const DEFAULT_BUCKETS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("need at least {required} apps with {metric}, found {found}")]
    TooFewApps {
        metric: Metric,
        found: usize,
        required: usize,
    },
    #[error("all {metric} values are identical; the split is degenerate")]
    Degenerate { metric: Metric },
    #[error("group is empty")]
    EmptyGroup,
    #[error("{count} apps cannot fill {k} buckets; use k <= {count}")]
    TooFewForBuckets { count: usize, k: usize },
    #[error("bucket count must be positive")]
    ZeroBuckets,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("correlation needs at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("no values to summarize")]
    NoValues,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    AvgRating,
    Installs,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::AvgRating, Metric::Installs];

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::AvgRating => "avg_rating",
            Metric::Installs => "installs",
        }
    }

    pub fn value(&self, app: &AppStats) -> f64 {
        match self {
            Metric::AvgRating => app.avg_rating,
            Metric::Installs => app.installs as f64,
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Metadata of one analyzable app. `installs` is the lower bound of the
/// marketplace install bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppStats {
    pub package_id: String,
    pub avg_rating: f64,
    pub installs: u64,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSplit {
    pub metric: Metric,
    pub threshold: f64,
    pub low: BTreeSet<String>,
    pub high: BTreeSet<String>,
}

impl GroupSplit {
    pub fn is_high(&self, value: f64) -> bool {
        value >= self.threshold
    }
}

/// Median of a non-empty slice; an even count averages the middle pair.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Splits at the median; apps equal to the median go to the high group.
pub fn split_by_median(apps: &[AppStats], metric: Metric) -> Result<GroupSplit, AnalyticsError> {
    if apps.len() < 2 {
        return Err(AnalyticsError::TooFewApps {
            metric,
            found: apps.len(),
            required: 2,
        });
    }
    let values: Vec<f64> = apps.iter().map(|a| metric.value(a)).collect();
    if values.iter().all(|v| *v == values[0]) {
        return Err(AnalyticsError::Degenerate { metric });
    }
    let threshold = median(&values).expect("non-empty");
    split_by_threshold(apps, metric, threshold)
}

/// `high` holds apps with metric >= threshold, `low` the rest.
pub fn split_by_threshold(apps: &[AppStats], metric: Metric, threshold: f64) -> Result<GroupSplit, AnalyticsError> {
    if apps.is_empty() {
        return Err(AnalyticsError::TooFewApps {
            metric,
            found: 0,
            required: 1,
        });
    }
    let mut split = GroupSplit {
        metric,
        threshold,
        low: BTreeSet::new(),
        high: BTreeSet::new(),
    };
    for app in apps {
        let target = if metric.value(app) >= threshold {
            &mut split.high
        } else {
            &mut split.low
        };
        target.insert(app.package_id.clone());
    }
    Ok(split)
}

/// True iff the app uses any of the six kinds.
pub fn material_usage(usage: &BTreeMap<String, AppComponentUsage>, package_id: &str) -> bool {
    usage.get(package_id).is_some_and(AppComponentUsage::uses_any)
}

fn uses(usage: &BTreeMap<String, AppComponentUsage>, package_id: &str, kind: Option<ComponentKind>) -> bool {
    match kind {
        Some(k) => usage.get(package_id).is_some_and(|u| u.uses(k)),
        None => material_usage(usage, package_id),
    }
}

/// Fraction of the group using `kind`; `None` means any kind. Apps absent
/// from the usage map count as non-users.
pub fn usage_rate(
    group: &BTreeSet<String>,
    kind: Option<ComponentKind>,
    usage: &BTreeMap<String, AppComponentUsage>,
) -> Result<f64, AnalyticsError> {
    if group.is_empty() {
        return Err(AnalyticsError::EmptyGroup);
    }
    let users = group.iter().filter(|p| uses(usage, p, kind)).count();
    Ok(users as f64 / group.len() as f64)
}

/// Share of all users of `kind` (across both groups) that sit in the high group.
pub fn high_group_share(
    split: &GroupSplit,
    kind: Option<ComponentKind>,
    usage: &BTreeMap<String, AppComponentUsage>,
) -> Option<f64> {
    let high = split.high.iter().filter(|p| uses(usage, p, kind)).count();
    let low = split.low.iter().filter(|p| uses(usage, p, kind)).count();
    (high + low > 0).then(|| high as f64 / (high + low) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketCurve {
    pub metric: Metric,
    pub k: usize,
    pub fractions: Vec<f64>,
    pub counts: Vec<usize>,
    /// Lowest and highest metric value in each bucket.
    pub ranges: Vec<(f64, f64)>,
    pub members: Vec<Vec<String>>,
}

/// Sorts by metric (ties by package id), cuts into `k` contiguous buckets
/// whose sizes differ by at most one with the larger ones first, and
/// reports the predicate-true fraction per bucket.
pub fn bucket_curve<F>(apps: &[AppStats], metric: Metric, k: usize, predicate: F) -> Result<BucketCurve, AnalyticsError>
where
    F: Fn(&AppStats) -> bool,
{
    if k == 0 {
        return Err(AnalyticsError::ZeroBuckets);
    }
    if apps.len() < k {
        return Err(AnalyticsError::TooFewForBuckets { count: apps.len(), k });
    }
    let mut sorted: Vec<&AppStats> = apps.iter().collect();
    sorted.sort_by(|a, b| {
        metric
            .value(a)
            .total_cmp(&metric.value(b))
            .then_with(|| a.package_id.cmp(&b.package_id))
    });
    let (base, extra) = (sorted.len() / k, sorted.len() % k);
    let mut curve = BucketCurve {
        metric,
        k,
        fractions: Vec::with_capacity(k),
        counts: Vec::with_capacity(k),
        ranges: Vec::with_capacity(k),
        members: Vec::with_capacity(k),
    };
    let mut start = 0;
    for b in 0..k {
        let size = base + usize::from(b < extra);
        let bucket = &sorted[start..start + size];
        start += size;
        let hits = bucket.iter().filter(|a| predicate(a)).count();
        curve.fractions.push(hits as f64 / size as f64);
        curve.counts.push(size);
        curve.ranges.push((metric.value(bucket[0]), metric.value(bucket[size - 1])));
        curve.members.push(bucket.iter().map(|a| a.package_id.clone()).collect());
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Pearson product-moment correlation with a two-tailed p-value from the
/// t statistic with n - 2 degrees of freedom.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult, AnalyticsError> {
    if xs.len() != ys.len() {
        return Err(AnalyticsError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 3 {
        return Err(AnalyticsError::TooFewSamples(n));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(AnalyticsError::ZeroVariance("xs"));
    }
    if syy == 0.0 {
        return Err(AnalyticsError::ZeroVariance("ys"));
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok(CorrelationResult {
        rho,
        p_value: pearson_p_value(rho, n),
        n,
    })
}

/// Two-tailed p-value for a correlation `rho` over `n` samples:
/// P(|T| >= |t|) = I_{1 - rho^2}((n - 2) / 2, 1 / 2).
pub fn pearson_p_value(rho: f64, n: usize) -> f64 {
    assert!(n >= 3, "p-value needs n >= 3");
    let r2 = rho * rho;
    if r2 >= 1.0 {
        return 0.0;
    }
    let nu = (n - 2) as f64;
    beta_reg(nu / 2.0, 0.5, 1.0 - r2).clamp(0.0, 1.0)
}

/// Box-plot summary with linear-interpolation quantiles. Whiskers are the
/// most extreme observations within 1.5 IQR of the quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumberSummary {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
}

/// Quantile of sorted data, interpolating between order statistics at
/// position `(n - 1) p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn five_number_summary(values: &[f64]) -> Result<FiveNumberSummary, AnalyticsError> {
    if values.is_empty() {
        return Err(AnalyticsError::NoValues);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&v, 0.25);
    let q3 = quantile_sorted(&v, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    Ok(FiveNumberSummary {
        n: v.len(),
        min: v[0],
        q1,
        median: quantile_sorted(&v, 0.5),
        q3,
        max: v[v.len() - 1],
        whisker_low: *v.iter().find(|x| **x >= lo_fence).expect("q1 lies within the fences"),
        whisker_high: *v.iter().rev().find(|x| **x <= hi_fence).expect("q3 lies within the fences"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRate {
    pub category: String,
    pub apps: usize,
    pub users: usize,
    pub rate: f64,
}

/// Usage rate per category among categories with at least `min_count`
/// apps, highest rate first (ties by category name).
pub fn category_rates(
    apps: &[AppStats],
    kind: Option<ComponentKind>,
    usage: &BTreeMap<String, AppComponentUsage>,
    min_count: usize,
) -> Vec<CategoryRate> {
    let mut by_cat: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for app in apps {
        let e = by_cat.entry(app.category.as_str()).or_default();
        e.0 += 1;
        e.1 += usize::from(uses(usage, &app.package_id, kind));
    }
    let mut out: Vec<CategoryRate> = by_cat
        .into_iter()
        .filter(|(_, (n, _))| *n >= min_count.max(1))
        .map(|(c, (n, u))| CategoryRate {
            category: c.to_string(),
            apps: n,
            users: u,
            rate: u as f64 / n as f64,
        })
        .collect();
    out.sort_by(|a, b| b.rate.total_cmp(&a.rate).then_with(|| a.category.cmp(&b.category)));
    out
}
