//! Reference verifier: logistic regression over mean-centred pixels of an
//! area-averaged thumbnail (one shared scale), trained by seeded mini-batch
//! momentum SGD with class weighting and early stopping on validation loss.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::split::{DatasetSplit, Partition, SplitSample};
use super::VerifyError;
use crate::crop::resize_area;
use crate::detector::ComponentKind;

const MODEL_MAGIC: &str = "patternscope-verifier 1";
const HEADER_END: &str = "end-header";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Thumbnails are `input_size x input_size` RGB.
    pub input_size: u32,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub l2: f64,
    pub threshold: f64,
    /// Pick the threshold maximizing validation balanced accuracy.
    pub tune_threshold: bool,
    pub seed: u64,
    /// Training fails when validation accuracy is at most `0.5 + failure_margin`.
    pub failure_margin: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            input_size: 32,
            learning_rate: 0.001,
            max_epochs: 40,
            batch_size: 64,
            patience: 6,
            l2: 1e-4,
            threshold: 0.5,
            tune_threshold: false,
            seed: 0,
            failure_margin: 0.1,
        }
    }
}

/// One labeled thumbnail. `positive` marks a stock-implementation candidate;
/// mined negatives are `false`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub kind: ComponentKind,
    pub app_id: String,
    pub positive: bool,
    pub thumb: RgbImage,
}

impl SplitSample for TrainingSample {
    fn app_id(&self) -> &str {
        &self.app_id
    }
    fn is_positive(&self) -> bool {
        self.positive
    }
}

/// Scores are probabilities from the logistic link; a crop is positive iff
/// its score reaches `threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifierModel {
    pub kind: ComponentKind,
    pub input_size: u32,
    pub threshold: f64,
    pub seed: u64,
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub positives: usize,
    pub accuracy: f64,
    /// Mean of per-class recall; absent when a class is missing.
    pub balanced_accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

impl Metrics {
    pub fn from_predictions(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let (mut tp, mut tn, mut fp, mut fne) = (0usize, 0usize, 0usize, 0usize);
        for (truth, predicted) in pairs {
            match (truth, predicted) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (false, true) => fp += 1,
                (true, false) => fne += 1,
            }
        }
        let n = tp + tn + fp + fne;
        let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
        let recall = ratio(tp, tp + fne);
        let specificity = ratio(tn, tn + fp);
        Self {
            n,
            positives: tp + fne,
            accuracy: ratio(tp + tn, n).unwrap_or(0.0),
            balanced_accuracy: recall.zip(specificity).map(|(r, s)| (r + s) / 2.0),
            precision: ratio(tp, tp + fp),
            recall,
        }
    }

    /// Balanced accuracy when both classes are present, plain accuracy otherwise.
    pub fn headline(&self) -> f64 {
        self.balanced_accuracy.unwrap_or(self.accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub kind: ComponentKind,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub threshold: f64,
    pub train: Metrics,
    pub validation: Metrics,
    pub test: Metrics,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn thumbnail(image: &RgbImage, size: u32) -> RgbImage {
    if image.dimensions() == (size, size) {
        image.clone()
    } else {
        resize_area(image, size, size)
    }
}

fn raw_features(thumb: &RgbImage) -> impl Iterator<Item = f64> + '_ {
    thumb.as_raw().iter().map(|&b| f64::from(b) / 255.0)
}

impl VerifierModel {
    pub fn feature_len(&self) -> usize {
        self.weights.len()
    }

    fn logit(&self, thumb: &RgbImage) -> f64 {
        let mut z = self.bias;
        for (j, x) in raw_features(thumb).enumerate() {
            z += self.weights[j] * (x - self.mean[j]) * self.scale[j];
        }
        z
    }

    /// Scores a thumbnail already at `input_size`.
    pub fn score_thumbnail(&self, thumb: &RgbImage) -> Result<f64, VerifyError> {
        if thumb.dimensions() != (self.input_size, self.input_size) {
            return Err(VerifyError::MalformedImage(format!(
                "thumbnail is {}x{}, model expects {}x{}",
                thumb.width(),
                thumb.height(),
                self.input_size,
                self.input_size
            )));
        }
        Ok(sigmoid(self.logit(thumb)))
    }

    /// Scores a crop of any size after area-averaging it to `input_size`.
    pub fn score(&self, crop: &RgbImage) -> Result<f64, VerifyError> {
        if crop.width() == 0 || crop.height() == 0 {
            return Err(VerifyError::MalformedImage("empty crop".into()));
        }
        self.score_thumbnail(&thumbnail(crop, self.input_size))
    }

    pub fn is_positive(&self, score: f64) -> bool {
        score >= self.threshold
    }

    /// Plain-text header followed by little-endian `f64` parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write!(
            out,
            "{MODEL_MAGIC}\nkind: {}\ninput_size: {}\nthreshold: {}\nseed: {}\nfeatures: {}\n{HEADER_END}\n",
            self.kind,
            self.input_size,
            self.threshold,
            self.seed,
            self.weights.len()
        )
        .expect("writing to a Vec cannot fail");
        for v in self.mean.iter().chain(&self.scale).chain(&self.weights) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.bias.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, VerifyError> {
        let bad = |m: &str| VerifyError::ModelFormat(m.to_string());
        let marker = format!("\n{HEADER_END}\n");
        let end = bytes
            .windows(marker.len())
            .position(|w| w == marker.as_bytes())
            .ok_or_else(|| bad("missing header terminator"))?;
        let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8"))?;
        let mut lines = header.lines();
        if lines.next() != Some(MODEL_MAGIC) {
            return Err(bad("unsupported model version"));
        }
        let mut fields = std::collections::BTreeMap::new();
        for line in lines {
            let (k, v) = line.split_once(':').ok_or_else(|| bad("malformed header line"))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let field = |k: &str| fields.get(k).ok_or_else(|| bad(&format!("missing `{k}`")));
        let kind: ComponentKind = field("kind")?.parse().map_err(|_| bad("bad kind"))?;
        let input_size: u32 = field("input_size")?.parse().map_err(|_| bad("bad input_size"))?;
        let threshold: f64 = field("threshold")?.parse().map_err(|_| bad("bad threshold"))?;
        let seed: u64 = field("seed")?.parse().map_err(|_| bad("bad seed"))?;
        let d: usize = field("features")?.parse().map_err(|_| bad("bad features"))?;
        if d != 3 * (input_size as usize).pow(2) {
            return Err(bad("feature count does not match input_size"));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(bad("threshold outside (0, 1)"));
        }
        let body = &bytes[end + marker.len()..];
        if body.len() != (3 * d + 1) * 8 {
            return Err(bad("parameter block has the wrong length"));
        }
        let mut values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
        let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<f64>>();
        let mean = take(d);
        let scale = take(d);
        let weights = take(d);
        let bias = take(1)[0];
        Ok(Self {
            kind,
            input_size,
            threshold,
            seed,
            mean,
            scale,
            weights,
            bias,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), VerifyError> {
        fs::write(path, self.to_bytes()).map_err(|e| VerifyError::Io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self, VerifyError> {
        let bytes = fs::read(path).map_err(|e| VerifyError::Io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes)
    }
}

struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(samples: &[&TrainingSample], d: usize) -> Self {
        let n = samples.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for s in samples {
            for (m, x) in mean.iter_mut().zip(raw_features(&s.thumb)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        // One pooled scale for every feature: per-pixel scaling would blow up
        // pixels that are nearly constant in training and let any unusual
        // value there dominate the score.
        let mut ss = 0.0;
        for s in samples {
            for (m, x) in mean.iter().zip(raw_features(&s.thumb)) {
                ss += (x - m) * (x - m);
            }
        }
        let sd = (ss / (n * d.max(1) as f64)).sqrt();
        let scale = vec![if sd > 1e-9 { 1.0 / sd } else { 0.0 }; d];
        Self { mean, scale }
    }

    fn transform(&self, thumb: &RgbImage) -> Vec<f64> {
        raw_features(thumb)
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) * s)
            .collect()
    }
}

/// Heavy-ball momentum. Unlike per-coordinate adaptive steps, this keeps
/// the single shared feature scale meaningful.
struct Momentum {
    velocity: Vec<f64>,
    lr: f64,
}

impl Momentum {
    const BETA: f64 = 0.9;

    fn new(len: usize, lr: f64) -> Self {
        Self { velocity: vec![0.0; len], lr }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = Self::BETA * *v + g;
            *p -= self.lr * *v;
        }
    }
}

/// Weighted mean log-loss of `params` (weights then bias) over `rows`.
fn weighted_loss(params: &[f64], rows: &[(Vec<f64>, bool)], w_pos: f64, w_neg: f64) -> f64 {
    let d = params.len() - 1;
    let (mut loss, mut total) = (0.0, 0.0);
    for (x, y) in rows {
        let z = params[d] + x.iter().zip(&params[..d]).map(|(a, b)| a * b).sum::<f64>();
        let c = if *y { w_pos } else { w_neg };
        // log(1 + e^-z) for positives, log(1 + e^z) for negatives
        let signed = if *y { -z } else { z };
        let l = if signed > 0.0 {
            signed + (-signed).exp().ln_1p()
        } else {
            signed.exp().ln_1p()
        };
        loss += c * l;
        total += c;
    }
    if total > 0.0 {
        loss / total
    } else {
        0.0
    }
}

/// Trains the verifier for `kind` on the samples of that kind in `split`.
pub fn train(
    samples: &[TrainingSample],
    split: &DatasetSplit,
    kind: ComponentKind,
    config: &TrainConfig,
) -> Result<(VerifierModel, TrainReport), VerifyError> {
    if !(config.threshold > 0.0 && config.threshold < 1.0) {
        return Err(VerifyError::InvalidThreshold(config.threshold));
    }
    let size = config.input_size;
    let d = 3 * (size as usize) * (size as usize);
    let select = |part: Partition| -> Vec<&TrainingSample> {
        split
            .indices(part)
            .iter()
            .map(|&i| &samples[i])
            .filter(|s| s.kind == kind)
            .collect()
    };
    let (train_set, val_set, test_set) = (
        select(Partition::Train),
        select(Partition::Validation),
        select(Partition::Test),
    );
    for s in train_set.iter().chain(&val_set).chain(&test_set) {
        if s.thumb.dimensions() != (size, size) {
            return Err(VerifyError::MalformedImage(format!(
                "training thumbnail for {} is {}x{}, expected {size}x{size}",
                s.app_id,
                s.thumb.width(),
                s.thumb.height()
            )));
        }
    }
    let n_pos = train_set.iter().filter(|s| s.positive).count();
    let n_neg = train_set.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(VerifyError::SingleLabelKind(kind));
    }

    let std = Standardizer::fit(&train_set, d);
    let rows = |set: &[&TrainingSample]| -> Vec<(Vec<f64>, bool)> {
        set.iter().map(|s| (std.transform(&s.thumb), s.positive)).collect()
    };
    let train_rows = rows(&train_set);
    let val_rows = rows(&val_set);
    let n = train_rows.len() as f64;
    let w_pos = n / (2.0 * n_pos as f64);
    let w_neg = n / (2.0 * n_neg as f64);

    let mut params = vec![0.0; d + 1];
    let mut best = params.clone();
    let mut optimizer = Momentum::new(d + 1, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (kind.index() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..train_rows.len()).collect();
    let monitor = if val_rows.is_empty() { &train_rows } else { &val_rows };
    let mut best_loss = weighted_loss(&params, monitor, w_pos, w_neg);
    let (mut best_epoch, mut epochs_run, mut stale) = (0, 0, 0);
    let mut grad = vec![0.0; d + 1];

    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size.max(1)) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut weight_sum = 0.0;
            for &i in batch {
                let (x, y) = &train_rows[i];
                let z = params[d] + x.iter().zip(&params[..d]).map(|(a, b)| a * b).sum::<f64>();
                let c = if *y { w_pos } else { w_neg };
                let err = c * (sigmoid(z) - if *y { 1.0 } else { 0.0 });
                for (g, xi) in grad[..d].iter_mut().zip(x) {
                    *g += err * xi;
                }
                grad[d] += err;
                weight_sum += c;
            }
            for g in grad.iter_mut() {
                *g /= weight_sum;
            }
            for (g, p) in grad[..d].iter_mut().zip(&params[..d]) {
                *g += config.l2 * p;
            }
            optimizer.step(&mut params, &grad);
        }
        let loss = weighted_loss(&params, monitor, w_pos, w_neg);
        if loss < best_loss - 1e-9 {
            best_loss = loss;
            best = params.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    let mut model = VerifierModel {
        kind,
        input_size: size,
        threshold: config.threshold,
        seed: config.seed,
        mean: std.mean,
        scale: std.scale,
        bias: best[d],
        weights: best[..d].to_vec(),
    };
    let score_set = |set: &[&TrainingSample]| -> Vec<(bool, f64)> {
        set.iter()
            .map(|s| (s.positive, sigmoid(model.logit(&s.thumb))))
            .collect()
    };
    let (train_scores, val_scores, test_scores) =
        (score_set(&train_set), score_set(&val_set), score_set(&test_set));

    if config.tune_threshold && !val_scores.is_empty() {
        model.threshold = tune_threshold(&val_scores, config.threshold);
    }
    let metrics = |scores: &[(bool, f64)]| {
        Metrics::from_predictions(scores.iter().map(|&(y, s)| (y, s >= model.threshold)))
    };
    let report = TrainReport {
        kind,
        epochs_run,
        best_epoch,
        threshold: model.threshold,
        train: metrics(&train_scores),
        validation: metrics(&val_scores),
        test: metrics(&test_scores),
    };
    let checked = if report.validation.n > 0 {
        &report.validation
    } else {
        &report.train
    };
    if checked.headline() <= 0.5 + config.failure_margin {
        return Err(VerifyError::TrainingFailed {
            kind,
            validation_accuracy: checked.headline(),
            report: Box::new(report),
        });
    }
    Ok((model, report))
}

/// Threshold on a 0.05 grid with the best validation balanced accuracy;
/// ties keep the value closest to `default`.
fn tune_threshold(scores: &[(bool, f64)], default: f64) -> f64 {
    let mut best = (f64::NEG_INFINITY, default);
    for step in 1..20 {
        let t = step as f64 * 0.05;
        let m = Metrics::from_predictions(scores.iter().map(|&(y, s)| (y, s >= t)));
        let value = m.headline();
        let closer = (t - default).abs() < (best.1 - default).abs();
        if value > best.0 + 1e-12 || ((value - best.0).abs() <= 1e-12 && closer) {
            best = (value, t);
        }
    }
    best.1
}
