//! Hierarchy-to-pixel mapping, candidate crops with margin, negative mining
//! from heatmaps, and area-averaging thumbnails.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{ComponentKind, Detection};
use crate::geometry::{Extent, Rect};
use crate::heatmap::{Heatmap, HeatmapError};
use crate::ingest::Screen;

pub const DEFAULT_MARGIN_FRACTION: f64 = 0.1;

/// Relative difference between horizontal and vertical scale that triggers
/// an aspect-mismatch warning.
pub const ASPECT_TOLERANCE: f64 = 0.02;

#[derive(Debug, Error)]
pub enum CropError {
    #[error("bounds {bounds} map to an empty pixel rectangle")]
    Degenerate { bounds: Rect },
    #[error("margin fraction must be finite and non-negative, got {0}")]
    InvalidMargin(f64),
    #[error("coordinate space and image must be non-empty")]
    EmptyExtent,
    #[error("cannot read screenshot for {package}/{screen}: {source}")]
    Image {
        package: String,
        screen: String,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropLabel {
    Candidate,
    Negative,
}

impl CropLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            CropLabel::Candidate => "candidate",
            CropLabel::Negative => "negative",
        }
    }
}

impl fmt::Display for CropLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CropLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "candidate" => Ok(CropLabel::Candidate),
            "negative" => Ok(CropLabel::Negative),
            other => Err(format!("unknown crop label `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropSource {
    pub package_id: String,
    pub screen_id: String,
    pub node_path: Option<Vec<usize>>,
}

/// A labeled region cut out of a screenshot.
#[derive(Debug, Clone, PartialEq)]
pub struct CropSample {
    pub kind: ComponentKind,
    pub label: CropLabel,
    /// Region in screenshot pixels, margin included.
    pub pixel_rect: Rect,
    pub image: RgbImage,
    pub source: CropSource,
}

/// Maps hierarchy bounds into screenshot pixels.
///
/// Each axis is scaled by `image / virtual`, rounded half away from zero and
/// clamped to the image.
pub fn to_pixel_rect(bounds: &Rect, virtual_extent: Extent, image_dims: Extent) -> Result<Rect, CropError> {
    if !virtual_extent.is_positive() || !image_dims.is_positive() {
        return Err(CropError::EmptyExtent);
    }
    let sx = f64::from(image_dims.width) / f64::from(virtual_extent.width);
    let sy = f64::from(image_dims.height) / f64::from(virtual_extent.height);
    if (sx - sy).abs() / sx.max(sy) > ASPECT_TOLERANCE {
        warn!(
            "aspect mismatch between hierarchy space {}x{} and screenshot {}x{}",
            virtual_extent.width, virtual_extent.height, image_dims.width, image_dims.height
        );
    }
    let map = |v: i32, num: u32, den: u32, max: u32| -> i32 {
        let scaled = (f64::from(v) * f64::from(num) / f64::from(den)).round();
        scaled.clamp(0.0, f64::from(max)) as i32
    };
    let rect = Rect::new(
        map(bounds.left, image_dims.width, virtual_extent.width, image_dims.width),
        map(bounds.top, image_dims.height, virtual_extent.height, image_dims.height),
        map(bounds.right, image_dims.width, virtual_extent.width, image_dims.width),
        map(bounds.bottom, image_dims.height, virtual_extent.height, image_dims.height),
    );
    if rect.is_empty() {
        return Err(CropError::Degenerate { bounds: *bounds });
    }
    Ok(rect)
}

/// Grows `rect` by `margin_fraction * max(width, height)` on every side,
/// clamped to the image.
pub fn expand_rect(rect: &Rect, margin_fraction: f64, image_dims: Extent) -> Result<Rect, CropError> {
    if !margin_fraction.is_finite() || margin_fraction < 0.0 {
        return Err(CropError::InvalidMargin(margin_fraction));
    }
    let pad = (margin_fraction * rect.width().max(rect.height()) as f64).round() as i64;
    let clamp = |v: i64, max: u32| v.clamp(0, i64::from(max)) as i32;
    let out = Rect::new(
        clamp(i64::from(rect.left) - pad, image_dims.width),
        clamp(i64::from(rect.top) - pad, image_dims.height),
        clamp(i64::from(rect.right) + pad, image_dims.width),
        clamp(i64::from(rect.bottom) + pad, image_dims.height),
    );
    if out.is_empty() {
        return Err(CropError::Degenerate { bounds: *rect });
    }
    Ok(out)
}

pub fn extract(screenshot: &RgbImage, rect: &Rect) -> RgbImage {
    image::imageops::crop_imm(
        screenshot,
        rect.left as u32,
        rect.top as u32,
        rect.width() as u32,
        rect.height() as u32,
    )
    .to_image()
}

/// Cuts `pixel_rect` plus margin out of the screenshot.
pub fn crop_with_margin(
    screenshot: &RgbImage,
    pixel_rect: &Rect,
    margin_fraction: f64,
) -> Result<(Rect, RgbImage), CropError> {
    let dims = Extent::new(screenshot.width(), screenshot.height());
    let rect = expand_rect(pixel_rect, margin_fraction, dims)?;
    Ok((rect, extract(screenshot, &rect)))
}

pub fn load_screenshot(package_id: &str, screen: &Screen) -> Result<RgbImage, CropError> {
    load_image(&screen.screenshot.path).map_err(|source| CropError::Image {
        package: package_id.to_string(),
        screen: screen.screen_id.clone(),
        source,
    })
}

fn load_image(path: &Path) -> Result<RgbImage, image::ImageError> {
    Ok(image::open(path)?.to_rgb8())
}

/// Candidate crop for one detection.
pub fn candidate_crop(
    detection: &Detection,
    screen: &Screen,
    screenshot: &RgbImage,
    margin_fraction: f64,
) -> Result<CropSample, CropError> {
    let dims = Extent::new(screenshot.width(), screenshot.height());
    let px = to_pixel_rect(&detection.bounds, screen.virtual_extent, dims)?;
    let (pixel_rect, image) = crop_with_margin(screenshot, &px, margin_fraction)?;
    Ok(CropSample {
        kind: detection.kind,
        label: CropLabel::Candidate,
        pixel_rect,
        image,
        source: CropSource {
            package_id: detection.package_id.clone(),
            screen_id: detection.screen_id.clone(),
            node_path: Some(detection.node_path.clone()),
        },
    })
}

/// Pixel rectangle of the kind's most probable location in an image of
/// size `dims`, sized to the median candidate and shifted inside the image.
pub fn negative_region(heatmap: &Heatmap, dims: Extent) -> Result<Rect, CropError> {
    let region = heatmap.argmax_region()?;
    let (nw, nh) = heatmap
        .median_size()
        .ok_or(HeatmapError::Empty(heatmap.kind()))?;
    let (cx, cy) = region.center();
    let (iw, ih) = (f64::from(dims.width), f64::from(dims.height));
    let w = (nw * iw).round().clamp(1.0, iw);
    let h = (nh * ih).round().clamp(1.0, ih);
    let left = (cx * iw - w / 2.0).round().clamp(0.0, iw - w);
    let top = (cy * ih - h / 2.0).round().clamp(0.0, ih - h);
    Ok(Rect::new(
        left as i32,
        top as i32,
        (left + w) as i32,
        (top + h) as i32,
    ))
}

/// Negative sample for a screen with no candidate of `heatmap.kind()`.
pub fn negative_sample(
    package_id: &str,
    screen: &Screen,
    screenshot: &RgbImage,
    heatmap: &Heatmap,
    margin_fraction: f64,
) -> Result<CropSample, CropError> {
    let dims = Extent::new(screenshot.width(), screenshot.height());
    let core = negative_region(heatmap, dims)?;
    let (pixel_rect, image) = crop_with_margin(screenshot, &core, margin_fraction)?;
    Ok(CropSample {
        kind: heatmap.kind(),
        label: CropLabel::Negative,
        pixel_rect,
        image,
        source: CropSource {
            package_id: package_id.to_string(),
            screen_id: screen.screen_id.clone(),
            node_path: None,
        },
    })
}

/// Resamples to `width x height` by exact area averaging. Works for both
/// shrinking and enlarging.
pub fn resize_area(src: &RgbImage, width: u32, height: u32) -> RgbImage {
    let (sw, sh) = src.dimensions();
    if sw == 0 || sh == 0 || width == 0 || height == 0 {
        return RgbImage::new(width, height);
    }
    let xw = axis_weights(sw, width);
    let yw = axis_weights(sh, height);
    let mut out = RgbImage::new(width, height);
    for (oy, row_w) in yw.iter().enumerate() {
        for (ox, col_w) in xw.iter().enumerate() {
            let mut acc = [0.0f64; 3];
            let mut norm = 0.0;
            for &(sy, wy) in row_w {
                for &(sx, wx) in col_w {
                    let w = wy * wx;
                    let p = src.get_pixel(sx as u32, sy as u32).0;
                    acc[0] += w * f64::from(p[0]);
                    acc[1] += w * f64::from(p[1]);
                    acc[2] += w * f64::from(p[2]);
                    norm += w;
                }
            }
            let px = acc.map(|a| (a / norm).round().clamp(0.0, 255.0) as u8);
            out.put_pixel(ox as u32, oy as u32, Rgb(px));
        }
    }
    out
}

/// For each output cell, the source indices it covers and their overlap.
fn axis_weights(src: u32, dst: u32) -> Vec<Vec<(usize, f64)>> {
    let scale = f64::from(src) / f64::from(dst);
    (0..dst)
        .map(|o| {
            let start = f64::from(o) * scale;
            let end = f64::from(o + 1) * scale;
            let first = start.floor() as usize;
            let last = (end.ceil() as usize).min(src as usize);
            (first..last)
                .filter_map(|s| {
                    let lo = start.max(s as f64);
                    let hi = end.min((s + 1) as f64);
                    (hi > lo).then_some((s, hi - lo))
                })
                .collect()
        })
        .collect()
}
