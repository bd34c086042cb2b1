//! Spatial frequency grids of candidate locations, one per component kind.
//!
//! Each detection adds 1 to the cell containing its center in normalized
//! screen coordinates. Cells are half-open, so a center lying exactly on a
//! boundary belongs to the cell with the larger index. The heatmap also
//! keeps every candidate's normalized size so the typical size of a kind can
//! be recovered for negative mining.

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{ComponentKind, Detection};
use crate::geometry::{Extent, Rect};
use crate::ingest::Screen;

pub const DEFAULT_COLS: usize = 36;
pub const DEFAULT_ROWS: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum HeatmapError {
    #[error("heatmap for {0} is empty; mine negatives after candidates have been accumulated")]
    Empty(ComponentKind),
    #[error("detection of kind {found} cannot be added to the {expected} heatmap")]
    KindMismatch {
        expected: ComponentKind,
        found: ComponentKind,
    },
    #[error("cannot merge heatmaps of different kind or shape")]
    ShapeMismatch,
    #[error("grid dimensions must be positive, got {cols}x{rows}")]
    BadShape { cols: usize, rows: usize },
}

/// Rectangle in normalized screen space, `[0, 1]` on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl NormRect {
    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    kind: ComponentKind,
    cols: usize,
    rows: usize,
    /// Row-major counts.
    counts: Vec<u64>,
    total: u64,
    /// Sorted normalized candidate widths and heights.
    widths: Vec<f64>,
    heights: Vec<f64>,
}

impl Heatmap {
    pub fn new(kind: ComponentKind, cols: usize, rows: usize) -> Result<Self, HeatmapError> {
        if cols == 0 || rows == 0 {
            return Err(HeatmapError::BadShape { cols, rows });
        }
        Ok(Self {
            kind,
            cols,
            rows,
            counts: vec![0; cols * rows],
            total: 0,
            widths: Vec::new(),
            heights: Vec::new(),
        })
    }

    pub fn with_default_grid(kind: ComponentKind) -> Self {
        Self::new(kind, DEFAULT_COLS, DEFAULT_ROWS).expect("default grid is non-empty")
    }

    pub fn kind(&self) -> ComponentKind {
        self.kind
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.cols + col]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Cell `(row, col)` containing the center of `bounds`.
    pub fn cell_of(&self, bounds: &Rect, extent: Extent) -> (usize, usize) {
        let bin = |twice_center: i64, span: u32, cells: usize| -> usize {
            // floor(center / span * cells) in exact integer arithmetic
            let num = twice_center * cells as i64;
            let den = 2 * i64::from(span);
            num.div_euclid(den).clamp(0, cells as i64 - 1) as usize
        };
        let col = bin(
            i64::from(bounds.left) + i64::from(bounds.right),
            extent.width,
            self.cols,
        );
        let row = bin(
            i64::from(bounds.top) + i64::from(bounds.bottom),
            extent.height,
            self.rows,
        );
        (row, col)
    }

    /// Adds one candidate located at `bounds` in a space of size `extent`.
    pub fn add(&mut self, bounds: &Rect, extent: Extent) {
        let (row, col) = self.cell_of(bounds, extent);
        self.counts[row * self.cols + col] += 1;
        self.total += 1;
        let w = bounds.width().max(0) as f64 / f64::from(extent.width);
        let h = bounds.height().max(0) as f64 / f64::from(extent.height);
        insert_sorted(&mut self.widths, w);
        insert_sorted(&mut self.heights, h);
    }

    pub fn accumulate(&mut self, detection: &Detection, screen: &Screen) -> Result<(), HeatmapError> {
        if detection.kind != self.kind {
            return Err(HeatmapError::KindMismatch {
                expected: self.kind,
                found: detection.kind,
            });
        }
        self.add(&detection.bounds, screen.virtual_extent);
        Ok(())
    }

    /// Cell-wise sum; the result equals accumulating both inputs into one map.
    pub fn merge(&mut self, other: &Heatmap) -> Result<(), HeatmapError> {
        if other.kind != self.kind || other.cols != self.cols || other.rows != self.rows {
            return Err(HeatmapError::ShapeMismatch);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        for &w in &other.widths {
            insert_sorted(&mut self.widths, w);
        }
        for &h in &other.heights {
            insert_sorted(&mut self.heights, h);
        }
        Ok(())
    }

    fn max_count(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Counts divided by the maximum count, as `rows` rows of `cols` values.
    pub fn normalized(&self) -> Result<Vec<Vec<f64>>, HeatmapError> {
        if self.total == 0 {
            return Err(HeatmapError::Empty(self.kind));
        }
        let max = self.max_count() as f64;
        Ok(self
            .counts
            .chunks(self.cols)
            .map(|row| row.iter().map(|&c| c as f64 / max).collect())
            .collect())
    }

    /// Cell with the highest count; ties go to the lowest `(row, col)`.
    pub fn argmax_cell(&self) -> Result<(usize, usize), HeatmapError> {
        if self.total == 0 {
            return Err(HeatmapError::Empty(self.kind));
        }
        let max = self.max_count();
        let idx = self
            .counts
            .iter()
            .position(|&c| c == max)
            .expect("max is attained");
        Ok((idx / self.cols, idx % self.cols))
    }

    pub fn cell_rect(&self, row: usize, col: usize) -> NormRect {
        NormRect {
            x0: col as f64 / self.cols as f64,
            y0: row as f64 / self.rows as f64,
            x1: (col + 1) as f64 / self.cols as f64,
            y1: (row + 1) as f64 / self.rows as f64,
        }
    }

    pub fn argmax_region(&self) -> Result<NormRect, HeatmapError> {
        let (row, col) = self.argmax_cell()?;
        Ok(self.cell_rect(row, col))
    }

    /// Median normalized `(width, height)` of accumulated candidates.
    pub fn median_size(&self) -> Option<(f64, f64)> {
        Some((median_sorted(&self.widths)?, median_sorted(&self.heights)?))
    }

    /// One line per grid row, counts separated by single spaces.
    pub fn to_grid_text(&self) -> String {
        let mut out = String::new();
        for row in self.counts.chunks(self.cols) {
            let line: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    /// Grayscale rendering, brightest at the maximum, `scale` pixels per cell.
    pub fn render(&self, scale: u32) -> GrayImage {
        let scale = scale.max(1);
        let max = self.max_count().max(1) as f64;
        GrayImage::from_fn(self.cols as u32 * scale, self.rows as u32 * scale, |x, y| {
            let c = self.count((y / scale) as usize, (x / scale) as usize);
            Luma([(c as f64 / max * 255.0).round() as u8])
        })
    }
}

fn insert_sorted(v: &mut Vec<f64>, x: f64) {
    let pos = v.partition_point(|&e| e.total_cmp(&x).is_lt());
    v.insert(pos, x);
}

fn median_sorted(v: &[f64]) -> Option<f64> {
    match v.len() {
        0 => None,
        n if n % 2 == 1 => Some(v[n / 2]),
        n => Some((v[n / 2 - 1] + v[n / 2]) / 2.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCREEN: Extent = Extent::new(1440, 2560);

    #[test]
    fn single_detection_touches_one_cell() {
        let mut h = Heatmap::with_default_grid(ComponentKind::FloatingActionButton);
        h.add(&Rect::new(1188, 2140, 1384, 2336), SCREEN);
        assert_eq!(h.total(), 1);
        assert_eq!(h.counts().iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.counts().iter().sum::<u64>(), 1);
        // center (1286, 2238) -> col floor(1286/1440*36)=32, row floor(2238/2560*64)=55
        assert_eq!(h.argmax_cell().unwrap(), (55, 32));
    }

    #[test]
    fn boundary_center_goes_to_larger_index() {
        let mut h = Heatmap::new(ComponentKind::SnackBar, 2, 2).unwrap();
        // center exactly (720, 1280): the shared corner of all four cells
        h.add(&Rect::new(620, 1180, 820, 1380), SCREEN);
        assert_eq!(h.argmax_cell().unwrap(), (1, 1));
    }

    #[test]
    fn normalization_divides_by_max() {
        let mut h = Heatmap::new(ComponentKind::AppBar, 2, 2).unwrap();
        let tl = Rect::new(0, 0, 10, 10);
        let tr = Rect::new(1000, 0, 1010, 10);
        let br = Rect::new(1000, 2000, 1010, 2010);
        for r in [tl, tl, tr, br] {
            h.add(&r, SCREEN);
        }
        assert_eq!(
            h.normalized().unwrap(),
            vec![vec![1.0, 0.5], vec![0.0, 0.5]]
        );
    }

    #[test]
    fn constant_map_normalizes_to_ones() {
        let mut h = Heatmap::new(ComponentKind::AppBar, 2, 1).unwrap();
        h.add(&Rect::new(0, 0, 10, 10), SCREEN);
        h.add(&Rect::new(1000, 0, 1010, 10), SCREEN);
        assert_eq!(h.normalized().unwrap(), vec![vec![1.0, 1.0]]);
    }

    #[test]
    fn empty_map_errors() {
        let h = Heatmap::with_default_grid(ComponentKind::TabLayout);
        assert_eq!(h.normalized(), Err(HeatmapError::Empty(ComponentKind::TabLayout)));
        assert!(h.argmax_region().is_err());
        assert!(h.median_size().is_none());
    }

    #[test]
    fn ties_break_to_lowest_row_then_column() {
        let mut h = Heatmap::new(ComponentKind::AppBar, 4, 4).unwrap();
        h.add(&Rect::new(1100, 100, 1110, 110), SCREEN); // row 0, col 3
        h.add(&Rect::new(100, 2000, 110, 2010), SCREEN); // row 3, col 0
        h.add(&Rect::new(400, 100, 410, 110), SCREEN); // row 0, col 1
        assert_eq!(h.argmax_cell().unwrap(), (0, 1));
        let r = h.argmax_region().unwrap();
        assert_eq!((r.x0, r.y0, r.x1, r.y1), (0.25, 0.0, 0.5, 0.25));
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let mut h = Heatmap::with_default_grid(ComponentKind::AppBar);
        let det = Detection {
            package_id: "p".into(),
            screen_id: "0".into(),
            kind: ComponentKind::SnackBar,
            node_path: vec![],
            bounds: Rect::new(0, 0, 1, 1),
            matched_via: crate::detector::MatchVia::ClassName,
            matched_keyword: "snack".into(),
        };
        let screen = Screen::new(
            "0",
            crate::ingest::ViewNode::leaf("r", SCREEN.as_rect(), true),
            crate::ingest::ScreenshotRef {
                path: "x".into(),
                width: 1,
                height: 1,
            },
        )
        .unwrap();
        assert!(matches!(
            h.accumulate(&det, &screen),
            Err(HeatmapError::KindMismatch { .. })
        ));
    }

    #[test]
    fn median_size_and_grid_text() {
        let mut h = Heatmap::new(ComponentKind::FloatingActionButton, 3, 2).unwrap();
        h.add(&Rect::new(0, 0, 144, 256), SCREEN);
        h.add(&Rect::new(0, 0, 288, 512), SCREEN);
        h.add(&Rect::new(0, 0, 1440, 2560), SCREEN);
        assert_eq!(h.median_size(), Some((0.2, 0.2)));
        assert_eq!(h.to_grid_text(), "2 0 0\n0 1 0\n");
        let img = h.render(2);
        assert_eq!(img.dimensions(), (6, 4));
        assert_eq!(img.get_pixel(0, 0).0[0], 255);
        assert_eq!(img.get_pixel(2, 2).0[0], 128);
    }
}
