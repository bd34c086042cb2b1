//! Chart and image rendering for the final report.
//!
//! Charts carry no numeric axis ticks; the only numbers drawn are the bar
//! labels, which are formatted from the same values written to the CSV
//! tables, so every displayed number can be found in a table.

use std::fmt::Write;

use image::{Rgb, RgbImage};
use thiserror::Error;

use crate::analytics::FiveNumberSummary;
use crate::crop::resize_area;

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("nothing to report: {0}")]
    Empty(String),
}

const SERIES_COLORS: [&str; 4] = ["#90a4ae", "#1e88e5", "#43a047", "#e53935"];
const FONT: &str = "font-family=\"sans-serif\"";

/// Percentage with one decimal, e.g. `0.134` -> `13.4%`.
pub fn format_pct(fraction: f64) -> String {
    format!("{:.1}%", fraction * 100.0)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn svg_open(width: u32, height: u32, title: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    );
    writeln!(s, "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>").unwrap();
    writeln!(
        s,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" {FONT}>{}</text>",
        width / 2,
        escape(title)
    )
    .unwrap();
    s
}

fn legend(s: &mut String, names: &[String], x: f64, y: f64, color_offset: usize) {
    for (i, name) in names.iter().enumerate() {
        let yy = y + i as f64 * 18.0;
        writeln!(
            s,
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"12\" height=\"12\" fill=\"{}\"/>",
            yy - 10.0,
            SERIES_COLORS[(i + color_offset) % SERIES_COLORS.len()]
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{yy:.1}\" font-size=\"12\" {FONT}>{}</text>",
            x + 18.0,
            escape(name)
        )
        .unwrap();
    }
}

/// One cluster of bars; `values` are fractions in [0, 1], one per series.
#[derive(Debug, Clone, PartialEq)]
pub struct BarGroup {
    pub label: String,
    pub values: Vec<f64>,
}

const PLOT_TOP: f64 = 50.0;
const PLOT_HEIGHT: f64 = 260.0;
const PLOT_LEFT: f64 = 40.0;

/// Grouped bar chart of fractions. Each bar is labeled with its percentage.
pub fn grouped_bar_chart(title: &str, series: &[String], groups: &[BarGroup]) -> Result<String, ReportError> {
    if groups.is_empty() || series.is_empty() {
        return Err(ReportError::Empty(format!("bar chart `{title}` has no data")));
    }
    let bar_w = 28.0;
    let group_w = bar_w * series.len() as f64 + 24.0;
    let width = (PLOT_LEFT * 2.0 + group_w * groups.len() as f64 + 140.0).ceil() as u32;
    let height = (PLOT_TOP + PLOT_HEIGHT + 70.0) as u32;
    let max = groups
        .iter()
        .flat_map(|g| g.values.iter().copied())
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let baseline = PLOT_TOP + PLOT_HEIGHT;
    let mut s = svg_open(width, height, title);
    writeln!(
        s,
        "<line x1=\"{PLOT_LEFT}\" y1=\"{baseline}\" x2=\"{:.1}\" y2=\"{baseline}\" stroke=\"black\"/>",
        PLOT_LEFT + group_w * groups.len() as f64
    )
    .unwrap();
    for (gi, g) in groups.iter().enumerate() {
        let gx = PLOT_LEFT + gi as f64 * group_w + 12.0;
        for (si, v) in g.values.iter().enumerate() {
            let h = v / max * (PLOT_HEIGHT - 20.0);
            let x = gx + si as f64 * bar_w;
            writeln!(
                s,
                "<rect class=\"bar\" x=\"{x:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"{}\"/>",
                baseline - h,
                bar_w - 2.0,
                SERIES_COLORS[si % SERIES_COLORS.len()]
            )
            .unwrap();
            writeln!(
                s,
                "<text class=\"value\" x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"9\" {FONT}>{}</text>",
                x + (bar_w - 2.0) / 2.0,
                baseline - h - 3.0,
                format_pct(*v)
            )
            .unwrap();
        }
        writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"11\" {FONT}>{}</text>",
            gx + bar_w * g.values.len() as f64 / 2.0,
            baseline + 18.0,
            escape(&g.label)
        )
        .unwrap();
    }
    legend(&mut s, series, PLOT_LEFT + group_w * groups.len() as f64 + 20.0, PLOT_TOP + 10.0, 0);
    s.push_str("</svg>\n");
    Ok(s)
}

/// Box plots sharing one vertical scale. Whiskers use the 1.5 IQR variant.
pub fn box_plot_chart(title: &str, boxes: &[(String, FiveNumberSummary)]) -> Result<String, ReportError> {
    if boxes.is_empty() {
        return Err(ReportError::Empty(format!("box plot `{title}` has no data")));
    }
    let lo = boxes.iter().map(|b| b.1.min).fold(f64::INFINITY, f64::min);
    let hi = boxes.iter().map(|b| b.1.max).fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let y = |v: f64| PLOT_TOP + PLOT_HEIGHT - (v - lo) / span * PLOT_HEIGHT;
    let slot = 90.0;
    let width = (PLOT_LEFT * 2.0 + slot * boxes.len() as f64) as u32;
    let height = (PLOT_TOP + PLOT_HEIGHT + 60.0) as u32;
    let mut s = svg_open(width, height, title);
    for (i, (label, b)) in boxes.iter().enumerate() {
        let cx = PLOT_LEFT + slot * (i as f64 + 0.5);
        let half = 22.0;
        writeln!(
            s,
            "<line x1=\"{cx:.1}\" y1=\"{:.1}\" x2=\"{cx:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
            y(b.whisker_high),
            y(b.q3)
        )
        .unwrap();
        writeln!(
            s,
            "<line x1=\"{cx:.1}\" y1=\"{:.1}\" x2=\"{cx:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
            y(b.q1),
            y(b.whisker_low)
        )
        .unwrap();
        for w in [b.whisker_low, b.whisker_high] {
            writeln!(
                s,
                "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
                cx - half / 2.0,
                y(w),
                cx + half / 2.0,
                y(w)
            )
            .unwrap();
        }
        writeln!(
            s,
            "<rect class=\"box\" x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\" stroke=\"black\"/>",
            cx - half,
            y(b.q3),
            half * 2.0,
            (y(b.q1) - y(b.q3)).max(0.5),
            SERIES_COLORS[i % SERIES_COLORS.len()]
        )
        .unwrap();
        writeln!(
            s,
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\" stroke-width=\"2\"/>",
            cx - half,
            y(b.median),
            cx + half,
            y(b.median)
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"11\" {FONT}>{}</text>",
            PLOT_TOP + PLOT_HEIGHT + 20.0,
            escape(label)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Line chart of fractions against bucket index; the y range is [0, 1].
pub fn curve_chart(title: &str, series: &[(String, Vec<f64>)]) -> Result<String, ReportError> {
    if series.is_empty() || series.iter().all(|(_, v)| v.is_empty()) {
        return Err(ReportError::Empty(format!("curve `{title}` has no data")));
    }
    let plot_w = 500.0;
    let width = (PLOT_LEFT * 2.0 + plot_w + 160.0) as u32;
    let height = (PLOT_TOP + PLOT_HEIGHT + 50.0) as u32;
    let baseline = PLOT_TOP + PLOT_HEIGHT;
    let mut s = svg_open(width, height, title);
    writeln!(
        s,
        "<line x1=\"{PLOT_LEFT}\" y1=\"{baseline}\" x2=\"{:.1}\" y2=\"{baseline}\" stroke=\"black\"/>",
        PLOT_LEFT + plot_w
    )
    .unwrap();
    writeln!(
        s,
        "<line x1=\"{PLOT_LEFT}\" y1=\"{PLOT_TOP}\" x2=\"{PLOT_LEFT}\" y2=\"{baseline}\" stroke=\"black\"/>"
    )
    .unwrap();
    for (i, (_, values)) in series.iter().enumerate() {
        let n = values.len();
        let step = if n > 1 { plot_w / (n - 1) as f64 } else { 0.0 };
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(j, v)| format!("{:.2},{:.2}", PLOT_LEFT + j as f64 * step, baseline - v * PLOT_HEIGHT))
            .collect();
        writeln!(
            s,
            "<polyline class=\"curve\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>",
            SERIES_COLORS[(i + 1) % SERIES_COLORS.len()],
            points.join(" ")
        )
        .unwrap();
    }
    writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"11\" {FONT}>percentile bucket</text>",
        PLOT_LEFT + plot_w / 2.0,
        baseline + 24.0
    )
    .unwrap();
    let names: Vec<String> = series.iter().map(|(n, _)| n.clone()).collect();
    legend(&mut s, &names, PLOT_LEFT + plot_w + 20.0, PLOT_TOP + 10.0, 1);
    s.push_str("</svg>\n");
    Ok(s)
}

/// Grid of `cell x cell` thumbnails, `columns` per row, separated by a
/// 2-pixel gutter. Returns `None` for an empty input.
pub fn contact_sheet(crops: &[RgbImage], cell: u32, columns: u32) -> Option<RgbImage> {
    if crops.is_empty() || cell == 0 || columns == 0 {
        return None;
    }
    let gutter = 2;
    let n = crops.len() as u32;
    let cols = columns.min(n);
    let rows = n.div_ceil(cols);
    let mut sheet = RgbImage::from_pixel(
        cols * (cell + gutter) + gutter,
        rows * (cell + gutter) + gutter,
        Rgb([255, 255, 255]),
    );
    for (i, crop) in crops.iter().enumerate() {
        let i = i as u32;
        let thumb = resize_area(crop, cell, cell);
        let (x0, y0) = (gutter + (i % cols) * (cell + gutter), gutter + (i / cols) * (cell + gutter));
        image::imageops::replace(&mut sheet, &thumb, i64::from(x0), i64::from(y0));
    }
    Some(sheet)
}

/// Cell origins of the thumbnails in a sheet built by [`contact_sheet`].
pub fn contact_sheet_cells(count: usize, cell: u32, columns: u32) -> Vec<(u32, u32)> {
    let cols = columns.min(count as u32).max(1);
    (0..count as u32)
        .map(|i| (2 + (i % cols) * (cell + 2), 2 + (i / cols) * (cell + 2)))
        .collect()
}
