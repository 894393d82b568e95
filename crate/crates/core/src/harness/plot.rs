//! Deterministic SVG line plots and basis image grids.
//!
//! Output depends only on the inputs: fixed canvas, fixed number formatting,
//! no timestamps, so identical data renders to identical bytes.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::{Error, Result};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotStyle {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub width: u32,
    pub height: u32,
    pub log_x: bool,
    pub log_y: bool,
}

impl Default for PlotStyle {
    fn default() -> Self {
        Self {
            title: String::new(),
            x_label: "t".into(),
            y_label: String::new(),
            width: 800,
            height: 500,
            log_x: false,
            log_y: false,
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        return format!("{v:.1e}");
    }
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

/// Roughly five evenly spaced round values covering `[lo, hi]`.
fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, log: bool) -> Result<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.log10() } else { v };
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() {
            return Err(Error::Empty("plot has no finite points"));
        }
        if hi - lo < 1e-12 * lo.abs().max(1.0) {
            let pad = if lo == 0.0 { 1.0 } else { 0.5 * lo.abs() };
            lo -= pad;
            hi += pad;
        }
        Ok(Self { lo, hi, log })
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    /// Tick positions in data units with their labels.
    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            let mut out: Vec<_> = (a..=b).map(|e| (10f64.powi(e), tick_label(10f64.powi(e)))).collect();
            if out.is_empty() {
                out.push((10f64.powf(self.lo), tick_label(10f64.powf(self.lo))));
            }
            out
        } else {
            nice_ticks(self.lo, self.hi).into_iter().map(|v| (v, tick_label(v))).collect()
        }
    }
}

/// Renders one polyline per series with axes, ticks and a legend.
pub fn emit_plot(series: &[Series], style: &PlotStyle) -> Result<String> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::Empty("plot series"));
    }
    let (w, h) = (f64::from(style.width), f64::from(style.height));
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let all = || series.iter().flat_map(|s| s.points.iter());
    let xa = Axis::new(all().map(|p| p.0), style.log_x)?;
    let ya = Axis::new(all().map(|p| p.1), style.log_y)?;
    let px = |x: f64| left + xa.frac(x) * pw;
    let py = |y: f64| top + (1.0 - ya.frac(y)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif" font-size="12">"#,
        style.width, style.height, style.width, style.height
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{}" height="{}" fill="white"/>"#, style.width, style.height);
    if !style.title.is_empty() {
        let _ = writeln!(s, r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, escape(&style.title));
    }
    let _ = writeln!(
        s,
        r#"<rect x="{left:.2}" y="{top:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    for (v, label) in xa.ticks() {
        let x = px(v);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, top + ph, top + ph + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, top + ph + 18.0, escape(&label));
    }
    for (v, label) in ya.ticks() {
        let y = py(v);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{left:.2}" y2="{y:.2}" stroke="black"/>"#, left - 5.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, left - 8.0, y + 4.0, escape(&label));
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 10.0, escape(&style.x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(&style.y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| px(*x).is_finite() && py(*y).is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = top + 14.0 + 16.0 * i as f64;
        let lx = left + pw - 150.0;
        let _ = writeln!(s, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Each column of `basis` drawn as a `rows x cols` grayscale tile, scaled by
/// its largest absolute entry (mid gray is zero).
pub fn emit_feature_grid(basis: &DMatrix<f64>, rows: usize, cols: usize, tiles_per_row: usize) -> Result<String> {
    if basis.ncols() == 0 {
        return Err(Error::Empty("feature grid basis"));
    }
    if rows * cols != basis.nrows() {
        return Err(Error::dims("feature grid image size", basis.nrows(), rows * cols));
    }
    let per_row = tiles_per_row.max(1);
    let cell = 3usize;
    let gap = 4usize;
    let tile_w = cols * cell + gap;
    let tile_h = rows * cell + gap;
    let n_rows = basis.ncols().div_ceil(per_row);
    let (w, h) = (per_row * tile_w + gap, n_rows * tile_h + gap);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" shape-rendering="crispEdges">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    for (k, col) in basis.column_iter().enumerate() {
        let scale = col.amax();
        let ox = gap + (k % per_row) * tile_w;
        let oy = gap + (k / per_row) * tile_h;
        for r in 0..rows {
            for c in 0..cols {
                let v = if scale > 0.0 { col[r * cols + c] / scale } else { 0.0 };
                let g = (127.5 + 127.5 * v).round().clamp(0.0, 255.0) as u8;
                let _ = writeln!(
                    s,
                    r##"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="#{g:02x}{g:02x}{g:02x}"/>"##,
                    ox + c * cell,
                    oy + r * cell
                );
            }
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}
