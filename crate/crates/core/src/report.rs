//! Static SVG figures: embedding scatter plots, binned light curves with an
//! optional E–t heatmap, cube slice mosaics and k-distance curves.
//!
//! Output is a pure function of the inputs (fixed number formatting, no
//! timestamps), so identical inputs give identical bytes.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::embed::Embedding2D;
use crate::ingest::EventSeries;
use crate::tensorize::{EventTensor, TensorKind};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("embedding has no points")]
    EmptyEmbedding,
    #[error("no label column named {0:?}")]
    UnknownColumn(String),
    #[error("{0} colors for {1} points")]
    LengthMismatch(usize, usize),
    #[error("bin width must be positive, got {0}")]
    InvalidBinWidth(f64),
    #[error("expected a {expected} tensor")]
    WrongTensor { expected: &'static str },
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
}

/// Anchor colors of the viridis map at 0, 1/8, ..., 1; values in between are
/// interpolated linearly in RGB.
const VIRIDIS: [(u8, u8, u8); 9] = [
    (68, 1, 84),
    (71, 44, 122),
    (59, 81, 139),
    (44, 113, 142),
    (33, 144, 141),
    (39, 173, 129),
    (92, 200, 99),
    (170, 220, 50),
    (253, 231, 37),
];

/// Fixed categorical palette (Tableau 10); noise and missing values are gray.
const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
];
const MISSING: &str = "#c8c8c8";

pub fn viridis(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let pos = t * (VIRIDIS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(VIRIDIS.len() - 2);
    let f = pos - i as f64;
    let mix = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * f).round() as u8;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn header(out: &mut String, width: f64, height: f64) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = write!(out, r#"<rect x="0" y="0" width="{width:.0}" height="{height:.0}" fill="white"/>"#);
}

pub fn write_svg(svg: &str, path: &Path) -> Result<(), ReportError> {
    fs::write(path, svg).map_err(|e| ReportError::Io(path.to_path_buf(), e))
}

/// How scatter points are colored.
#[derive(Debug, Clone, Copy)]
pub enum ColorBy<'a> {
    None,
    /// `variability_index` / `hardness_ratio` (continuous) or `class_tag` (discrete).
    Column(&'a str),
    /// Cluster labels, with `-1` as noise.
    Clusters(&'a [i64]),
}

enum Coloring {
    Uniform,
    Continuous { values: Vec<Option<f64>>, lo: f64, hi: f64, name: String },
    Discrete { values: Vec<Option<String>>, classes: Vec<String>, name: String },
}

fn coloring(e: &Embedding2D, by: ColorBy<'_>) -> Result<Coloring, ReportError> {
    let n = e.points.len();
    Ok(match by {
        ColorBy::None => Coloring::Uniform,
        ColorBy::Clusters(labels) => {
            if labels.len() != n {
                return Err(ReportError::LengthMismatch(labels.len(), n));
            }
            let values: Vec<Option<String>> =
                labels.iter().map(|&l| (l >= 0).then(|| format!("cluster {l}"))).collect();
            let ids: BTreeSet<i64> = labels.iter().copied().filter(|&l| l >= 0).collect();
            Coloring::Discrete {
                values,
                classes: ids.into_iter().map(|l| format!("cluster {l}")).collect(),
                name: "cluster".into(),
            }
        }
        ColorBy::Column(name @ ("variability_index" | "hardness_ratio")) => {
            let values: Vec<Option<f64>> = e
                .labels
                .iter()
                .map(|l| match name {
                    "variability_index" => l.variability_index,
                    _ => l.hardness_ratio,
                })
                .collect();
            let present = values.iter().flatten();
            let lo = present.clone().copied().fold(f64::INFINITY, f64::min);
            let hi = present.copied().fold(f64::NEG_INFINITY, f64::max);
            Coloring::Continuous {
                values,
                lo,
                hi,
                name: name.into(),
            }
        }
        ColorBy::Column("class_tag") => {
            let values: Vec<Option<String>> = e.labels.iter().map(|l| l.class_tag.clone()).collect();
            let classes: BTreeSet<String> = values.iter().flatten().cloned().collect();
            Coloring::Discrete {
                values,
                classes: classes.into_iter().collect(),
                name: "class_tag".into(),
            }
        }
        ColorBy::Column(other) => return Err(ReportError::UnknownColumn(other.to_string())),
    })
}

fn scaled(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.5
    }
}

/// Scatter plot with one `<circle>` per point and a legend drawn from rects.
pub fn scatter_svg(e: &Embedding2D, by: ColorBy<'_>, title: &str) -> Result<String, ReportError> {
    if e.points.is_empty() {
        return Err(ReportError::EmptyEmbedding);
    }
    let colors = coloring(e, by)?;
    let (plot, margin, legend_w) = (520.0, 40.0, 170.0);
    let (width, height) = (plot + 2.0 * margin + legend_w, plot + 2.0 * margin);
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in &e.points {
        x_lo = x_lo.min(p[0]);
        x_hi = x_hi.max(p[0]);
        y_lo = y_lo.min(p[1]);
        y_hi = y_hi.max(p[1]);
    }
    let mut out = String::new();
    header(&mut out, width, height);
    let _ = write!(
        out,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        margin + plot / 2.0,
        escape(title)
    );
    let _ = write!(
        out,
        r##"<rect x="{margin:.1}" y="{margin:.1}" width="{plot:.1}" height="{plot:.1}" fill="none" stroke="#888"/>"##
    );
    out.push_str(r#"<g class="points" stroke="none" fill-opacity="0.8">"#);
    for (i, p) in e.points.iter().enumerate() {
        let cx = margin + 8.0 + scaled(p[0], x_lo, x_hi) * (plot - 16.0);
        let cy = margin + plot - 8.0 - scaled(p[1], y_lo, y_hi) * (plot - 16.0);
        let fill = match &colors {
            Coloring::Uniform => PALETTE[0].to_string(),
            Coloring::Continuous { values, lo, hi, .. } => {
                values[i].map_or(MISSING.to_string(), |v| viridis(scaled(v, *lo, *hi)))
            }
            Coloring::Discrete { values, classes, .. } => match &values[i] {
                Some(v) => PALETTE[classes.binary_search(v).unwrap() % PALETTE.len()].to_string(),
                None => MISSING.to_string(),
            },
        };
        let _ = write!(out, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="{fill}"/>"#);
    }
    out.push_str("</g>");

    let lx = margin * 2.0 + plot;
    out.push_str(r#"<g class="legend">"#);
    match &colors {
        Coloring::Uniform => {}
        Coloring::Continuous { values, lo, hi, name } => {
            let _ = write!(out, r#"<text x="{lx:.1}" y="{:.1}">{}</text>"#, margin + 4.0, escape(name));
            let steps = 32;
            let bar_h = 200.0;
            for s in 0..steps {
                let t = 1.0 - s as f64 / (steps - 1) as f64;
                let _ = write!(
                    out,
                    r#"<rect x="{lx:.1}" y="{:.2}" width="18" height="{:.2}" fill="{}"/>"#,
                    margin + 12.0 + s as f64 * bar_h / steps as f64,
                    bar_h / steps as f64 + 0.5,
                    viridis(t)
                );
            }
            if hi >= lo {
                let _ = write!(out, r#"<text x="{:.1}" y="{:.1}">{hi:.3}</text>"#, lx + 24.0, margin + 22.0);
                let _ = write!(out, r#"<text x="{:.1}" y="{:.1}">{lo:.3}</text>"#, lx + 24.0, margin + 12.0 + bar_h);
            }
            if values.iter().any(Option::is_none) {
                legend_row(&mut out, lx, margin + bar_h + 36.0, MISSING, "missing");
            }
        }
        Coloring::Discrete { values, classes, name } => {
            let _ = write!(out, r#"<text x="{lx:.1}" y="{:.1}">{}</text>"#, margin + 4.0, escape(name));
            for (k, class) in classes.iter().enumerate() {
                legend_row(&mut out, lx, margin + 20.0 + 18.0 * k as f64, PALETTE[k % PALETTE.len()], class);
            }
            if values.iter().any(Option::is_none) {
                let label = if name == "cluster" { "noise" } else { "missing" };
                legend_row(&mut out, lx, margin + 20.0 + 18.0 * classes.len() as f64, MISSING, label);
            }
        }
    }
    out.push_str("</g></svg>\n");
    Ok(out)
}

fn legend_row(out: &mut String, x: f64, y: f64, fill: &str, label: &str) {
    let _ = write!(
        out,
        r#"<rect x="{x:.1}" y="{:.1}" width="12" height="12" fill="{fill}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
        y - 10.0,
        x + 18.0,
        y,
        escape(label)
    );
}

pub fn render_scatter_svg(e: &Embedding2D, by: ColorBy<'_>, title: &str, path: &Path) -> Result<(), ReportError> {
    write_svg(&scatter_svg(e, by, title)?, path)
}

/// Event counts in fixed-width bins starting at the first event.
#[derive(Debug, Clone, PartialEq)]
pub struct LightCurve {
    pub t0: f64,
    pub bin_seconds: f64,
    pub counts: Vec<u64>,
}

/// `ceil(T / bin_seconds)` bins over the series duration `T` (at least one);
/// the last event falls in the last bin.
pub fn light_curve(series: &EventSeries, bin_seconds: f64) -> Result<LightCurve, ReportError> {
    if !(bin_seconds > 0.0) || !bin_seconds.is_finite() {
        return Err(ReportError::InvalidBinWidth(bin_seconds));
    }
    let t0 = series.timestamps.first().copied().unwrap_or(0.0);
    let n_bins = ((series.duration() / bin_seconds).ceil() as usize).max(1);
    let mut counts = vec![0u64; n_bins];
    for &t in &series.timestamps {
        let i = (((t - t0) / bin_seconds).floor().max(0.0) as usize).min(n_bins - 1);
        counts[i] += 1;
    }
    Ok(LightCurve {
        t0,
        bin_seconds,
        counts,
    })
}

fn heatmap(out: &mut String, t: &EventTensor, slice: usize, x: f64, y: f64, w: f64, h: f64, vmax: f64) {
    let (nt, ne) = (t.dims[0], t.dims[1]);
    let (cw, ch) = (w / nt as f64, h / ne as f64);
    for i in 0..nt {
        for k in 0..ne {
            let v = match t.kind {
                TensorKind::Map => t.get(&[i, k]),
                TensorKind::Cube => t.get(&[i, k, slice]),
            };
            let fill = viridis(if vmax > 0.0 { v / vmax } else { 0.0 });
            // Modality increases upward.
            let _ = write!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                x + i as f64 * cw,
                y + h - (k + 1) as f64 * ch,
                cw + 0.05,
                ch + 0.05
            );
        }
    }
    let _ = write!(out, r##"<rect x="{x:.1}" y="{y:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="#888"/>"##);
}

/// Binned light curve, with the E–t map as a second panel when given.
pub fn series_svg(series: &EventSeries, bin_seconds: f64, map: Option<&EventTensor>) -> Result<String, ReportError> {
    if map.is_some_and(|m| m.kind != TensorKind::Map) {
        return Err(ReportError::WrongTensor { expected: "map" });
    }
    let lc = light_curve(series, bin_seconds)?;
    let (pw, ph, margin) = (560.0, 200.0, 48.0);
    let panels = if map.is_some() { 2.0 } else { 1.0 };
    let (width, height) = (pw + 2.0 * margin, panels * (ph + margin) + margin);
    let mut out = String::new();
    header(&mut out, width, height);
    let _ = write!(
        out,
        r#"<text x="{margin:.1}" y="24" font-size="14">{} — {} s bins</text>"#,
        escape(&series.series_id),
        bin_seconds
    );
    let _ = write!(
        out,
        r##"<rect x="{margin:.1}" y="{margin:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#888"/>"##
    );
    let max = lc.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let n = lc.counts.len() as f64;
    let mut pts = String::new();
    for (i, &c) in lc.counts.iter().enumerate() {
        let y = margin + ph - c as f64 / max * (ph - 8.0);
        let _ = write!(pts, "{:.2},{y:.2} {:.2},{y:.2} ", margin + i as f64 / n * pw, margin + (i + 1) as f64 / n * pw);
    }
    let _ = write!(
        out,
        r##"<polyline class="light-curve" points="{}" fill="none" stroke="#4e79a7" stroke-width="1.5"/>"##,
        pts.trim_end()
    );
    let _ = write!(
        out,
        r#"<text x="{margin:.1}" y="{:.1}">counts (max {max:.0})</text>"#,
        margin - 6.0
    );
    if let Some(m) = map {
        let top = 2.0 * margin + ph;
        let vmax = m.values.iter().copied().fold(0.0, f64::max);
        out.push_str(r#"<g class="heatmap">"#);
        heatmap(&mut out, m, 0, margin, top, pw, ph, vmax);
        out.push_str("</g>");
        let _ = write!(out, r#"<text x="{margin:.1}" y="{:.1}">E–t map</text>"#, top - 6.0);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn render_series_svg(
    series: &EventSeries,
    bin_seconds: f64,
    map: Option<&EventTensor>,
    path: &Path,
) -> Result<(), ReportError> {
    write_svg(&series_svg(series, bin_seconds, map)?, path)
}

/// Every Δt slice of a cube as its own E–t heatmap, on a shared color scale.
pub fn cube_mosaic_svg(cube: &EventTensor) -> Result<String, ReportError> {
    if cube.kind != TensorKind::Cube {
        return Err(ReportError::WrongTensor { expected: "cube" });
    }
    let slices = cube.dims[2];
    let cols = (slices as f64).sqrt().ceil().max(1.0) as usize;
    let rows = slices.div_ceil(cols);
    let (tile, gap, margin) = (120.0, 16.0, 36.0);
    let width = 2.0 * margin + cols as f64 * (tile + gap) - gap;
    let height = 2.0 * margin + rows as f64 * (tile + gap) - gap;
    let vmax = cube.values.iter().copied().fold(0.0, f64::max);
    let mut out = String::new();
    header(&mut out, width, height);
    let _ = write!(out, r#"<text x="{margin:.1}" y="22" font-size="14">{}</text>"#, escape(&cube.series_id));
    for s in 0..slices {
        let x = margin + (s % cols) as f64 * (tile + gap);
        let y = margin + (s / cols) as f64 * (tile + gap);
        let _ = write!(out, r#"<g class="slice" id="dt{s}">"#);
        heatmap(&mut out, cube, s, x, y, tile, tile, vmax);
        out.push_str("</g>");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Sorted k-distance curve with the suggested radius marked.
pub fn k_distance_svg(sorted: &[f64], k: usize, suggested: Option<f64>) -> String {
    let (pw, ph, margin) = (520.0, 300.0, 48.0);
    let mut out = String::new();
    header(&mut out, pw + 2.0 * margin, ph + 2.0 * margin);
    let _ = write!(out, r#"<text x="{margin:.1}" y="24" font-size="14">{k}-distance, sorted</text>"#);
    let _ = write!(
        out,
        r##"<rect x="{margin:.1}" y="{margin:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#888"/>"##
    );
    let hi = sorted.last().copied().unwrap_or(1.0).max(f64::MIN_POSITIVE);
    let n = sorted.len().max(2) - 1;
    let pts: Vec<String> = sorted
        .iter()
        .enumerate()
        .map(|(i, d)| format!("{:.2},{:.2}", margin + i as f64 / n as f64 * pw, margin + ph - d / hi * ph))
        .collect();
    let _ = write!(out, r##"<polyline points="{}" fill="none" stroke="#4e79a7"/>"##, pts.join(" "));
    if let Some(eps) = suggested {
        let y = margin + ph - eps / hi * ph;
        let _ = write!(
            out,
            r##"<line x1="{margin:.1}" y1="{y:.2}" x2="{:.1}" y2="{y:.2}" stroke="#e15759" stroke-dasharray="4 3"/><text x="{:.1}" y="{:.2}">eps = {eps:.4}</text>"##,
            margin + pw,
            margin + 6.0,
            y - 4.0
        );
    }
    out.push_str("</svg>\n");
    out
}
