//! Minimal log-log line plots rendered as standalone SVG.

use std::fmt::Write;

use crate::error::{CliError, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 60.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: &str, points: Vec<(f64, f64)>) -> Self {
        Self { name: name.to_string(), points }
    }
}

/// Pixel transform for decades `[x0, x1] x [y0, y1]` (log10 units).
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN_LEFT + (x.log10() - self.x0) / (self.x1 - self.x0) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM - (y.log10() - self.y0) / (self.y1 - self.y0) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn decades(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v.log10()), h.max(v.log10())));
    if !lo.is_finite() {
        return (-1.0, 0.0);
    }
    let (lo, hi) = (lo.floor(), hi.ceil());
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    }
}

/// Renders `series` on log-log axes. Each entry of `slopes` adds a dashed
/// triangle of that order anchored below the smallest-`x` point of the first
/// series. Non-positive or non-finite data is an error naming the series.
pub fn emit_svg_loglog(series: &[Series], x_label: &str, y_label: &str, slopes: &[f64]) -> Result<String> {
    for s in series {
        if let Some(&(x, y)) = s.points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())) {
            return Err(CliError::Render {
                series: s.name.clone(),
                reason: format!("point ({x}, {y}) cannot be placed on logarithmic axes"),
            });
        }
    }
    let (x0, x1) = decades(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = decades(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let fr = Frame { x0, x1, y0, y1 };

    let mut svg = String::new();
    let w = &mut svg;
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#).unwrap();
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    let (left, right) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let (top, bottom) = (MARGIN_TOP, HEIGHT - MARGIN_BOTTOM);
    writeln!(w, r#"<g class="axes" stroke="black" fill="none">"#).unwrap();
    writeln!(w, r#"<rect x="{left}" y="{top}" width="{}" height="{}"/>"#, right - left, bottom - top).unwrap();
    for d in (x0 as i32)..=(x1 as i32) {
        let x = fr.px(10f64.powi(d));
        writeln!(w, r#"<line x1="{x:.2}" y1="{bottom}" x2="{x:.2}" y2="{:.2}"/>"#, bottom - 6.0).unwrap();
    }
    for d in (y0 as i32)..=(y1 as i32) {
        let y = fr.py(10f64.powi(d));
        writeln!(w, r#"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}"/>"#, left + 6.0).unwrap();
    }
    writeln!(w, "</g>").unwrap();
    writeln!(w, r#"<g class="labels" font-family="sans-serif" font-size="12">"#).unwrap();
    for d in (x0 as i32)..=(x1 as i32) {
        writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">1e{d}</text>"#, fr.px(10f64.powi(d)), bottom + 18.0).unwrap();
    }
    for d in (y0 as i32)..=(y1 as i32) {
        writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{d}</text>"#, left - 6.0, fr.py(10f64.powi(d)) + 4.0).unwrap();
    }
    writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, 0.5 * (left + right), HEIGHT - 15.0, escape(x_label)).unwrap();
    writeln!(
        w,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
        0.5 * (top + bottom),
        0.5 * (top + bottom),
        escape(y_label)
    )
    .unwrap();
    writeln!(w, "</g>").unwrap();

    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.3},{:.3}", fr.px(x), fr.py(y))).collect();
        writeln!(w, r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" ")).unwrap();
        for &(x, y) in &s.points {
            writeln!(w, r#"<circle cx="{:.3}" cy="{:.3}" r="3" fill="{color}"/>"#, fr.px(x), fr.py(y)).unwrap();
        }
        let ly = top + 16.0 * (i as f64 + 1.0);
        writeln!(w, r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="1.5"/>"#, right + 10.0, right + 30.0).unwrap();
        writeln!(w, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">{}</text>"#, right + 35.0, ly + 4.0, escape(&s.name)).unwrap();
    }

    if let Some(&(xa, ya)) = series.first().and_then(|s| s.points.iter().min_by(|a, b| a.0.total_cmp(&b.0))) {
        for (j, &p) in slopes.iter().enumerate() {
            // triangle over one factor of two in x, shifted below the data
            let shift = 0.5f64.powi(j as i32 + 1);
            let (xs, ys) = (xa, ya * shift);
            let (xe, ye) = (2.0 * xa, ya * shift * 2f64.powf(p));
            let (ax, ay, bx, by) = (fr.px(xs), fr.py(ys), fr.px(xe), fr.py(ye));
            writeln!(
                w,
                r#"<path class="slope" d="M {ax:.3} {ay:.3} L {bx:.3} {by:.3} L {bx:.3} {ay:.3} Z" fill="none" stroke="gray" stroke-dasharray="4 3"/>"#
            )
            .unwrap();
            writeln!(w, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" fill="gray">{p}</text>"#, bx + 4.0, 0.5 * (ay + by) + 4.0).unwrap();
        }
    }
    writeln!(w, "</svg>").unwrap();
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
