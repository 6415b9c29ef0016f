//! Minimal deterministic SVG output for scatter panels and curves.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;

pub type Point = (f64, f64);

/// Layers of one scatter panel, drawn back to front in field order.
#[derive(Clone, Debug, Default)]
pub struct ScatterLayers {
    pub posterior: Vec<Point>,
    pub latents: Vec<Point>,
    pub reconstructions: Vec<Point>,
    pub trajectories: Vec<Vec<Point>>,
    pub offsets: Vec<(Point, Point)>,
}

#[derive(Clone, Debug)]
pub struct Style {
    pub title: String,
    pub width: f64,
    pub height: f64,
    pub radius: f64,
}

impl Default for Style {
    fn default() -> Self {
        Self {
            title: String::new(),
            width: 480.0,
            height: 480.0,
            radius: 1.5,
        }
    }
}

const MARGIN: f64 = 32.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    width: f64,
    height: f64,
}

impl Frame {
    fn fit<'a>(points: impl Iterator<Item = &'a Point>, width: f64, height: f64) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in points {
            if x.is_finite() && y.is_finite() {
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (-1.0, 1.0, -1.0, 1.0);
        }
        let pad_x = ((x1 - x0) * 0.05).max(0.5);
        let pad_y = ((y1 - y0) * 0.05).max(0.5);
        Self {
            x0: x0 - pad_x,
            x1: x1 + pad_x,
            y0: y0 - pad_y,
            y1: y1 + pad_y,
            width,
            height,
        }
    }

    fn map(&self, (x, y): Point) -> Point {
        let u = MARGIN + (x - self.x0) / (self.x1 - self.x0) * (self.width - 2.0 * MARGIN);
        let v = self.height - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (self.height - 2.0 * MARGIN);
        (u, v)
    }
}

fn header(out: &mut String, style: &Style, frame: &Frame) {
    let (w, h) = (style.width, style.height);
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    if !style.title.is_empty() {
        writeln!(out, r#"<text x="{}" y="18" font-size="13" text-anchor="middle">{}</text>"#, w / 2.0, escape(&style.title)).unwrap();
    }
    let (l, b) = (MARGIN, h - MARGIN);
    let (r, t) = (w - MARGIN, MARGIN);
    writeln!(out, r#"<g id="axes" stroke="black" stroke-width="1">"#).unwrap();
    writeln!(out, r#"<line x1="{l}" y1="{b}" x2="{r}" y2="{b}"/>"#).unwrap();
    writeln!(out, r#"<line x1="{l}" y1="{b}" x2="{l}" y2="{t}"/>"#).unwrap();
    writeln!(out, "</g>").unwrap();
    writeln!(
        out,
        r#"<g id="ticks" font-size="10"><text x="{l}" y="{}">{:.2}</text><text x="{r}" y="{}" text-anchor="end">{:.2}</text><text x="2" y="{b}">{:.2}</text><text x="2" y="{}">{:.2}</text></g>"#,
        b + 14.0,
        frame.x0,
        b + 14.0,
        frame.x1,
        frame.y0,
        t + 4.0,
        frame.y1
    )
    .unwrap();
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn circles(out: &mut String, id: &str, color: &str, radius: f64, frame: &Frame, pts: &[Point]) {
    writeln!(out, r#"<g id="{id}" fill="{color}" fill-opacity="0.7">"#).unwrap();
    for &p in pts {
        let (u, v) = frame.map(p);
        writeln!(out, r#"<circle cx="{u:.2}" cy="{v:.2}" r="{radius}"/>"#).unwrap();
    }
    writeln!(out, "</g>").unwrap();
}

fn polyline_points(frame: &Frame, pts: &[Point]) -> String {
    let mut s = String::new();
    for (i, &p) in pts.iter().enumerate() {
        let (u, v) = frame.map(p);
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{u:.2},{v:.2}").unwrap();
    }
    s
}

/// Renders a scatter panel.
pub fn render_scatter(layers: &ScatterLayers, style: &Style) -> String {
    let all = layers
        .posterior
        .iter()
        .chain(&layers.latents)
        .chain(&layers.reconstructions)
        .chain(layers.trajectories.iter().flatten())
        .chain(layers.offsets.iter().flat_map(|(a, b)| [a, b]));
    let frame = Frame::fit(all, style.width, style.height);
    let mut out = String::new();
    header(&mut out, style, &frame);
    writeln!(out, r##"<g id="trajectories" fill="none" stroke="#888888" stroke-width="0.6">"##).unwrap();
    for tr in &layers.trajectories {
        writeln!(out, r#"<polyline points="{}"/>"#, polyline_points(&frame, tr)).unwrap();
    }
    writeln!(out, "</g>").unwrap();
    writeln!(out, r##"<g id="offsets" stroke="#d62728" stroke-width="0.5">"##).unwrap();
    for &(a, b) in &layers.offsets {
        let ((x1, y1), (x2, y2)) = (frame.map(a), frame.map(b));
        writeln!(out, r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}"/>"#).unwrap();
    }
    writeln!(out, "</g>").unwrap();
    circles(&mut out, "posterior", "#1f77b4", style.radius, &frame, &layers.posterior);
    circles(&mut out, "latents", "#2ca02c", style.radius, &frame, &layers.latents);
    circles(&mut out, "reconstructions", "#ff7f0e", style.radius, &frame, &layers.reconstructions);
    out.push_str("</svg>\n");
    out
}

pub fn emit_svg_scatter(layers: &ScatterLayers, style: &Style, path: &Path) -> Result<()> {
    fs::write(path, render_scatter(layers, style))?;
    Ok(())
}

/// A labelled curve through `points` (e.g. fidelity vs. editability).
pub fn emit_svg_curve(points: &[Point], labels: &[String], style: &Style, path: &Path) -> Result<()> {
    let frame = Frame::fit(points.iter(), style.width, style.height);
    let mut out = String::new();
    header(&mut out, style, &frame);
    writeln!(
        out,
        r##"<polyline id="curve" fill="none" stroke="#1f77b4" stroke-width="1.5" points="{}"/>"##,
        polyline_points(&frame, points)
    )
    .unwrap();
    writeln!(out, r#"<g id="labels" font-size="10">"#).unwrap();
    for (&p, label) in points.iter().zip(labels) {
        let (u, v) = frame.map(p);
        writeln!(out, r#"<circle cx="{u:.2}" cy="{v:.2}" r="2.5"/><text x="{:.2}" y="{:.2}">{}</text>"#, u + 4.0, v - 4.0, escape(label)).unwrap();
    }
    writeln!(out, "</g>").unwrap();
    out.push_str("</svg>\n");
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_panel_has_axes() {
        let svg = render_scatter(&ScatterLayers::default(), &Style::default());
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains(r#"id="axes""#));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(!svg.contains("<circle"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let layers = ScatterLayers {
            posterior: vec![(0.0, 10.0), (5.0, 10.0)],
            latents: vec![(0.1, -0.3)],
            reconstructions: vec![(0.2, 9.8)],
            trajectories: vec![vec![(0.0, 10.0), (0.1, 5.0), (0.1, -0.3)]],
            offsets: vec![((0.0, 10.0), (0.2, 9.8))],
        };
        let style = Style { title: "a < b".into(), ..Style::default() };
        let a = render_scatter(&layers, &style);
        assert_eq!(a, render_scatter(&layers, &style));
        assert_eq!(a.matches("<circle").count(), 4);
        assert!(a.contains("a &lt; b"));
    }

    #[test]
    fn large_panel_is_fast_and_small() {
        let pts: Vec<Point> = (0..10_000).map(|i| ((i % 100) as f64, (i / 100) as f64)).collect();
        let layers = ScatterLayers { posterior: pts.clone(), reconstructions: pts, ..ScatterLayers::default() };
        let start = std::time::Instant::now();
        let svg = render_scatter(&layers, &Style::default());
        assert!(start.elapsed().as_secs_f64() < 2.0);
        assert!(svg.len() < 5 * 1024 * 1024);
    }
}
