//! Static SVG line charts on a fixed 800×500 canvas.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonparam::KmCurve;

pub const VIEW_WIDTH: f64 = 800.0;
pub const VIEW_HEIGHT: f64 = 500.0;
/// Grid size used by [`Curve::sampled`].
pub const SMOOTH_POINTS: usize = 241;
const FONT: &str = "sans-serif";
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    /// Right-continuous step function: point `i` holds until point `i + 1`.
    Step,
    Smooth,
    Points,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub kind: CurveKind,
    pub points: Vec<(f64, f64)>,
}

impl Curve {
    pub fn new(label: impl Into<String>, kind: CurveKind, points: Vec<(f64, f64)>) -> Self {
        Curve {
            label: label.into(),
            kind,
            points,
        }
    }

    /// Kaplan–Meier step curve from time 0 (where S = 1) to `end`.
    pub fn km(label: impl Into<String>, curve: &KmCurve, end: f64) -> Self {
        let mut points = vec![(0.0, 1.0)];
        points.extend(curve.rows.iter().map(|r| (r.time, r.survival.value())));
        let last = points.last().map_or(1.0, |p| p.1);
        if end > points.last().map_or(0.0, |p| p.0) {
            points.push((end, last));
        }
        Curve::new(label, CurveKind::Step, points)
    }

    /// `f` on [`SMOOTH_POINTS`] evenly spaced abscissae over `[a, b]`.
    pub fn sampled(label: impl Into<String>, a: f64, b: f64, f: impl Fn(f64) -> f64) -> Self {
        let n = SMOOTH_POINTS - 1;
        let points = (0..=n)
            .map(|i| {
                let x = a + (b - a) * i as f64 / n as f64;
                (x, f(x))
            })
            .collect();
        Curve::new(label, CurveKind::Smooth, points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub left: f64,
    pub right: f64,
    pub top: f64,
    pub bottom: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Margins {
            left: 70.0,
            right: 170.0,
            top: 40.0,
            bottom: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axes {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Data range; derived from the curves when absent.
    pub x_range: Option<(f64, f64)>,
    pub y_range: Option<(f64, f64)>,
    /// Dashed horizontal line, e.g. at 0.5 for reading medians.
    pub reference_line: Option<f64>,
    /// Dashed line `y = x`.
    pub diagonal: bool,
    pub margins: Margins,
}

impl Axes {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Axes {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            x_range: None,
            y_range: None,
            reference_line: None,
            diagonal: false,
            margins: Margins::default(),
        }
    }

    /// Probability scale on the y axis with the median reference line.
    pub fn probability(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Axes {
            y_range: Some((0.0, 1.0)),
            reference_line: Some(0.5),
            ..Axes::new(title, x_label, y_label)
        }
    }

    pub fn with_x_range(mut self, lo: f64, hi: f64) -> Self {
        self.x_range = Some((lo, hi));
        self
    }
}

/// Pixel mapping of a plot area inside the 800×500 canvas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub margins: Margins,
}

impl Frame {
    fn plot_width(&self) -> f64 {
        VIEW_WIDTH - self.margins.left - self.margins.right
    }

    fn plot_height(&self) -> f64 {
        VIEW_HEIGHT - self.margins.top - self.margins.bottom
    }

    pub fn px(&self, x: f64) -> f64 {
        self.margins.left + (x - self.x.0) / (self.x.1 - self.x.0) * self.plot_width()
    }

    pub fn py(&self, y: f64) -> f64 {
        self.margins.top + (1.0 - (y - self.y.0) / (self.y.1 - self.y.0)) * self.plot_height()
    }
}

/// A self-contained chart for [`render_panels`].
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub axes: Axes,
    pub curves: Vec<Curve>,
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

/// Tick positions at a 1-2-5 step covering `[lo, hi]`, with the step.
fn nice_ticks(lo: f64, hi: f64) -> (Vec<f64>, f64) {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step - 1e-9).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    ((first..=last).map(|k| k as f64 * step).collect(), step)
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn data_range(curves: &[Curve], pick: impl Fn(&(f64, f64)) -> f64, pad: f64) -> (f64, f64) {
    let (lo, hi) = curves
        .iter()
        .flat_map(|c| c.points.iter().map(&pick))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi > lo {
        let d = (hi - lo) * pad;
        (lo - d, hi + d)
    } else {
        let d = lo.abs().max(1.0) * 0.5;
        (lo - d, hi + d)
    }
}

fn validate(curves: &[Curve], axes: &Axes) -> Result<Frame> {
    if curves.is_empty() {
        return Err(Error::Render("no curves to draw".into()));
    }
    for c in curves {
        if c.points.is_empty() {
            return Err(Error::Render(format!("curve `{}` has no points", c.label)));
        }
        if c.points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::Render(format!("curve `{}` has non-finite points", c.label)));
        }
        if let Some((lo, hi)) = axes.y_range {
            if c.points.iter().any(|p| p.1 < lo - 1e-12 || p.1 > hi + 1e-12) {
                return Err(Error::Render(format!(
                    "curve `{}` leaves the y range [{lo}, {hi}]",
                    c.label
                )));
            }
        }
    }
    let x = axes.x_range.unwrap_or_else(|| data_range(curves, |p| p.0, 0.0));
    let y = axes.y_range.unwrap_or_else(|| data_range(curves, |p| p.1, 0.05));
    if !(x.1 > x.0) || !(y.1 > y.0) || !x.0.is_finite() || !x.1.is_finite() || !y.0.is_finite() || !y.1.is_finite() {
        return Err(Error::Render("axis range is empty or not finite".into()));
    }
    let m = axes.margins;
    if m.left + m.right >= VIEW_WIDTH || m.top + m.bottom >= VIEW_HEIGHT {
        return Err(Error::Render("margins leave no plot area".into()));
    }
    Ok(Frame { x, y, margins: m })
}

fn draw(out: &mut String, curves: &[Curve], axes: &Axes, frame: &Frame, id: &str) {
    let m = frame.margins;
    let (left, right) = (m.left, VIEW_WIDTH - m.right);
    let (top, bottom) = (m.top, VIEW_HEIGHT - m.bottom);
    let _ = writeln!(out, r#"<rect x="0" y="0" width="800" height="500" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        (left + right) / 2.0,
        escape(&axes.title)
    );

    let _ = writeln!(out, r##"<g class="grid" stroke="#dddddd" stroke-width="1">"##);
    let (xt, xstep) = nice_ticks(frame.x.0, frame.x.1);
    let (yt, ystep) = nice_ticks(frame.y.0, frame.y.1);
    for &v in &xt {
        let _ = writeln!(out, r#"<line x1="{0:.2}" y1="{top:.2}" x2="{0:.2}" y2="{bottom:.2}"/>"#, frame.px(v));
    }
    for &v in &yt {
        let _ = writeln!(out, r#"<line x1="{left:.2}" y1="{0:.2}" x2="{right:.2}" y2="{0:.2}"/>"#, frame.py(v));
    }
    let _ = writeln!(out, "</g>");

    let _ = writeln!(
        out,
        r#"<rect x="{left:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        right - left,
        bottom - top
    );
    let _ = writeln!(out, r#"<g class="ticks" font-size="12">"#);
    for &v in &xt {
        let x = frame.px(v);
        let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{bottom:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, bottom + 5.0);
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            bottom + 20.0,
            tick_label(v, xstep)
        );
    }
    for &v in &yt {
        let y = frame.py(v);
        let _ = writeln!(out, r#"<line x1="{:.2}" y1="{y:.2}" x2="{left:.2}" y2="{y:.2}" stroke="black"/>"#, left - 5.0);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 8.0,
            y + 4.0,
            tick_label(v, ystep)
        );
    }
    let _ = writeln!(out, "</g>");
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{}</text>"#,
        (left + right) / 2.0,
        VIEW_HEIGHT - 15.0,
        escape(&axes.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{0:.2}" text-anchor="middle" font-size="13" transform="rotate(-90 18 {0:.2})">{1}</text>"#,
        (top + bottom) / 2.0,
        escape(&axes.y_label)
    );

    let _ = writeln!(
        out,
        r#"<clipPath id="{id}clip"><rect x="{left:.2}" y="{top:.2}" width="{:.2}" height="{:.2}"/></clipPath>"#,
        right - left,
        bottom - top
    );
    if let Some(r) = axes.reference_line.filter(|r| *r >= frame.y.0 && *r <= frame.y.1) {
        let _ = writeln!(
            out,
            r#"<line id="{id}reference-line" x1="{left:.2}" y1="{0:.2}" x2="{right:.2}" y2="{0:.2}" stroke="gray" stroke-dasharray="6 4"/>"#,
            frame.py(r)
        );
    }
    if axes.diagonal {
        let lo = frame.x.0.max(frame.y.0);
        let hi = frame.x.1.min(frame.y.1);
        if hi > lo {
            let _ = writeln!(
                out,
                r#"<line id="{id}diagonal" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="6 4"/>"#,
                frame.px(lo),
                frame.py(lo),
                frame.px(hi),
                frame.py(hi)
            );
        }
    }

    let _ = writeln!(out, r#"<g clip-path="url(#{id}clip)">"#);
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        match c.kind {
            CurveKind::Step => {
                let (x0, y0) = c.points[0];
                let mut d = format!("M{:.2} {:.2}", frame.px(x0), frame.py(y0));
                for &(x, y) in &c.points[1..] {
                    let _ = write!(d, " H{:.2} V{:.2}", frame.px(x), frame.py(y));
                }
                let _ = writeln!(
                    out,
                    r#"<path id="{id}curve-{i}" class="step" d="{d}" fill="none" stroke="{color}" stroke-width="2"/>"#
                );
            }
            CurveKind::Smooth => {
                let pts: Vec<String> = c
                    .points
                    .iter()
                    .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
                    .collect();
                let _ = writeln!(
                    out,
                    r#"<polyline id="{id}curve-{i}" class="smooth" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                    pts.join(" ")
                );
            }
            CurveKind::Points => {
                let _ = writeln!(out, r#"<g id="{id}curve-{i}" class="points" fill="{color}">"#);
                for &(x, y) in &c.points {
                    let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5"/>"#, frame.px(x), frame.py(y));
                }
                let _ = writeln!(out, "</g>");
            }
        }
    }
    let _ = writeln!(out, "</g>");

    let _ = writeln!(out, r#"<g class="legend" font-size="12">"#);
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = top + 10.0 + 20.0 * i as f64;
        let x = right + 12.0;
        if c.kind == CurveKind::Points {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#, x + 10.0);
        } else {
            let _ = writeln!(
                out,
                r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"/>"#,
                x + 20.0
            );
        }
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, x + 26.0, y + 4.0, escape(&c.label));
    }
    let _ = writeln!(out, "</g>");
}

fn open_root(out: &mut String) {
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" viewBox="0 0 {VIEW_WIDTH} {VIEW_HEIGHT}" width="{VIEW_WIDTH}" height="{VIEW_HEIGHT}" font-family="{FONT}">"#
    );
}

/// Pixel frame that [`render_survival_svg`] would use for these inputs.
pub fn frame_for(curves: &[Curve], axes: &Axes) -> Result<Frame> {
    validate(curves, axes)
}

/// One chart with legend, ticks and optional reference lines.
pub fn render_survival_svg(curves: &[Curve], axes: &Axes) -> Result<String> {
    let frame = validate(curves, axes)?;
    let mut out = String::new();
    open_root(&mut out);
    draw(&mut out, curves, axes, &frame, "");
    out.push_str("</svg>\n");
    Ok(out)
}

/// Several charts tiled on one canvas, each drawn in its own nested
/// 800×500 coordinate system.
pub fn render_panels(title: &str, panels: &[Panel]) -> Result<String> {
    if panels.is_empty() {
        return Err(Error::Render("no panels to draw".into()));
    }
    let frames = panels
        .iter()
        .map(|p| validate(&p.curves, &p.axes))
        .collect::<Result<Vec<_>>>()?;
    let cols = (panels.len() as f64).sqrt().ceil() as usize;
    let rows = panels.len().div_ceil(cols);
    let header = 30.0;
    let w = VIEW_WIDTH / cols as f64;
    let h = (VIEW_HEIGHT - header) / rows as f64;
    let mut out = String::new();
    open_root(&mut out);
    let _ = writeln!(out, r#"<rect x="0" y="0" width="800" height="500" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="400" y="20" text-anchor="middle" font-size="16">{}</text>"#,
        escape(title)
    );
    for (k, (panel, frame)) in panels.iter().zip(&frames).enumerate() {
        let (r, c) = (k / cols, k % cols);
        let _ = writeln!(
            out,
            r#"<svg x="{:.2}" y="{:.2}" width="{w:.2}" height="{h:.2}" viewBox="0 0 {VIEW_WIDTH} {VIEW_HEIGHT}">"#,
            c as f64 * w,
            header + r as f64 * h
        );
        draw(&mut out, &panel.curves, &panel.axes, frame, &format!("p{k}-"));
        out.push_str("</svg>\n");
    }
    out.push_str("</svg>\n");
    Ok(out)
}
