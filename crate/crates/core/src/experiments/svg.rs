//! Minimal self-contained SVG line and scatter charts.
//!
//! The plotted data is repeated in an XML comment so that a chart can be
//! checked or re-plotted without its CSV.

use std::fmt::Write as _;

use crate::config::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartKind {
    Line,
    Scatter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: String) -> Self {
        Self {
            name,
            points: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub kind: ChartKind,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const TICKS: usize = 5;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Padded finite range of `values`, widened when all values coincide.
fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn tick_label(v: f64) -> String {
    let rounded = (v * 1e4).round() / 1e4;
    fmt_f64(if rounded == 0.0 { 0.0 } else { rounded })
}

pub fn render(figure: &Figure) -> String {
    let points = || figure.series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = range(points().map(|p| p.0));
    let (y0, y1) = range(points().map(|p| p.1));
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| MARGIN_TOP + (1.0 - (y - y0) / (y1 - y0)) * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    out += "<!-- data\n";
    for s in &figure.series {
        let _ = writeln!(out, "series: {}", s.name.replace("--", "- -"));
        for (x, y) in &s.points {
            let _ = writeln!(out, "  {},{}", fmt_f64(*x), fmt_f64(*y));
        }
    }
    out += "-->\n";
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        escape(&figure.title)
    );
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for i in 0..=TICKS {
        let t = i as f64 / TICKS as f64;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            out,
            r##"<line x1="{px:.2}" y1="{b}" x2="{px:.2}" y2="{b5}" stroke="black"/><text x="{px:.2}" y="{bt}" text-anchor="middle">{}</text>"##,
            tick_label(xv),
            b = MARGIN_TOP + plot_h,
            b5 = MARGIN_TOP + plot_h + 5.0,
            bt = MARGIN_TOP + plot_h + 18.0,
        );
        let _ = writeln!(
            out,
            r##"<line x1="{l5}" y1="{py:.2}" x2="{MARGIN_LEFT}" y2="{py:.2}" stroke="black"/><text x="{lt}" y="{py4:.2}" text-anchor="end">{}</text>"##,
            tick_label(yv),
            l5 = MARGIN_LEFT - 5.0,
            lt = MARGIN_LEFT - 8.0,
            py4 = py + 4.0,
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 10.0,
        escape(&figure.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{y}" text-anchor="middle" transform="rotate(-90 16 {y})">{}</text>"#,
        escape(&figure.y_label),
        y = MARGIN_TOP + plot_h / 2.0
    );

    for (k, s) in figure.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let visible: Vec<(f64, f64)> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| (sx(x), sy(y)))
            .collect();
        if figure.kind == ChartKind::Line && visible.len() > 1 {
            let path: Vec<String> = visible.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                path.join(" ")
            );
        }
        for (x, y) in &visible {
            let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
        }
        let ly = MARGIN_TOP + 12.0 + 18.0 * k as f64;
        let lx = WIDTH - MARGIN_RIGHT + 12.0;
        let _ = writeln!(
            out,
            r#"<circle cx="{lx}" cy="{cy}" r="4" fill="{color}"/><text x="{tx}" y="{ly}">{}</text>"#,
            escape(&s.name),
            cy = ly - 4.0,
            tx = lx + 10.0,
        );
    }
    out += "</svg>\n";
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_embeds_data_and_escapes_text() {
        let figure = Figure {
            title: "a < b".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            kind: ChartKind::Line,
            series: vec![Series {
                name: "s&t".into(),
                points: vec![(1.0, 0.5), (2.0, 0.25)],
            }],
        };
        let svg = render(&figure);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("  1,0.5\n  2,0.25\n"));
        assert!(svg.contains("a &lt; b") && svg.contains("s&amp;t"));
        assert!(svg.contains("<polyline"));
        assert_eq!(render(&figure), svg);
    }

    #[test]
    fn degenerate_ranges_render() {
        let figure = Figure {
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
            kind: ChartKind::Scatter,
            series: vec![Series {
                name: "flat".into(),
                points: vec![(3.0, 1.0), (3.0, 1.0), (f64::NAN, 2.0)],
            }],
        };
        let svg = render(&figure);
        assert!(!svg.contains("NaN\"") && !svg.contains("<polyline"));
    }
}
