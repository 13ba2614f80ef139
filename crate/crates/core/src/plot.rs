//! Minimal deterministic SVG line charts of summary tables.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::experiments::{Style, SummaryRow};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 110.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 45.0;

#[derive(Debug, Clone, Default)]
pub struct PlotOptions {
    pub title: Option<String>,
    /// Dashed black line.
    pub optimal: Option<f64>,
    /// Dashed gray line.
    pub random: Option<f64>,
    /// Plot total reward instead of performance.
    pub total_reward: bool,
}

fn color(style: Style) -> &'static str {
    match style {
        Style::Background => "#1f77b4",
        Style::DecisionTime => "#d62728",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Scale {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Scale {
    fn x(&self, v: f64) -> f64 {
        let span = (self.x1 - self.x0).max(1.0);
        LEFT + (v - self.x0) / span * (WIDTH - LEFT - RIGHT)
    }
    fn y(&self, v: f64) -> f64 {
        TOP + (self.y1 - v) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn finite_or_zero(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        0.0
    }
}

/// Render mean curves with one-standard-error bands, one per style.
pub fn render_svg(rows: &[SummaryRow], opts: &PlotOptions) -> String {
    let mut series: BTreeMap<Style, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for r in rows {
        let (m, se) = if opts.total_reward { (r.mean_total, r.se_total) } else { (r.mean_j, r.se_j) };
        series.entry(r.style).or_default().push((r.episode as f64, finite_or_zero(m), finite_or_zero(se)));
    }
    for pts in series.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    let mut ys: Vec<f64> = series.values().flatten().flat_map(|&(_, m, se)| [m - se, m + se]).collect();
    ys.extend(opts.optimal.iter().chain(opts.random.iter()));
    let xs = series.values().flatten().map(|p| p.0);
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let (mut y0, mut y1) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| (lo.min(y), hi.max(y)));
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    let pad = ((y1 - y0) * 0.05).max(1e-3);
    let scale = Scale { x0: if x0.is_finite() { x0 } else { 0.0 }, x1: if x1.is_finite() { x1 } else { 1.0 }, y0: y0 - pad, y1: y1 + pad };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    if let Some(t) = &opts.title {
        let _ = writeln!(svg, r#"<text x="{:.2}" y="18" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(t));
    }

    // axes and ticks
    let (bx, by) = (LEFT, HEIGHT - BOTTOM);
    let _ = writeln!(
        svg,
        r#"<path d="M{LEFT:.2},{TOP:.2} L{bx:.2},{by:.2} L{:.2},{by:.2}" stroke="black" fill="none"/>"#,
        WIDTH - RIGHT
    );
    for i in 0..=4 {
        let v = scale.y0 + (scale.y1 - scale.y0) * i as f64 / 4.0;
        let y = scale.y(v);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"#, LEFT - 6.0, y + 4.0);
    }
    for i in 0..=4 {
        let v = scale.x0 + (scale.x1 - scale.x0) * i as f64 / 4.0;
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.0}</text>"#, scale.x(v), by + 16.0);
    }
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">episode</text>"#, (LEFT + WIDTH - RIGHT) / 2.0, HEIGHT - 8.0);
    let ylabel = if opts.total_reward { "total reward" } else { "performance" };
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{ylabel}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );

    for (value, stroke) in [(opts.optimal, "black"), (opts.random, "gray")] {
        if let Some(v) = value {
            let y = scale.y(v);
            let _ = writeln!(
                svg,
                r#"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{stroke}" stroke-dasharray="6,4"/>"#,
                WIDTH - RIGHT
            );
        }
    }

    for (k, (style, pts)) in series.iter().enumerate() {
        let c = color(*style);
        if pts.len() == 1 {
            let (x, m, _) = pts[0];
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{c}"/>"#, scale.x(x), scale.y(m));
        } else {
            let mut band = String::new();
            for (i, &(x, m, se)) in pts.iter().enumerate() {
                let _ = write!(band, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, scale.x(x), scale.y(m + se));
            }
            for &(x, m, se) in pts.iter().rev() {
                let _ = write!(band, "L{:.2},{:.2} ", scale.x(x), scale.y(m - se));
            }
            let _ = writeln!(svg, r#"<path d="{}Z" fill="{c}" fill-opacity="0.2" stroke="none"/>"#, band);
            let line: Vec<String> = pts.iter().map(|&(x, m, _)| format!("{:.2},{:.2}", scale.x(x), scale.y(m))).collect();
            let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, line.join(" "));
        }
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{c}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            style.label()
        );
    }
    svg.push_str("</svg>\n");
    svg
}
