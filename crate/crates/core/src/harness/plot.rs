//! Minimal SVG line charts of trace columns, one file per panel.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::trace::TraceRecord;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
/// Traces longer than this are thinned by striding before drawing.
const MAX_POINTS: usize = 2000;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Panel {
    Kl,
    Tc,
    Recon,
    Elbo,
    Beta,
}

impl Panel {
    pub const ALL: [Panel; 5] = [Panel::Kl, Panel::Tc, Panel::Recon, Panel::Elbo, Panel::Beta];

    pub fn name(self) -> &'static str {
        match self {
            Panel::Kl => "kl",
            Panel::Tc => "tc",
            Panel::Recon => "recon",
            Panel::Elbo => "elbo",
            Panel::Beta => "beta",
        }
    }

    fn value(self, r: &TraceRecord) -> Option<f64> {
        match self {
            Panel::Kl => Some(r.kl),
            Panel::Tc => r.tc,
            Panel::Recon => r.recon,
            Panel::Elbo => r.elbo,
            Panel::Beta => Some(r.beta),
        }
    }

    /// The set point refers to TC when the trace carries TC, else to KL.
    fn shows_set_point(self, trace: &[TraceRecord]) -> bool {
        let has_tc = trace.iter().any(|r| r.tc.is_some());
        matches!((self, has_tc), (Panel::Kl, false) | (Panel::Tc, true))
    }
}

/// A labelled trace, e.g. one seed of a sweep.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub records: Vec<TraceRecord>,
}

/// Writes `<prefix>_<panel>.svg` into `out_dir` for every panel with data,
/// overlaying all series. The set-point line is taken from the first series.
pub fn emit_plots(series: &[Series], out_dir: impl AsRef<Path>, prefix: &str) -> Result<Vec<PathBuf>> {
    if series.is_empty() || series.iter().all(|s| s.records.is_empty()) {
        return Err(Error::InvalidData("nothing to plot: traces are empty".into()));
    }
    let out_dir = out_dir.as_ref();
    let rendered: Vec<(Panel, String)> = Panel::ALL
        .iter()
        .filter_map(|&p| render_panel(p, series).map(|svg| (p, svg)))
        .collect();
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(rendered.len());
    for (panel, svg) in rendered {
        let path = out_dir.join(format!("{prefix}_{}.svg", panel.name()));
        fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}

fn thin(points: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    let stride = points.len().div_ceil(MAX_POINTS).max(1);
    points.into_iter().step_by(stride).collect()
}

fn render_panel(panel: Panel, series: &[Series]) -> Option<String> {
    let lines: Vec<(&str, Vec<(f64, f64)>)> = series
        .iter()
        .map(|s| {
            let pts = s
                .records
                .iter()
                .filter_map(|r| panel.value(r).map(|v| (r.step as f64, v)))
                .filter(|(_, v)| v.is_finite())
                .collect();
            (s.label.as_str(), thin(pts))
        })
        .filter(|(_, p): &(&str, Vec<_>)| !p.is_empty())
        .collect();
    if lines.is_empty() {
        return None;
    }
    let reference: Vec<(f64, f64)> = match series.first() {
        Some(s) if panel.shows_set_point(&s.records) => thin(
            s.records
                .iter()
                .filter_map(|r| r.set_point.map(|v| (r.step as f64, v)))
                .collect(),
        ),
        _ => Vec::new(),
    };

    let all = lines.iter().flat_map(|(_, p)| p.iter()).chain(reference.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let path = |pts: &[(f64, f64)]| {
        pts.iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="20" font-size="14">{}</text>"#,
        panel.name()
    );
    let _ = writeln!(
        svg,
        r##"<g id="axes" stroke="#444" fill="none"><line x1="{MARGIN}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{b}"/></g>"##,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="{}">{x0}</text><text x="{}" y="{}" text-anchor="end">{x1}</text><text x="4" y="{}">{}</text><text x="4" y="{}">{}</text>"#,
        HEIGHT - MARGIN + 16.0,
        WIDTH - MARGIN,
        HEIGHT - MARGIN + 16.0,
        sy(y0),
        fmt_tick(y0),
        sy(y1) + 10.0,
        fmt_tick(y1)
    );
    if !reference.is_empty() {
        let _ = writeln!(
            svg,
            r##"<polyline class="set-point" fill="none" stroke="#000" stroke-dasharray="6 4" points="{}"/>"##,
            path(&reference)
        );
    }
    for (i, (label, pts)) in lines.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            svg,
            r#"<polyline class="series" data-label="{}" fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#,
            escape(label),
            path(pts)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}" text-anchor="end">{}</text>"#,
            WIDTH - MARGIN,
            20.0 + 14.0 * i as f64,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    Some(svg)
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
