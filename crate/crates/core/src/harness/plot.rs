//! Minimal SVG line charts of the aggregated sweep results.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::output::{read_summary, Summary};
use crate::error::Result;

pub const PE_SVG: &str = "pe_vs_g.svg";
pub const NMSE_SVG: &str = "nmse_vs_g.svg";

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scale {
    Linear,
    /// Base-10 logarithmic; values at or below `floor` are drawn at `floor`.
    Log {
        floor: f64,
    },
}

pub struct Chart<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub y_scale: Scale,
    pub series: &'a [Series],
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    let raw = (hi - lo) / count as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

pub fn render_svg(chart: &Chart<'_>) -> String {
    let map_y = |v: f64| match chart.y_scale {
        Scale::Linear => v,
        Scale::Log { floor } => v.max(floor).log10(),
    };
    let pts: Vec<(f64, f64)> = chart
        .series
        .iter()
        .flat_map(|s| s.points.iter().map(|&(x, y)| (x, map_y(y))))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (mut x0, mut x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (mut y0, mut y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if pts.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    if y1 <= y0 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    if let Scale::Log { .. } = chart.y_scale {
        y0 = y0.floor();
        y1 = y1.ceil();
    }
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_T + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        MARGIN_L + pw / 2.0,
        escape(chart.title)
    );
    let _ =
        writeln!(svg, r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);

    for t in ticks(x0, x1, 8) {
        let x = sx(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{MARGIN_T}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{t}</text>"##,
            MARGIN_T + ph,
            MARGIN_T + ph + 16.0
        );
    }
    let y_ticks = match chart.y_scale {
        Scale::Linear => ticks(y0, y1, 6),
        Scale::Log { .. } => (y0 as i64..=y1 as i64).map(|e| e as f64).collect(),
    };
    for t in y_ticks {
        let y = sy(t);
        let label = match chart.y_scale {
            Scale::Linear => format!("{t}"),
            Scale::Log { .. } => format!("1e{t}"),
        };
        let _ = writeln!(
            svg,
            r##"<line x1="{MARGIN_L}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"##,
            MARGIN_L + pw,
            MARGIN_L - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 12.0,
        escape(chart.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        MARGIN_T + ph / 2.0,
        escape(chart.y_label)
    );

    for (i, s) in chart.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| (x, map_y(y)))
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
            coords.join(" ")
        );
        for c in &coords {
            let (cx, cy) = c.split_once(',').unwrap_or(("0", "0"));
            let _ = writeln!(svg, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
        }
        let ly = MARGIN_T + 14.0 + 18.0 * i as f64;
        let lx = MARGIN_L + pw + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Per-(algorithm, P) series of a cell statistic against `G`.
fn cell_series(summary: &Summary, stat: impl Fn(&super::runner::CellSummary) -> Option<f64>) -> Vec<Series> {
    let mut groups: BTreeMap<(super::config::Algorithm, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for c in &summary.cells {
        if let Some(v) = stat(c) {
            groups.entry((c.algorithm, c.p)).or_default().push((c.g as f64, v));
        }
    }
    groups
        .into_iter()
        .map(|((alg, p), mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { label: format!("{alg} (P={p})"), points, dashed: false }
        })
        .collect()
}

pub fn pe_chart_svg(summary: &Summary) -> String {
    let series = cell_series(summary, |c| c.pe_mean);
    let floor = 0.1 / (summary.config.system.devices as f64 * summary.config.n_trials as f64);
    render_svg(&Chart {
        title: "Activity detection error",
        x_label: "pilot length G",
        y_label: "Pe",
        y_scale: Scale::Log { floor },
        series: &series,
    })
}

pub fn nmse_chart_svg(summary: &Summary) -> String {
    let mut series = cell_series(summary, |c| c.nmse_db_mean);
    if let Some(se) = &summary.se {
        let mut points: Vec<(f64, f64)> = se.iter().map(|p| (p.g as f64, p.nmse_db)).collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        series.push(Series { label: "state evolution".into(), points, dashed: true });
    }
    render_svg(&Chart {
        title: "Channel estimation NMSE",
        x_label: "pilot length G",
        y_label: "NMSE (dB)",
        y_scale: Scale::Linear,
        series: &series,
    })
}

/// Reads `summary.json` from `dir` and writes both charts next to it.
pub fn emit_plots(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let summary = read_summary(dir)?;
    let pe = dir.join(PE_SVG);
    fs::write(&pe, pe_chart_svg(&summary))?;
    let nmse = dir.join(NMSE_SVG);
    fs::write(&nmse, nmse_chart_svg(&summary))?;
    Ok(vec![pe, nmse])
}
