//! Line plots as plain SVG.
//!
//! Output depends only on the input rows and the axes spec, so identical
//! inputs give identical bytes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Metric, MetricsRow, TrialId};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 450.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XAxis {
    CommRound,
    Samples,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AxesSpec {
    pub x: XAxis,
    pub y: Metric,
    pub log_y: bool,
    /// Values at or below zero are drawn at this level on a log axis.
    pub floor: f64,
    pub title: Option<String>,
}

impl AxesSpec {
    pub fn new(x: XAxis, y: Metric) -> Self {
        Self {
            x,
            y,
            log_y: false,
            floor: 1e-12,
            title: None,
        }
    }
}

pub struct Series<'a> {
    pub label: String,
    pub rows: &'a [MetricsRow],
}

/// Rows to draw from a metrics file: the mean rows when present, otherwise
/// the lowest-numbered trial.
pub fn plotted_rows(rows: &[MetricsRow]) -> Vec<MetricsRow> {
    if rows.iter().any(|r| r.trial == TrialId::Mean) {
        return rows.iter().filter(|r| r.trial == TrialId::Mean).cloned().collect();
    }
    let first = rows.iter().filter_map(|r| match r.trial {
        TrialId::Trial(t) => Some(t),
        TrialId::Mean => None,
    });
    match first.min() {
        Some(t) => rows.iter().filter(|r| r.trial == TrialId::Trial(t)).cloned().collect(),
        None => Vec::new(),
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

pub fn render_plot(series: &[Series<'_>], axes: &AxesSpec) -> Result<String> {
    if series.is_empty() {
        return Err(Error::config("nothing to plot"));
    }
    if axes.log_y && !(axes.floor > 0.0) {
        return Err(Error::config("log axis floor must be positive"));
    }
    let mut clamped = false;
    let mut lines: Vec<Vec<(f64, f64)>> = Vec::with_capacity(series.len());
    for s in series {
        let mut pts = Vec::new();
        for r in s.rows {
            let Some(mut y) = r.get(axes.y) else { continue };
            if !y.is_finite() {
                continue;
            }
            if axes.log_y {
                if y <= axes.floor {
                    clamped |= y < axes.floor;
                    y = axes.floor;
                }
                y = y.log10();
            }
            let x = match axes.x {
                XAxis::CommRound => r.comm_round,
                XAxis::Samples => r.samples,
            } as f64;
            pts.push((x, y));
        }
        lines.push(pts);
    }
    if lines.iter().all(|l| l.is_empty()) {
        return Err(Error::config(format!("no values of {} to plot", axes.y.column())));
    }
    let all = lines.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    if let Some(t) = &axes.title {
        writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, esc(t)).unwrap();
    }
    writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        writeln!(svg, r##"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="#ccc"/>"##, TOP, TOP + ph).unwrap();
        writeln!(svg, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, tick_label(xv)).unwrap();
        writeln!(svg, r##"<line x1="{LEFT}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="#ccc"/>"##, LEFT + pw).unwrap();
        let ylabel = if axes.log_y { format!("{:.1e}", 10f64.powf(yv)) } else { tick_label(yv) };
        writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{ylabel}</text>"#, LEFT - 6.0, py + 4.0).unwrap();
    }
    let xname = match axes.x {
        XAxis::CommRound => "comm_round",
        XAxis::Samples => "samples",
    };
    writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{xname}</text>"#, LEFT + pw / 2.0, HEIGHT - 16.0).unwrap();
    let yname = if axes.log_y { format!("{} (log)", axes.y.column()) } else { axes.y.column().to_string() };
    writeln!(
        svg,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{yname}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    )
    .unwrap();
    for (i, (s, pts)) in series.iter().zip(&lines).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !pts.is_empty() {
            let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" ")).unwrap();
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0).unwrap();
        writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, esc(&s.label)).unwrap();
    }
    if clamped {
        writeln!(
            svg,
            r#"<text x="{}" y="{}" font-style="italic">values below {:.1e} drawn at the floor</text>"#,
            LEFT,
            TOP - 8.0,
            axes.floor
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
