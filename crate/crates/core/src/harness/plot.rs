use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::log::RunLog;
use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// One polyline of a chart.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

/// Closed interval covering `values`, widened when all values coincide.
pub(crate) fn axis_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// A standalone SVG line chart. Every series needs at least two points.
pub fn render_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String> {
    if series.is_empty() {
        return Err(Error::Data("nothing to plot".into()));
    }
    if let Some(s) = series.iter().find(|s| s.points.len() < 2) {
        return Err(Error::Data(format!(
            "series '{}' has {} point(s), at least 2 are needed",
            s.label,
            s.points.len()
        )));
    }
    if series.iter().flat_map(|s| &s.points).any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonFinite("plot data".into()));
    }
    let (x0, x1) = axis_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = axis_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let ticks = [(x0, y0), (x1, y1)];
    for (xv, yv) in ticks {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            px(xv),
            TOP + ph + 16.0,
            fmt_tick(xv)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            py(yv) + 4.0,
            fmt_tick(yv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
            ly - 4.0,
            lx + 18.0,
            ly - 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly:.2}" font-family="sans-serif" font-size="11">{}</text>"#,
            lx + 24.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn fmt_tick(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e9 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn file_stem(domain: &str) -> String {
    domain
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes `miou_<domain>.svg` for every evaluated target plus
/// `miou_average.svg`, each with one line per run.
pub fn emit_plots(runs: &[(String, &RunLog)], dir: &Path) -> Result<Vec<PathBuf>> {
    let Some((_, first)) = runs.first() else {
        return Err(Error::Data("no runs to plot".into()));
    };
    let domains: Vec<String> = first
        .eval_points()
        .first()
        .map(|p| p.per_domain.iter().map(|(d, _)| d.clone()).collect())
        .unwrap_or_default();
    if domains.is_empty() {
        return Err(Error::Data("run log holds no evaluation events".into()));
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut charts: Vec<(String, Option<String>)> = domains.iter().map(|d| (d.clone(), Some(d.clone()))).collect();
    charts.push(("average".into(), None));
    for (name, domain) in charts {
        let series: Vec<Series> = runs
            .iter()
            .map(|(label, log)| Series {
                label: label.clone(),
                points: log
                    .eval_points()
                    .iter()
                    .filter_map(|p| {
                        let y = match &domain {
                            Some(d) => p.miou_of(d)?,
                            None => p.avg_miou,
                        };
                        Some((p.iteration as f64, y))
                    })
                    .collect(),
            })
            .collect();
        let title = match &domain {
            Some(d) => format!("mIoU on {d}"),
            None => "average target mIoU".to_string(),
        };
        let svg = render_chart(&title, "iteration", "mIoU", &series)?;
        let path = dir.join(format!("miou_{}.svg", file_stem(&name)));
        fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}
