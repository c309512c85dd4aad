//! Minimal SVG line charts of metrics logs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::log::{read_log, MetricsRow, COLUMNS};
use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// One polyline per column against `iter`; rows lacking a value are skipped.
pub fn render_svg(rows: &[MetricsRow], columns: &[&str]) -> Result<String> {
    for c in columns {
        if *c == "stage" || !COLUMNS.contains(c) {
            return Err(Error::Usage(format!(
                "unknown column {c:?}; choose from {}",
                COLUMNS.iter().filter(|c| **c != "stage").copied().collect::<Vec<_>>().join(", ")
            )));
        }
    }
    let series: Vec<Vec<(f64, f64)>> = columns
        .iter()
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.column(c).flatten().map(|v| (r.iter as f64, v)))
                .filter(|(_, v)| v.is_finite())
                .collect()
        })
        .collect();
    let (x0, x1) = bounds(series.iter().flatten().map(|p| p.0));
    let (y0, y1) = bounds(series.iter().flatten().map(|p| p.1));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r#"<g stroke="black" stroke-width="1"><line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}"/><line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}"/></g>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="{}" text-anchor="start">{x0}</text><text x="{right}" y="{}" text-anchor="end">{x1}</text><text x="{}" y="{}" text-anchor="middle">iter</text>"#,
        bottom + 16.0,
        bottom + 16.0,
        WIDTH / 2.0,
        bottom + 32.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{bottom}" text-anchor="end">{y0:.4}</text><text x="{}" y="{}" text-anchor="end">{y1:.4}</text>"#,
        left - 4.0,
        left - 4.0,
        top + 4.0
    );
    for (k, (name, pts)) in columns.iter().zip(&series).enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let _ = write!(s, r#"<g data-column="{name}" stroke="{color}" fill="{color}">"#);
        if pts.len() > 1 {
            let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.3},{:.3}", sx(x), sy(y))).collect();
            let _ = write!(s, r#"<polyline fill="none" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        }
        for &(x, y) in pts {
            let _ = write!(s, r#"<circle cx="{:.3}" cy="{:.3}" r="2"/>"#, sx(x), sy(y));
        }
        let ly = top - 30.0 + 14.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" stroke="none">{name}</text></g>"#,
            right - 120.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes `<log stem>.svg` next to the log and returns its path.
pub fn emit_plot(log_path: impl AsRef<Path>, columns: &[&str]) -> Result<PathBuf> {
    let log_path = log_path.as_ref();
    let rows = read_log(log_path)?;
    let svg = render_svg(&rows, columns)?;
    let out = log_path.with_extension("svg");
    std::fs::write(&out, svg).map_err(|e| Error::io(&out, e))?;
    Ok(out)
}
