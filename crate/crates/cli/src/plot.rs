//! Fixed-size SVG line plots of two CSV columns.

use std::fmt::Write as _;
use std::path::Path;

use barystab::metrics::fit_exponent;
use thiserror::Error;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 600.0;
const LEFT: f64 = 90.0;
const RIGHT: f64 = 40.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 70.0;
const TICKS: usize = 5;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("log scale needs positive data, column `{column}` has {value}")]
    NonPositiveLogData { column: String, value: f64 },
    #[error("row {row}: `{value}` is not a number")]
    BadNumber { row: usize, value: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Read columns `x` and `y` of a headed CSV file.
pub fn read_columns(path: &Path, x: &str, y: &str) -> Result<(Vec<f64>, Vec<f64>), PlotError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let find = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| PlotError::MissingColumn(name.into()));
    let (ix, iy) = (find(x)?, find(y)?);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        for (k, out) in [(ix, &mut xs), (iy, &mut ys)] {
            let s = rec.get(k).unwrap_or("");
            out.push(s.trim().parse::<f64>().map_err(|_| PlotError::BadNumber { row: row + 1, value: s.into() })?);
        }
    }
    Ok((xs, ys))
}

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn new(v: &[f64]) -> Self {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Axis { lo: lo - 0.5, hi: hi + 0.5 };
        }
        let pad = 0.05 * (hi - lo);
        Axis { lo: lo - pad, hi: hi + pad }
    }

    fn frac(&self, v: f64) -> f64 {
        (v - self.lo) / (self.hi - self.lo)
    }
}

fn tick_label(v: f64, loglog: bool) -> String {
    if loglog {
        format!("{:.3e}", 10f64.powf(v))
    } else {
        format!("{v:.4}")
    }
}

/// Render the series as an 800 x 600 SVG. With `loglog`, both axes are
/// logarithmic and the fitted log-log slope is printed in the corner.
pub fn render_svg(xs: &[f64], ys: &[f64], x_label: &str, y_label: &str, loglog: bool) -> Result<String, PlotError> {
    if loglog {
        for (name, v) in [(x_label, xs), (y_label, ys)] {
            if let Some(&bad) = v.iter().find(|&&t| !(t > 0.0)) {
                return Err(PlotError::NonPositiveLogData { column: name.into(), value: bad });
            }
        }
    }
    let tx: Vec<f64> = xs.iter().map(|&v| if loglog { v.log10() } else { v }).collect();
    let ty: Vec<f64> = ys.iter().map(|&v| if loglog { v.log10() } else { v }).collect();
    let (ax, ay) = (Axis::new(&tx), Axis::new(&ty));
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let px = |v: f64| LEFT + ax.frac(v) * pw;
    let py = |v: f64| TOP + (1.0 - ay.frac(v)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black" stroke-width="1"/>"#
    );
    for k in 0..TICKS {
        let f = k as f64 / (TICKS - 1) as f64;
        let (vx, vy) = (ax.lo + f * (ax.hi - ax.lo), ay.lo + f * (ay.hi - ay.lo));
        let (x, y) = (px(vx), py(vy));
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
            TOP + ph + 20.0,
            tick_label(vx, loglog)
        );
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="end">{}</text>"#,
            LEFT - 8.0,
            y + 4.0,
            tick_label(vy, loglog)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        LEFT + 0.5 * pw,
        HEIGHT - 20.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.2}" font-family="sans-serif" font-size="14" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
        TOP + 0.5 * ph,
        TOP + 0.5 * ph,
        escape(y_label)
    );
    let pts: Vec<String> = tx.iter().zip(&ty).map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
    if !pts.is_empty() {
        let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##, pts.join(" "));
    }
    for (&x, &y) in tx.iter().zip(&ty) {
        let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f77b4"/>"##, px(x), py(y));
    }
    if loglog {
        let pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
        if let Ok(fit) = fit_exponent(&pairs) {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="14">slope = {:.3}</text>"#,
                LEFT + 12.0,
                TOP + 22.0,
                fit.slope
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
