//! CSV and SVG output for simulation results.

use super::{QuantileSummary, SummaryRow, TrialRow, TrialTable};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(thiserror::Error, Debug)]
pub enum EmitError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 240.0;
const COLUMNS: usize = 4;
const MARGIN_L: f64 = 44.0;
const MARGIN_R: f64 = 12.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 32.0;
const REFERENCE_PROB: f64 = 0.95;

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Fan chart of the summary: one panel per prior with the 5-95% band, the
/// median line and a dashed reference line at 0.95.
pub fn render_svg(summary: &QuantileSummary) -> String {
    let priors = summary.priors();
    let cols = priors.len().clamp(1, COLUMNS);
    let rows = priors.len().div_ceil(COLUMNS).max(1);
    let max_n = summary.rows.iter().map(|r| r.n).max().unwrap_or(1).max(1) as f64;
    let min_n = summary.rows.iter().map(|r| r.n).min().unwrap_or(0) as f64;
    let span = if max_n > min_n { max_n - min_n } else { 1.0 };
    let plot_w = PANEL_W - MARGIN_L - MARGIN_R;
    let plot_h = PANEL_H - MARGIN_T - MARGIN_B;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">
<rect width="{w}" height="{h}" fill="white"/>"#,
        w = PANEL_W * cols as f64,
        h = PANEL_H * rows as f64,
    );
    for (i, prior) in priors.iter().enumerate() {
        let ox = (i % COLUMNS) as f64 * PANEL_W + MARGIN_L;
        let oy = (i / COLUMNS) as f64 * PANEL_H + MARGIN_T;
        let x = |n: u64| ox + (n as f64 - min_n) / span * plot_w;
        let y = |p: f64| oy + (1.0 - p) * plot_h;
        let pts: Vec<&SummaryRow> = summary.rows.iter().filter(|r| r.prior == *prior).collect();

        let _ = writeln!(s, r#"<g class="panel">"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            ox + plot_w / 2.0,
            oy - 10.0,
            xml_escape(prior)
        );
        let _ = writeln!(
            s,
            r##"<rect x="{ox:.2}" y="{oy:.2}" width="{plot_w:.2}" height="{plot_h:.2}" fill="none" stroke="#888"/>"##
        );
        for tick in [0.0, 0.5, 1.0] {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{tick:.1}</text>"#,
                ox - 4.0,
                y(tick) + 4.0
            );
        }
        for n in [min_n as u64, max_n as u64] {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{n}</text>"#,
                x(n),
                oy + plot_h + 14.0
            );
        }

        let mut band = String::new();
        for (j, r) in pts.iter().enumerate() {
            let _ = write!(band, "{}{:.2},{:.2} ", if j == 0 { "M" } else { "L" }, x(r.n), y(r.q95));
        }
        for r in pts.iter().rev() {
            let _ = write!(band, "L{:.2},{:.2} ", x(r.n), y(r.q05));
        }
        let _ = writeln!(
            s,
            r##"<path class="band" d="{}Z" fill="#6a9fd4" fill-opacity="0.35" stroke="none"/>"##,
            band
        );
        let median: Vec<String> = pts
            .iter()
            .map(|r| format!("{:.2},{:.2}", x(r.n), y(r.q50)))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline class="median" points="{}" fill="none" stroke="#1f4e8c" stroke-width="1.5"/>"##,
            median.join(" ")
        );
        let _ = writeln!(
            s,
            r##"<line class="reference" x1="{ox:.2}" y1="{yr:.2}" x2="{:.2}" y2="{yr:.2}" stroke="#c0392b" stroke-dasharray="4,3"/>"##,
            ox + plot_w,
            yr = y(REFERENCE_PROB)
        );
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EmitError + '_ {
    move |source| EmitError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> EmitError + '_ {
    move |source| EmitError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `trials.csv`, `summary.csv` and `posterior_paths.svg` into
/// `out_dir`, creating it if needed.
pub fn emit(
    table: &TrialTable,
    summary: &QuantileSummary,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, EmitError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let trials = out_dir.join("trials.csv");
    let mut w = csv::Writer::from_path(&trials).map_err(csv_err(&trials))?;
    for row in &table.rows {
        w.serialize(row).map_err(csv_err(&trials))?;
    }
    w.flush().map_err(io_err(&trials))?;

    let summary_path = out_dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path).map_err(csv_err(&summary_path))?;
    for row in &summary.rows {
        w.serialize(row).map_err(csv_err(&summary_path))?;
    }
    w.flush().map_err(io_err(&summary_path))?;

    let svg = out_dir.join("posterior_paths.svg");
    std::fs::write(&svg, render_svg(summary)).map_err(io_err(&svg))?;
    Ok(vec![trials, summary_path, svg])
}

/// Reads back a `trials.csv` written by [`emit`].
pub fn read_trials_csv(path: &Path) -> Result<Vec<TrialRow>, EmitError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize()
        .collect::<Result<Vec<TrialRow>, _>>()
        .map_err(csv_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(rows: &[(&str, u64)]) -> QuantileSummary {
        QuantileSummary {
            rows: rows
                .iter()
                .map(|&(p, n)| SummaryRow {
                    prior: p.into(),
                    n,
                    q05: 0.2,
                    q50: 0.5,
                    q95: 0.9,
                })
                .collect(),
        }
    }

    #[test]
    fn one_panel_one_band() {
        let svg = render_svg(&summary(&[("tree(a0=1)", 10)]));
        assert_eq!(svg.matches(r#"class="panel""#).count(), 1);
        assert_eq!(svg.matches(r#"class="band""#).count(), 1);
        assert_eq!(svg.matches("stroke-dasharray").count(), 1);
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn panels_per_prior() {
        let rows: Vec<(&str, u64)> = ["a", "b<c", "d", "e", "f"]
            .iter()
            .flat_map(|&p| [(p, 1), (p, 2), (p, 3)])
            .collect();
        let svg = render_svg(&summary(&rows));
        assert_eq!(svg.matches(r#"class="panel""#).count(), 5);
        assert!(svg.contains("b&lt;c"));
    }
}
