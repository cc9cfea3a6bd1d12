//! Ensemble artifacts: CSV series, metrics sidecar, and a four-panel SVG.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{EnsembleResult, SeriesStats};

pub const CSV_HEADER: &str = "day,S_mean,S_lo,S_hi,I_mean,I_lo,I_hi,R_mean,R_lo,R_hi,beta_mean,beta_lo,beta_hi,xi_mean,xi_lo,xi_hi,Rt_mean,Rt_lo,Rt_hi,RtSt_mean,RtSt_lo,RtSt_hi";

/// Reproducibility information attached to the metrics sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsSidecar {
    pub seed: u64,
    pub n_paths: usize,
    /// Fingerprint of the generating grid, absent for grid-free policies.
    pub grid_fingerprint: Option<String>,
    pub xi_eps: f64,
    pub metrics: crate::sim::ScalarMetrics,
}

/// Floats are written with 9 significant digits.
fn fmt9(v: f64) -> String {
    format!("{v:.8e}")
}

/// Files produced by one export.
#[derive(Debug, Clone)]
pub struct ExportedFiles {
    pub csv: PathBuf,
    pub metrics: PathBuf,
    pub svg: PathBuf,
}

/// Writes `<stem>.csv`, `<stem>.metrics.json` and `<stem>.svg`.
pub fn export_ensemble(
    e: &EnsembleResult,
    stem: &Path,
    xi_eps: f64,
    grid_fingerprint: Option<u64>,
) -> Result<ExportedFiles> {
    let csv = stem.with_extension("csv");
    let metrics = stem.with_extension("metrics.json");
    let svg = stem.with_extension("svg");

    fs::write(&csv, ensemble_csv(e))?;
    let sidecar = MetricsSidecar {
        seed: e.seed,
        n_paths: e.n_paths,
        grid_fingerprint: grid_fingerprint.map(|fp| format!("{fp:016x}")),
        xi_eps,
        metrics: e.metrics.clone(),
    };
    fs::write(&metrics, serde_json::to_string_pretty(&sidecar)?)?;
    fs::write(&svg, ensemble_svg(e))?;
    Ok(ExportedFiles { csv, metrics, svg })
}

pub fn ensemble_csv(e: &EnsembleResult) -> String {
    let mut out = String::with_capacity(64 * e.times.len());
    out.push_str(CSV_HEADER);
    out.push('\n');
    let series = [&e.s, &e.i, &e.r, &e.beta, &e.xi, &e.rt, &e.rtst];
    for idx in 0..e.times.len() {
        let _ = write!(out, "{}", e.times[idx]);
        for stats in series {
            let _ = write!(
                out,
                ",{},{},{}",
                fmt9(stats.mean[idx]),
                fmt9(stats.lo[idx]),
                fmt9(stats.hi[idx])
            );
        }
        out.push('\n');
    }
    out
}

/// Parsed CSV content: day stamps plus the seven `(mean, lo, hi)` series in
/// header order.
pub fn parse_ensemble_csv(text: &str) -> Result<(Vec<f64>, Vec<SeriesStats>)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::GridFormat("empty csv".into()))?;
    if header != CSV_HEADER {
        return Err(Error::GridFormat("unexpected csv header".into()));
    }
    let mut times = Vec::new();
    let mut series: Vec<SeriesStats> = (0..7)
        .map(|_| SeriesStats {
            mean: Vec::new(),
            lo: Vec::new(),
            hi: Vec::new(),
        })
        .collect();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 22 {
            return Err(Error::GridFormat(format!(
                "expected 22 cells, found {}",
                cells.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::GridFormat(format!("bad float {s:?}")))
        };
        times.push(parse(cells[0])?);
        for (sidx, stats) in series.iter_mut().enumerate() {
            stats.mean.push(parse(cells[1 + 3 * sidx])?);
            stats.lo.push(parse(cells[2 + 3 * sidx])?);
            stats.hi.push(parse(cells[3 + 3 * sidx])?);
        }
    }
    Ok((times, series))
}

const PANEL_W: f64 = 460.0;
const PANEL_H: f64 = 320.0;
const MARGIN: f64 = 52.0;

struct Panel<'a> {
    title: &'a str,
    curves: Vec<(&'a str, &'a str, &'a SeriesStats)>,
    hline: Option<f64>,
}

/// Four panels matching the experiment figures: effort, reproduction number,
/// compartments, and the herd-immunity product, each with mean line and
/// shaded 95% band.
pub fn ensemble_svg(e: &EnsembleResult) -> String {
    let panels = [
        Panel {
            title: "lockdown effort ξ",
            curves: vec![("xi", "#7a3db8", &e.xi)],
            hline: None,
        },
        Panel {
            title: "reproduction number R_t",
            curves: vec![("Rt", "#b8860b", &e.rt)],
            hline: Some(1.0),
        },
        Panel {
            title: "S / I / R",
            curves: vec![
                ("S", "#1f5fbf", &e.s),
                ("I", "#c22f2f", &e.i),
                ("R", "#2e8b57", &e.r),
            ],
            hline: None,
        },
        Panel {
            title: "R_t · S_t",
            curves: vec![("RtSt", "#444444", &e.rtst)],
            hline: Some(1.0),
        },
    ];

    let width = 2.0 * PANEL_W + 3.0 * MARGIN;
    let height = 2.0 * PANEL_H + 3.0 * MARGIN;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        svg,
        "<!-- seed={} n_paths={} -->",
        e.seed, e.n_paths
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);

    let t0 = *e.times.first().unwrap_or(&0.0);
    let t1 = *e.times.last().unwrap_or(&1.0);
    for (pidx, panel) in panels.iter().enumerate() {
        let ox = MARGIN + (pidx % 2) as f64 * (PANEL_W + MARGIN);
        let oy = MARGIN + (pidx / 2) as f64 * (PANEL_H + MARGIN);
        let mut ymin = f64::INFINITY;
        let mut ymax = f64::NEG_INFINITY;
        for (_, _, stats) in &panel.curves {
            for idx in 0..e.times.len() {
                ymin = ymin.min(stats.lo[idx]);
                ymax = ymax.max(stats.hi[idx]);
            }
        }
        if let Some(h) = panel.hline {
            ymin = ymin.min(h);
            ymax = ymax.max(h);
        }
        ymin = ymin.min(0.0);
        if !(ymax > ymin) {
            ymax = ymin + 1.0;
        }
        let pad = 0.05 * (ymax - ymin);
        let (ylo, yhi) = (ymin - pad, ymax + pad);
        let sx = |t: f64| ox + (t - t0) / (t1 - t0).max(1e-12) * PANEL_W;
        let sy = |v: f64| oy + PANEL_H - (v - ylo) / (yhi - ylo) * PANEL_H;

        let _ = writeln!(svg, r#"<g class="panel">"#);
        let _ = writeln!(
            svg,
            r##"<rect x="{ox}" y="{oy}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#999"/>"##
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="15" font-family="sans-serif">{}</text>"#,
            ox,
            oy - 10.0,
            panel.title
        );
        // x ticks every ~quarter of the horizon
        for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let t = t0 + frac * (t1 - t0);
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" font-size="11" font-family="sans-serif" text-anchor="middle">{:.0}</text>"#,
                sx(t),
                oy + PANEL_H + 16.0,
                t
            );
        }
        for frac in [0.0, 0.5, 1.0] {
            let v = ylo + frac * (yhi - ylo);
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" font-size="11" font-family="sans-serif" text-anchor="end">{:.3}</text>"#,
                ox - 6.0,
                sy(v) + 4.0,
                v
            );
        }
        if let Some(h) = panel.hline {
            let _ = writeln!(
                svg,
                r##"<line x1="{ox}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#aaa" stroke-dasharray="5,4"/>"##,
                sy(h),
                ox + PANEL_W,
                sy(h)
            );
        }
        for (name, color, stats) in &panel.curves {
            // shaded band: upper edge forward, lower edge backward
            let mut band = String::new();
            for idx in 0..e.times.len() {
                let _ = write!(band, "{:.2},{:.2} ", sx(e.times[idx]), sy(stats.hi[idx]));
            }
            for idx in (0..e.times.len()).rev() {
                let _ = write!(band, "{:.2},{:.2} ", sx(e.times[idx]), sy(stats.lo[idx]));
            }
            let _ = writeln!(
                svg,
                r#"<polygon class="band-{name}" points="{}" fill="{color}" opacity="0.18"/>"#,
                band.trim_end()
            );
            let mut line = String::new();
            for idx in 0..e.times.len() {
                let _ = write!(line, "{:.2},{:.2} ", sx(e.times[idx]), sy(stats.mean[idx]));
            }
            let _ = writeln!(
                svg,
                r#"<polyline class="mean-{name}" points="{}" fill="none" stroke="{color}" stroke-width="1.6"/>"#,
                line.trim_end()
            );
        }
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    svg
}
