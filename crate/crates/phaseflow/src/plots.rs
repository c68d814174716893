//! SVG line plots of a run directory.
//!
//! Output is plain SVG text with a fixed layout and fixed number formatting,
//! so identical inputs give byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::{read_csv_columns, Snapshot};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 180.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

/// One curve of a line plot.
#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// A line plot description.
#[derive(Clone, Debug, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
    pub notes: Vec<String>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl LinePlot {
    fn transform(&self, v: f64) -> Option<f64> {
        if self.log_y {
            (v > 0.0 && v.is_finite()).then(|| v.log10())
        } else {
            v.is_finite().then_some(v)
        }
    }

    /// Renders the plot. Non-finite points (and non-positive ones on a log
    /// axis) are skipped.
    pub fn to_svg(&self) -> String {
        let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
        let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
        for s in &self.series {
            for (&x, &y) in s.x.iter().zip(&s.y) {
                if let (true, Some(ty)) = (x.is_finite(), self.transform(y)) {
                    xs = (xs.0.min(x), xs.1.max(x));
                    ys = (ys.0.min(ty), ys.1.max(ty));
                }
            }
        }
        if !xs.0.is_finite() {
            xs = (0.0, 1.0);
            ys = (0.0, 1.0);
        }
        if xs.1 - xs.0 <= 0.0 {
            xs = (xs.0 - 0.5, xs.1 + 0.5);
        }
        if ys.1 - ys.0 <= 1e-300 {
            let pad = if ys.0 == 0.0 { 1.0 } else { 0.5 * ys.0.abs() };
            ys = (ys.0 - pad, ys.1 + pad);
        }
        let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let px = |x: f64| MARGIN_LEFT + (x - xs.0) / (xs.1 - xs.0) * pw;
        let py = |y: f64| MARGIN_TOP + ph - (y - ys.0) / (ys.1 - ys.0) * ph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            MARGIN_LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for k in 0..=4 {
            let fx = xs.0 + (xs.1 - xs.0) * k as f64 / 4.0;
            let fy = ys.0 + (ys.1 - ys.0) * k as f64 / 4.0;
            let ylab = if self.log_y { format!("1e{fy:.1}") } else { format!("{fy:.3e}") };
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{fx:.3e}</text>"#,
                px(fx),
                MARGIN_TOP + ph + 18.0
            );
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{ylab}</text>"#, MARGIN_LEFT - 6.0, py(fy) + 4.0);
            let _ = writeln!(
                s,
                r##"<line x1="{MARGIN_LEFT}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#dddddd"/>"##,
                py(fy),
                MARGIN_LEFT + pw,
                py(fy)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            MARGIN_LEFT + pw / 2.0,
            HEIGHT - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            MARGIN_TOP + ph / 2.0,
            MARGIN_TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for (k, series) in self.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let mut pts = String::new();
            for (&x, &y) in series.x.iter().zip(&series.y) {
                if let (true, Some(ty)) = (x.is_finite(), self.transform(y)) {
                    let _ = write!(pts, "{:.2},{:.2} ", px(x), py(ty));
                }
            }
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.trim_end()
            );
            let ly = MARGIN_TOP + 14.0 + 16.0 * k as f64;
            let lx = MARGIN_LEFT + pw + 10.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/>"#,
                ly - 4.0,
                lx + 18.0,
                ly - 4.0
            );
            let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#, lx + 22.0, escape(&series.label));
        }
        for (k, note) in self.notes.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-size="11">{}</text>"#,
                MARGIN_LEFT + 6.0,
                MARGIN_TOP + 14.0 + 14.0 * k as f64,
                escape(note)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn column<'a>(header: &[String], cols: &'a [Vec<f64>], name: &str) -> Option<&'a Vec<f64>> {
    header.iter().position(|h| h == name).map(|i| &cols[i])
}

fn snapshot_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let snaps = dir.join("snapshots");
    if !snaps.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(&snaps)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bps"))
        .collect();
    files.sort();
    Ok(files)
}

/// `epsilon` recorded in `summary.json`, if present.
fn run_epsilon(dir: &Path) -> Option<f64> {
    let text = std::fs::read_to_string(dir.join("summary.json")).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v.get("epsilon")?.as_f64()
}

/// Writes the SVG plots of a run directory into `<dir>/plots` and returns their paths.
///
/// Field plots need `snapshots/*.bps`; history plots need `diagnostics.csv`
/// and `iterations.csv`. A directory with none of them is an error.
pub fn emit_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let out_dir = dir.join("plots");
    let mut plots: Vec<(String, LinePlot)> = Vec::new();

    let snaps = snapshot_files(dir)?;
    if !snaps.is_empty() {
        let mut plot = LinePlot {
            title: "interface height h(x1, t)".into(),
            x_label: "x1".into(),
            y_label: "h".into(),
            ..LinePlot::default()
        };
        let mut h_max = 0.0f64;
        let stride = snaps.len().div_ceil(8).max(1);
        for (k, path) in snaps.iter().enumerate() {
            let snap = Snapshot::read_binary(path)?;
            h_max = h_max.max(snap.state.h.data.iter().fold(0.0, |a, v| a.max(v.abs())));
            if k % stride != 0 && k + 1 != snaps.len() {
                continue;
            }
            // First tangential line only (x2 = 0 in three dimensions).
            let n = snap.m_tan;
            let dx = snap.l_tan / n as f64;
            plot.series.push(Series {
                label: format!("t = {:.4}", snap.state.t),
                x: (0..n).map(|i| i as f64 * dx).collect(),
                y: snap.state.h.data[..n].to_vec(),
            });
        }
        plot.notes.push(format!("max |h| = {h_max:.4e}"));
        if let Some(eps) = run_epsilon(dir).filter(|e| *e > 0.0) {
            let verdict = if h_max <= 2.0 * eps { "within" } else { "exceeds" };
            plot.notes.push(format!("2 epsilon = {:.4e} ({verdict})", 2.0 * eps));
        }
        plots.push(("h_evolution.svg".into(), plot));
    }

    let diag = dir.join("diagnostics.csv");
    if diag.is_file() && std::fs::metadata(&diag)?.len() > 0 {
        let (hdr, cols) = read_csv_columns(&diag)?;
        let t = column(&hdr, &cols, "t").ok_or_else(|| Error::Format("diagnostics.csv has no t column".into()))?;
        let mut norms = LinePlot {
            title: "deviation from the rest state".into(),
            x_label: "t".into(),
            y_label: "L2 norm".into(),
            log_y: true,
            ..LinePlot::default()
        };
        let mut jumps = LinePlot {
            title: "interface condition residuals (sup)".into(),
            x_label: "t".into(),
            y_label: "residual".into(),
            log_y: true,
            ..LinePlot::default()
        };
        for (name, col) in hdr.iter().zip(&cols) {
            if let Some(label) = name.strip_prefix("dev_") {
                norms.series.push(Series { label: label.into(), x: t.clone(), y: col.clone() });
            }
            if let Some(label) = name.strip_prefix("jump_") {
                jumps.series.push(Series { label: label.into(), x: t.clone(), y: col.clone() });
            }
        }
        if norms.series.iter().all(|s| s.y.iter().all(|v| *v <= 0.0)) {
            norms.log_y = false;
            norms.notes.push("all deviations are zero".into());
        }
        if jumps.series.iter().all(|s| s.y.iter().all(|v| *v <= 0.0)) {
            jumps.log_y = false;
            jumps.notes.push("all residuals are zero".into());
        }
        plots.push(("norms.svg".into(), norms));
        plots.push(("residuals.svg".into(), jumps));
    }

    let iters = dir.join("iterations.csv");
    if iters.is_file() {
        let (hdr, cols) = read_csv_columns(&iters)?;
        if let (Some(ratio), Some(change)) = (column(&hdr, &cols, "ratio"), column(&hdr, &cols, "change")) {
            let idx: Vec<f64> = (1..=ratio.len()).map(|i| i as f64).collect();
            let mut p = LinePlot {
                title: "Picard contraction".into(),
                x_label: "iteration (cumulative)".into(),
                y_label: "value".into(),
                log_y: true,
                ..LinePlot::default()
            };
            p.series.push(Series { label: "ratio".into(), x: idx.clone(), y: ratio.clone() });
            p.series.push(Series { label: "change".into(), x: idx, y: change.clone() });
            plots.push(("contraction.svg".into(), p));
        }
    }

    if plots.is_empty() {
        return Err(Error::Format(format!(
            "{} has no snapshots, diagnostics.csv or iterations.csv to plot",
            dir.display()
        )));
    }
    std::fs::create_dir_all(&out_dir)?;
    let mut written = Vec::new();
    for (name, plot) in plots {
        let path = out_dir.join(name);
        std::fs::write(&path, plot.to_svg())?;
        written.push(path);
    }
    Ok(written)
}
