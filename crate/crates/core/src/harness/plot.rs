use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{HarnessError, Record, RunResult};

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 240.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Series {
    label: String,
    color: &'static str,
    dashed: bool,
    points: Vec<(f64, f64)>,
}

struct Panel {
    title: String,
    ylabel: String,
    series: Vec<Series>,
    /// Horizontal reference lines.
    hlines: Vec<f64>,
}

fn bounds(panel: &Panel) -> (f64, f64, f64, f64) {
    let pts = panel.series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    for &h in &panel.hlines {
        y0 = y0.min(h);
        y1 = y1.max(h);
    }
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if !y0.is_finite() {
        (y0, y1) = (-1.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(1e-6);
    (x0, x1, y0 - pad, y1 + pad)
}

fn render_panel(out: &mut String, panel: &Panel, top: f64) {
    let (x0, x1, y0, y1) = bounds(panel);
    let w = WIDTH - 2.0 * MARGIN;
    let h = PANEL_HEIGHT - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * w;
    let sy = |y: f64| top + MARGIN + (y1 - y) / (y1 - y0) * h;
    let _ = writeln!(out, r#"<g class="panel">"#);
    let _ = writeln!(
        out,
        r##"<rect x="{MARGIN}" y="{:.2}" width="{w}" height="{h}" fill="none" stroke="#444"/>"##,
        top + MARGIN
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        top + MARGIN - 12.0,
        panel.title
    );
    let _ = writeln!(
        out,
        r#"<text x="12" y="{:.2}" font-size="12" transform="rotate(-90 12 {:.2})" text-anchor="middle">{}</text>"#,
        top + PANEL_HEIGHT / 2.0,
        top + PANEL_HEIGHT / 2.0,
        panel.ylabel
    );
    for (label, v) in [(format!("{y0:.3}"), y0), (format!("{y1:.3}"), y1)] {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{label}</text>"#,
            MARGIN - 4.0,
            sy(v) + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">t = {x1:.1} s</text>"#,
        MARGIN + w,
        top + PANEL_HEIGHT - MARGIN + 14.0
    );
    for &hl in &panel.hlines {
        let _ = writeln!(
            out,
            r##"<line class="limit" data-y="{hl}" x1="{MARGIN}" x2="{:.2}" y1="{:.2}" y2="{:.2}" stroke="#000" stroke-dasharray="6 4"/>"##,
            MARGIN + w,
            sy(hl),
            sy(hl)
        );
    }
    for (i, s) in panel.series.iter().enumerate() {
        let mut pts = String::new();
        for &(x, y) in s.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            let _ = write!(pts, "{:.2},{:.2} ", sx(x), sy(y));
        }
        let dash = if s.dashed { r#" stroke-dasharray="3 3""# } else { "" };
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.4"{dash} points="{}"/>"#,
            s.color,
            pts.trim_end()
        );
        let ly = top + MARGIN + 14.0 + 14.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{ly:.2}" font-size="11" fill="{}">{}</text>"#,
            MARGIN + 8.0,
            s.color,
            s.label
        );
    }
    let _ = writeln!(out, "</g>");
}

fn write_svg(path: &Path, panels: &[Panel]) -> Result<(), HarnessError> {
    let height = PANEL_HEIGHT * panels.len() as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        render_panel(&mut out, p, PANEL_HEIGHT * i as f64);
    }
    out.push_str("</svg>\n");
    std::fs::write(path, out).map_err(|e| HarnessError::io(path, e))
}

fn series(records: &[Record], label: &str, color: &'static str, dashed: bool, f: impl Fn(&Record) -> f64) -> Series {
    Series {
        label: label.to_owned(),
        color,
        dashed,
        points: records.iter().map(|r| (r.t, f(r))).collect(),
    }
}

fn position_panel(runs: &[(String, &[Record])], limit: f64) -> Panel {
    Panel {
        title: "position".into(),
        ylabel: "p [m]".into(),
        series: runs
            .iter()
            .enumerate()
            .map(|(i, (name, r))| series(r, name, COLORS[i % COLORS.len()], false, |r| r.state[0]))
            .collect(),
        hlines: vec![limit, -limit],
    }
}

fn barrier_panel(runs: &[(String, &[Record])]) -> Panel {
    Panel {
        title: "safety function".into(),
        ylabel: "h".into(),
        series: runs
            .iter()
            .enumerate()
            .map(|(i, (name, r))| series(r, name, COLORS[i % COLORS.len()], false, |r| r.h))
            .collect(),
        hlines: vec![0.0],
    }
}

/// Position, safety function and input plots for one run.
pub fn emit_plots(result: &RunResult, dir: &Path, limit: f64) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let name = result.scenario.variant.name().to_owned();
    let runs = [(name, result.records.as_slice())];
    let input = Panel {
        title: "input".into(),
        ylabel: "u [N m]".into(),
        series: vec![
            series(&result.records, "desired", COLORS[1], true, |r| r.u_des[0]),
            series(&result.records, "applied", COLORS[0], false, |r| r.u_applied[0]),
        ],
        hlines: Vec::new(),
    };
    let files = [
        ("position.svg", position_panel(&runs, limit)),
        ("barrier.svg", barrier_panel(&runs)),
        ("input.svg", input),
    ];
    let mut written = Vec::new();
    for (file, panel) in files {
        let path = dir.join(file);
        write_svg(&path, &[panel])?;
        written.push(path);
    }
    Ok(written)
}

/// All runs overlaid in one file: position, safety function and applied input panels.
pub fn emit_overlay(runs: &[(String, &[Record])], path: &Path, limit: f64) -> Result<(), HarnessError> {
    let input = Panel {
        title: "applied input".into(),
        ylabel: "u [N m]".into(),
        series: runs
            .iter()
            .enumerate()
            .map(|(i, (name, r))| series(r, name, COLORS[i % COLORS.len()], false, |r| r.u_applied[0]))
            .collect(),
        hlines: Vec::new(),
    };
    write_svg(path, &[position_panel(runs, limit), barrier_panel(runs), input])
}
