//! Minimal SVG rendering of heatmaps and line plots. CSV exports carry the
//! numbers; these files are for looking at.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{ExperimentError, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 110.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Blue to yellow ramp for `t` in [0, 1].
fn colormap(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let stops = [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];
    let x = t * (stops.len() - 1) as f64;
    let i = (x.floor() as usize).min(stops.len() - 2);
    let f = x - i as f64;
    let lerp = |a: f64, b: f64| (a + (b - a) * f).round() as u8;
    let (a, b) = (stops[i], stops[i + 1]);
    format!("#{:02x}{:02x}{:02x}", lerp(a.0, b.0), lerp(a.1, b.1), lerp(a.2, b.2))
}

fn finish(path: &Path, body: String) -> Result<()> {
    let doc = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    );
    std::fs::write(path, doc).map_err(|e| ExperimentError::io(path, e))
}

fn title(out: &mut String, text: &str) {
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
        WIDTH / 2.0,
        escape(text)
    );
}

fn finite_range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo > hi {
        None
    } else if lo == hi {
        Some((lo - 0.5, hi + 0.5))
    } else {
        Some((lo, hi))
    }
}

/// Cell grid; `None` cells are drawn grey. Rows are listed top to bottom.
pub fn heatmap(
    path: &Path,
    title_text: &str,
    row_labels: &[String],
    col_labels: &[String],
    values: &[Vec<Option<f64>>],
) -> Result<()> {
    let mut out = String::new();
    title(&mut out, title_text);
    let (nr, nc) = (row_labels.len().max(1), col_labels.len().max(1));
    let cw = (WIDTH - MARGIN_L - MARGIN_R) / nc as f64;
    let ch = (HEIGHT - MARGIN_T - MARGIN_B) / nr as f64;
    let range = finite_range(values.iter().flatten().flatten().copied());
    for (i, row) in values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let fill = match (v, range) {
                (Some(v), Some((lo, hi))) if v.is_finite() => colormap((v - lo) / (hi - lo)),
                _ => "#cccccc".into(),
            };
            let _ = writeln!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{fill}\"/>",
                MARGIN_L + j as f64 * cw,
                MARGIN_T + i as f64 * ch,
                cw + 0.05,
                ch + 0.05
            );
        }
    }
    let label_every = |n: usize| n.div_ceil(20).max(1);
    for (i, l) in row_labels.iter().enumerate().step_by(label_every(nr)) {
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" dominant-baseline=\"middle\">{}</text>",
            MARGIN_L - 4.0,
            MARGIN_T + (i as f64 + 0.5) * ch,
            escape(l)
        );
    }
    for (j, l) in col_labels.iter().enumerate().step_by(label_every(nc)) {
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            MARGIN_L + (j as f64 + 0.5) * cw,
            HEIGHT - MARGIN_B + 16.0,
            escape(l)
        );
    }
    if let Some((lo, hi)) = range {
        let x = WIDTH - MARGIN_R + 20.0;
        let h = HEIGHT - MARGIN_T - MARGIN_B;
        for k in 0..50 {
            let t = 1.0 - k as f64 / 49.0;
            let _ = writeln!(
                out,
                "<rect x=\"{x}\" y=\"{:.2}\" width=\"16\" height=\"{:.2}\" fill=\"{}\"/>",
                MARGIN_T + k as f64 * h / 50.0,
                h / 50.0 + 0.05,
                colormap(t)
            );
        }
        let _ = writeln!(out, "<text x=\"{}\" y=\"{}\">{hi:.4}</text>", x + 20.0, MARGIN_T + 8.0);
        let _ = writeln!(out, "<text x=\"{}\" y=\"{}\">{lo:.4}</text>", x + 20.0, MARGIN_T + h);
    }
    finish(path, out)
}

/// One polyline per series; non-finite points break the line.
pub fn line_plot(path: &Path, title_text: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> Result<()> {
    let mut out = String::new();
    title(&mut out, title_text);
    let pts = || series.iter().flat_map(|(_, s)| s.iter());
    let (x0, x1) = finite_range(pts().map(|p| p.0)).unwrap_or((0.0, 1.0));
    let (y0, y1) = finite_range(pts().map(|p| p.1)).unwrap_or((0.0, 1.0));
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_T + (1.0 - (y - y0) / (y1 - y0)) * ph;
    let _ = writeln!(
        out,
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>"
    );
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            sx(xv),
            HEIGHT - MARGIN_B + 16.0,
            format_tick(xv)
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" dominant-baseline=\"middle\">{}</text>",
            MARGIN_L - 4.0,
            sy(yv),
            format_tick(yv)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
        MARGIN_L + pw / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text transform=\"translate(14,{:.2}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
        MARGIN_T + ph / 2.0,
        escape(y_label)
    );
    for (k, (name, s)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut segment = Vec::new();
        let flush = |seg: &mut Vec<String>, out: &mut String| {
            if seg.len() > 1 {
                let _ = writeln!(
                    out,
                    "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
                    seg.join(" ")
                );
            }
            seg.clear();
        };
        for &(x, y) in s {
            if x.is_finite() && y.is_finite() {
                segment.push(format!("{:.2},{:.2}", sx(x), sy(y)));
            } else {
                flush(&mut segment, &mut out);
            }
        }
        flush(&mut segment, &mut out);
        let ly = MARGIN_T + 12.0 + 16.0 * k as f64;
        let lx = WIDTH - MARGIN_R + 10.0;
        let _ = writeln!(
            out,
            "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{}\" y=\"{}\">{}</text>",
            lx + 16.0,
            lx + 20.0,
            ly + 4.0,
            escape(name)
        );
    }
    finish(path, out)
}

fn format_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}
