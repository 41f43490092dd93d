//! File writers: CSV with 17 significant digits, pretty JSON, SVG drawings.

use gelfand_core::geometry::ClosedCurve;
use gelfand_core::C64;
use serde::Serialize;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

/// `{:.16e}` keeps 17 significant digits, enough to round-trip any `f64`.
pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub struct Csv {
    text: String,
    width: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self { text: format!("{}\n", header.join(",")), width: header.len() }
    }

    pub fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.width);
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn numbers(&mut self, values: &[f64]) {
        let cells: Vec<String> = values.iter().map(|&v| float(v)).collect();
        self.row(&cells);
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        fs::write(path, &self.text)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

/// A drawing in domain coordinates; `y` points up.
pub struct Svg {
    bounds: [f64; 4],
    body: String,
}

impl Svg {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let pad = 0.03 * (x1 - x0).max(y1 - y0);
        Self { bounds: [x0 - pad, x1 + pad, y0 - pad, y1 + pad], body: String::new() }
    }

    pub fn closed_curve(&mut self, curve: &ClosedCurve, color: &str, width: f64) {
        let nodes = curve.nodes();
        let mut d = String::new();
        for (j, z) in nodes.iter().enumerate() {
            let _ = write!(d, "{}{:.6} {:.6} ", if j == 0 { "M" } else { "L" }, z.re, -z.im);
        }
        d.push('Z');
        let _ = writeln!(self.body, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="{:.4}"/>"#, width);
    }

    pub fn segments(&mut self, segs: &[(C64, C64)], color: &str, width: f64) {
        if segs.is_empty() {
            return;
        }
        let mut d = String::new();
        for (a, b) in segs {
            let _ = write!(d, "M{:.6} {:.6} L{:.6} {:.6} ", a.re, -a.im, b.re, -b.im);
        }
        let _ = writeln!(self.body, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="{:.4}"/>"#, d.trim_end(), width);
    }

    pub fn title(&mut self, text: &str) {
        let [x0, x1, _, y1] = self.bounds;
        let size = 0.035 * (x1 - x0);
        let _ = writeln!(self.body, r#"<text x="{:.6}" y="{:.6}" font-size="{size:.4}" font-family="sans-serif">{}</text>"#, x0, -y1 + size, escape(text));
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        let [x0, x1, y0, y1] = self.bounds;
        let text = format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{:.6} {:.6} {:.6} {:.6}\" width=\"640\" height=\"{:.0}\">\n<rect x=\"{:.6}\" y=\"{:.6}\" width=\"{:.6}\" height=\"{:.6}\" fill=\"white\"/>\n{}</svg>\n",
            x0,
            -y1,
            x1 - x0,
            y1 - y0,
            640.0 * (y1 - y0) / (x1 - x0),
            x0,
            -y1,
            x1 - x0,
            y1 - y0,
            self.body
        );
        fs::write(path, text)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Marching squares on a row-major grid (`values[i + nx·j]` at `(xs[i], ys[j])`); cells with a
/// missing corner are skipped.
pub fn contour(xs: &[f64], ys: &[f64], values: &[Option<f64>], level: f64) -> Vec<(C64, C64)> {
    let nx = xs.len();
    let mut out = Vec::new();
    for j in 0..ys.len().saturating_sub(1) {
        for i in 0..nx.saturating_sub(1) {
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let vals: Option<Vec<f64>> = corners.iter().map(|&(a, b)| values[a + nx * b]).collect();
            let Some(v) = vals else { continue };
            let p: Vec<C64> = corners.iter().map(|&(a, b)| C64::new(xs[a], ys[b])).collect();
            let edge = |k: usize| {
                let (a, b) = (k, (k + 1) % 4);
                let w = (level - v[a]) / (v[b] - v[a]);
                p[a] + (p[b] - p[a]) * w
            };
            let crossing: Vec<usize> = (0..4).filter(|&k| (v[k] > level) != (v[(k + 1) % 4] > level)).collect();
            match crossing.len() {
                2 => out.push((edge(crossing[0]), edge(crossing[1]))),
                4 => {
                    // saddle: pair edges according to the cell average
                    let centre_above = v.iter().sum::<f64>() / 4.0 > level;
                    if centre_above == (v[0] > level) {
                        out.push((edge(0), edge(3)));
                        out.push((edge(1), edge(2)));
                    } else {
                        out.push((edge(0), edge(1)));
                        out.push((edge(2), edge(3)));
                    }
                }
                _ => {}
            }
        }
    }
    out
}
