//! Deterministic CSV and SVG output.
//!
//! CSV: comma-separated, one header row, reals at 17 significant digits, LF
//! endings. SVG: hand-rolled log-log line plots with slope guides, stable
//! down to the byte for identical inputs.

use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("column '{0}' missing from CSV")]
    MissingColumn(String),
    #[error("CSV parse error at line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

/// A real at full round-trip precision.
pub fn fmt_real(x: f64) -> String {
    format!("{:.16e}", x)
}

/// One table with a fixed header; rows are formatted strings so callers
/// control types per column.
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        CsvTable {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width mismatch");
        self.rows.push(row);
    }

    pub fn to_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), ReportError> {
        std::fs::write(path, self.to_string()).map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ReportError> {
        let mut lines = text.lines().enumerate();
        let (_, head) = lines.next().ok_or(ReportError::Csv {
            line: 1,
            msg: "empty file".into(),
        })?;
        let header: Vec<String> = head.split(',').map(|s| s.to_string()).collect();
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let row: Vec<String> = line.split(',').map(|s| s.to_string()).collect();
            if row.len() != header.len() {
                return Err(ReportError::Csv {
                    line: i + 1,
                    msg: format!("expected {} fields, got {}", header.len(), row.len()),
                });
            }
            rows.push(row);
        }
        Ok(CsvTable { header, rows })
    }

    pub fn column_index(&self, name: &str) -> Result<usize, ReportError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ReportError::MissingColumn(name.into()))
    }

    /// Numeric column by name; non-numeric entries become NaN.
    pub fn column(&self, name: &str) -> Result<Vec<f64>, ReportError> {
        let idx = self.column_index(name)?;
        Ok(self
            .rows
            .iter()
            .map(|r| r[idx].parse().unwrap_or(f64::NAN))
            .collect())
    }
}

/// FNV-1a over the bit patterns of the parameters; stable fingerprint for
/// provenance columns.
pub fn model_hash(params: impl IntoIterator<Item = f64>) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for x in params {
        for b in x.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// One curve of a plot: points are (x, y) pairs, already positive for
/// log axes; non-finite or nonpositive points are dropped.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Plot layout: log-log by default with reference slope guides.
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Slopes of dashed reference guides (e.g. 1..=4 for integrator orders).
    pub guides: Vec<i32>,
}

impl PlotSpec {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        PlotSpec {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            guides: vec![1, 2, 3, 4],
        }
    }
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const ML: f64 = 70.0;
const MR: f64 = 140.0;
const MT: f64 = 40.0;
const MB: f64 = 50.0;

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Render a log-log line plot. Empty input still yields a valid SVG with
/// axes and labels so downstream tooling never sees a broken file.
pub fn render_loglog(spec: &PlotSpec, series: &[Series]) -> String {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
        .collect();

    // Data ranges in log10, padded; fall back to fixed decades when empty.
    let (lx0, lx1, ly0, ly1) = if pts.is_empty() {
        (-3.0, 0.0, -6.0, 0.0)
    } else {
        let lx: Vec<f64> = pts.iter().map(|(x, _)| x.log10()).collect();
        let ly: Vec<f64> = pts.iter().map(|(_, y)| y.log10()).collect();
        let (mut a, mut b) = (
            lx.iter().cloned().fold(f64::INFINITY, f64::min),
            lx.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        let (mut c, mut d) = (
            ly.iter().cloned().fold(f64::INFINITY, f64::min),
            ly.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        if b - a < 1e-9 {
            a -= 0.5;
            b += 0.5;
        }
        if d - c < 1e-9 {
            c -= 0.5;
            d += 0.5;
        }
        let padx = 0.05 * (b - a);
        let pady = 0.05 * (d - c);
        (a - padx, b + padx, c - pady, d + pady)
    };

    let sx = (W - ML - MR) / (lx1 - lx0);
    let sy = (H - MT - MB) / (ly1 - ly0);
    let px = |x: f64| ML + (x.log10() - lx0) * sx;
    let py = |y: f64| H - MB - (y.log10() - ly0) * sy;

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    );
    let _ = write!(svg, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n");
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        ML + (W - ML - MR) / 2.0,
        xml_escape(&spec.title)
    );

    // Axes box and decade ticks.
    let _ = write!(
        svg,
        "<rect x=\"{ML}\" y=\"{MT}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        W - ML - MR,
        H - MT - MB
    );
    for e in (lx0.ceil() as i64)..=(lx1.floor() as i64) {
        let x = ML + (e as f64 - lx0) * sx;
        let _ = write!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{MT}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"#dddddd\"/>\n",
            H - MB
        );
        let _ = write!(
            svg,
            "<text x=\"{x:.2}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">1e{e}</text>\n",
            H - MB + 16.0
        );
    }
    for e in (ly0.ceil() as i64)..=(ly1.floor() as i64) {
        let y = H - MB - (e as f64 - ly0) * sy;
        let _ = write!(
            svg,
            "<line x1=\"{ML}\" y1=\"{y:.2}\" x2=\"{}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>\n",
            W - MR
        );
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">1e{e}</text>\n",
            ML - 6.0,
            y + 4.0
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
        ML + (W - ML - MR) / 2.0,
        H - 10.0,
        xml_escape(&spec.x_label)
    );
    let _ = write!(
        svg,
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        MT + (H - MT - MB) / 2.0,
        MT + (H - MT - MB) / 2.0,
        xml_escape(&spec.y_label)
    );

    // Slope guides anchored at the lower-right data corner: y = C x^k drawn
    // over one decade of x, so an order-k guide spans k decades of y.
    if !pts.is_empty() {
        for (gi, &k) in spec.guides.iter().enumerate() {
            let gx1 = lx1 - 0.08 * (lx1 - lx0);
            let gx0 = gx1 - 1.0;
            let gy0 = ly0 + 0.08 * (ly1 - ly0);
            let gy1 = gy0 + k as f64;
            if gx0 < lx0 || gy1 > ly1 {
                continue;
            }
            let (x0, y0) = (ML + (gx0 - lx0) * sx, H - MB - (gy0 - ly0) * sy);
            let (x1, y1) = (ML + (gx1 - lx0) * sx, H - MB - (gy1 - ly0) * sy);
            let _ = write!(
                svg,
                "<line x1=\"{x0:.2}\" y1=\"{y1:.2}\" x2=\"{x1:.2}\" y2=\"{y0:.2}\" stroke=\"#888888\" stroke-dasharray=\"5,4\"/>\n"
            );
            let _ = write!(
                svg,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#888888\">order {k}</text>\n",
                x1 + 3.0,
                y0 - 2.0 - 12.0 * gi as f64
            );
        }
    }

    for (si, s) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let pts: Vec<(f64, f64)> = s
            .points
            .iter()
            .copied()
            .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
            .collect();
        if !pts.is_empty() {
            let coords: Vec<String> = pts
                .iter()
                .map(|&(x, y)| format!("{:.3},{:.3}", px(x), py(y)))
                .collect();
            let _ = write!(
                svg,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                coords.join(" ")
            );
            for &(x, y) in &pts {
                let _ = write!(
                    svg,
                    "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"2.5\" fill=\"{color}\"/>\n",
                    px(x),
                    py(y)
                );
            }
        }
        // Legend entry, drawn even for empty series so the reader sees what
        // was requested.
        let ly = MT + 14.0 + 18.0 * si as f64;
        let _ = write!(
            svg,
            "<line x1=\"{}\" y1=\"{ly:.2}\" x2=\"{}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            W - MR + 8.0,
            W - MR + 28.0
        );
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            W - MR + 33.0,
            ly + 4.0,
            xml_escape(&s.label)
        );
    }

    svg.push_str("</svg>\n");
    svg
}

/// Build the plot from a CSV: `x_col` against `y_col`, one series per
/// distinct value of `group_col` (or a single series when `group_col` is
/// None). Rows whose y is missing or non-numeric are skipped.
pub fn plot_csv(
    table: &CsvTable,
    x_col: &str,
    y_col: &str,
    group_col: Option<&str>,
    spec: &PlotSpec,
) -> Result<String, ReportError> {
    let xi = table.column_index(x_col)?;
    let yi = table.column_index(y_col)?;
    let gi = group_col.map(|g| table.column_index(g)).transpose()?;

    let mut groups: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for row in &table.rows {
        let x: f64 = row[xi].parse().unwrap_or(f64::NAN);
        let y: f64 = row[yi].parse().unwrap_or(f64::NAN);
        let key = match gi {
            Some(g) => format!("{}={}", group_col.unwrap(), compact_real(&row[g])),
            None => y_col.to_string(),
        };
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push((x, y)),
            None => groups.push((key, vec![(x, y)])),
        }
    }
    let series: Vec<Series> = groups
        .into_iter()
        .map(|(label, points)| Series { label, points })
        .collect();
    Ok(render_loglog(spec, &series))
}

pub fn write_svg(path: &Path, svg: &str) -> Result<(), ReportError> {
    std::fs::write(path, svg).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Shorten full-precision reals for legend labels.
fn compact_real(s: &str) -> String {
    match s.parse::<f64>() {
        Ok(v) => format!("{v:.0e}"),
        Err(_) => s.to_string(),
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
