//! CSV tables, SVG line charts and the plain-text study summary.
//!
//! Everything here is a pure function of its inputs: no clocks, no hash
//! ordering, fixed chart geometry.
//!
//! CSV schemas:
//!
//! | kind    | columns                                                   |
//! |---------|-----------------------------------------------------------|
//! | metrics | run_id, noise_rate, metric, epoch, train, heldout         |
//! | scores  | run_id, noise_rate, split, rank, score                    |
//! | csr     | run_id, noise_rate, epoch, test_size, critical, ratio, queries |
//!
//! Reals are written with 9 significant digits. A metric that has no
//! value for a split leaves the cell empty.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::csr::CsrReport;
use crate::metrics::{MetricSeries, ScoreCurve};
use crate::telemetry::Split;

const SIG_DIGITS: usize = 9;
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_X: f64 = WIDTH * 0.1;
const MARGIN_Y: f64 = HEIGHT * 0.1;
pub const MAX_SERIES: usize = 10;
const PALETTE: [&str; 5] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e"];

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("chart has {0} series, at most {MAX_SERIES} fit")]
    TooManySeries(usize),
    #[error("nothing to plot")]
    EmptyInput,
    #[error("study has no run at noise rate {0}")]
    MissingRun(f64),
    #[error("malformed table: {0}")]
    Malformed(String),
}

/// `x` with 9 significant digits, positional notation for magnitudes
/// below 1e9.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", SIG_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-(SIG_DIGITS as i32)..SIG_DIGITS as i32).contains(&exp) {
        return sci;
    }
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let mut out = String::new();
    if negative {
        out.push('-');
    }
    if exp >= 0 {
        let int_len = exp as usize + 1;
        out.push_str(&digits[..int_len]);
        if int_len < digits.len() {
            out.push('.');
            out.push_str(&digits[int_len..]);
        }
    } else {
        out.push_str("0.");
        out.extend(std::iter::repeat_n('0', (-exp - 1) as usize));
        out.push_str(&digits);
    }
    out
}

/// One row group of a CSV artifact.
pub trait CsvTable {
    fn header() -> &'static [&'static str];
    /// `(noise_rate, epoch, row)` triples.
    fn rows(&self) -> Vec<(f64, usize, Vec<String>)>;
}

impl CsvTable for MetricSeries {
    fn header() -> &'static [&'static str] {
        &["run_id", "noise_rate", "metric", "epoch", "train", "heldout"]
    }

    fn rows(&self) -> Vec<(f64, usize, Vec<String>)> {
        let cell = |v: Option<&f64>| v.map(|x| format_sig(*x)).unwrap_or_default();
        (0..self.train.len().max(self.heldout.len()))
            .map(|e| {
                (
                    self.noise_rate,
                    e,
                    vec![
                        self.run_id.clone(),
                        format_sig(self.noise_rate),
                        self.metric.clone(),
                        e.to_string(),
                        cell(self.train.get(e)),
                        cell(self.heldout.get(e)),
                    ],
                )
            })
            .collect()
    }
}

impl CsvTable for ScoreCurve {
    fn header() -> &'static [&'static str] {
        &["run_id", "noise_rate", "split", "rank", "score"]
    }

    fn rows(&self) -> Vec<(f64, usize, Vec<String>)> {
        self.values
            .iter()
            .enumerate()
            .map(|(rank, v)| {
                (
                    self.noise_rate,
                    rank,
                    vec![
                        self.run_id.clone(),
                        format_sig(self.noise_rate),
                        self.split.as_str().to_string(),
                        rank.to_string(),
                        format_sig(*v),
                    ],
                )
            })
            .collect()
    }
}

/// A CSR report tagged with the run it probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrEntry {
    pub run_id: String,
    pub noise_rate: f64,
    pub epoch: usize,
    pub report: CsrReport,
}

impl CsvTable for CsrEntry {
    fn header() -> &'static [&'static str] {
        &["run_id", "noise_rate", "epoch", "test_size", "critical", "ratio", "queries"]
    }

    fn rows(&self) -> Vec<(f64, usize, Vec<String>)> {
        vec![(
            self.noise_rate,
            self.epoch,
            vec![
                self.run_id.clone(),
                format_sig(self.noise_rate),
                self.epoch.to_string(),
                self.report.test_size.to_string(),
                self.report.critical_ids.len().to_string(),
                format_sig(self.report.ratio),
                self.report.queries.to_string(),
            ],
        )]
    }
}

pub fn render_csv<T: CsvTable>(items: &[T]) -> Result<String, ReportError> {
    let mut rows: Vec<(f64, usize, Vec<String>)> = items.iter().flat_map(CsvTable::rows).collect();
    // stable: input order breaks ties
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(T::header())?;
    for (_, _, row) in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| ReportError::Malformed(e.to_string()))
}

pub fn emit_csv<T: CsvTable>(items: &[T], path: &Path) -> Result<(), ReportError> {
    std::fs::write(path, render_csv(items)?)?;
    Ok(())
}

/// Reads a metrics CSV back into series, one per (run, metric).
pub fn parse_metric_csv(text: &str) -> Result<Vec<MetricSeries>, ReportError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != MetricSeries::header() {
        return Err(ReportError::Malformed(format!("unexpected header {header:?}")));
    }
    let real = |s: &str| -> Result<f64, ReportError> {
        s.parse().map_err(|_| ReportError::Malformed(format!("not a number: `{s}`")))
    };
    let mut out: Vec<MetricSeries> = Vec::new();
    let mut slot: BTreeMap<(String, String), usize> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let key = (rec[0].to_string(), rec[2].to_string());
        let idx = *slot.entry(key).or_insert_with(|| {
            out.push(MetricSeries {
                run_id: rec[0].to_string(),
                noise_rate: 0.0,
                metric: rec[2].to_string(),
                train: vec![],
                heldout: vec![],
            });
            out.len() - 1
        });
        let s = &mut out[idx];
        s.noise_rate = real(&rec[1])?;
        if !rec[4].is_empty() {
            s.train.push(real(&rec[4])?);
        }
        if !rec[5].is_empty() {
            s.heldout.push(real(&rec[5])?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotStyle {
    /// x is the epoch.
    Trajectory,
    /// x is the sample rank of a score curve.
    Curve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub noise_rate: f64,
    pub split: Split,
    pub values: Vec<f64>,
}

impl PlotSeries {
    /// The train and held-out lines of a metric, skipping absent splits.
    pub fn from_metric(series: &MetricSeries) -> Vec<PlotSeries> {
        Split::ALL
            .iter()
            .filter(|&&s| !series.split(s).is_empty())
            .map(|&s| PlotSeries {
                noise_rate: series.noise_rate,
                split: s,
                values: series.split(s).to_vec(),
            })
            .collect()
    }

    pub fn from_curve(curve: &ScoreCurve) -> PlotSeries {
        PlotSeries {
            noise_rate: curve.noise_rate,
            split: curve.split,
            values: curve.values.clone(),
        }
    }
}

/// Palette slot of a noise rate: 0, 25, 50, 75 and 100% each get one.
fn color(rate: f64) -> &'static str {
    let slot = (rate.clamp(0.0, 1.0) * 4.0).round() as usize;
    PALETTE[slot]
}

/// `25%` for whole percentages, 9 significant digits otherwise.
pub fn percent(rate: f64) -> String {
    let p = rate * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}%", p.round() as i64)
    } else {
        format!("{}%", format_sig(p))
    }
}

fn coord(x: f64) -> String {
    format!("{x:.2}")
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render_svg(metric: &str, series: &[PlotSeries], style: PlotStyle) -> Result<String, ReportError> {
    if series.len() > MAX_SERIES {
        return Err(ReportError::TooManySeries(series.len()));
    }
    let values = || series.iter().flat_map(|s| s.values.iter().copied()).filter(|v| v.is_finite());
    if values().next().is_none() {
        return Err(ReportError::EmptyInput);
    }
    let (mut lo, mut hi) = values().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let longest = series.iter().map(|s| s.values.len()).max().unwrap_or(0);
    let x_max = longest.saturating_sub(1).max(1) as f64;
    let plot_w = WIDTH - 2.0 * MARGIN_X;
    let plot_h = HEIGHT - 2.0 * MARGIN_Y;
    let px = |i: usize| MARGIN_X + plot_w * i as f64 / x_max;
    let py = |v: f64| HEIGHT - MARGIN_Y - plot_h * (v - lo) / (hi - lo);
    let x_label = match style {
        PlotStyle::Trajectory => "epoch",
        PlotStyle::Curve => "sample rank",
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (x0, y0, x1, y1) = (MARGIN_X, HEIGHT - MARGIN_Y, WIDTH - MARGIN_X, MARGIN_Y);
    let _ = writeln!(
        svg,
        r#"<path d="M{} {} H{} M{} {} V{}" stroke="black" fill="none"/>"#,
        coord(x0), coord(y0), coord(x1), coord(x0), coord(y0), coord(y1)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#,
        coord(WIDTH / 2.0),
        coord(HEIGHT - MARGIN_Y / 4.0)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" transform="rotate(-90 {} {})">{}</text>"#,
        coord(MARGIN_X / 4.0),
        coord(HEIGHT / 2.0),
        coord(MARGIN_X / 4.0),
        coord(HEIGHT / 2.0),
        escape(metric)
    );
    for (v, anchor_y) in [(lo, y0), (hi, y1)] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            coord(x0 - 4.0),
            coord(anchor_y + 4.0),
            format_sig(v)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
        coord(x1),
        coord(y0 + 16.0),
        x_max as usize
    );

    for (k, s) in series.iter().enumerate() {
        let points: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| format!("{},{}", coord(px(i)), coord(py(v))))
            .collect();
        let dash = match s.split {
            Split::Train => "",
            Split::Heldout => r#" stroke-dasharray="6 4""#,
        };
        let c = color(s.noise_rate);
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"{dash}/>"#,
            points.join(" ")
        );
        let ly = MARGIN_Y + 14.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{c}">{} {}</text>"#,
            coord(x1 + 4.0),
            coord(ly),
            percent(s.noise_rate),
            s.split.as_str()
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_plot(metric: &str, series: &[PlotSeries], style: PlotStyle, path: &Path) -> Result<(), ReportError> {
    std::fs::write(path, render_svg(metric, series, style)?)?;
    Ok(())
}

/// Per-rate inputs to the study summary.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_id: String,
    pub noise_rate: f64,
    pub series: Vec<MetricSeries>,
    pub heldout_score_median: Option<f64>,
    pub csr: Option<CsrReport>,
}


/// Markdown summary: one table per metric with the final-epoch value per
/// noise level, the Gini ordering check and an index of files.
pub fn study_summary(
    title: &str,
    rates: &[f64],
    runs: &[RunSummary],
    files: &[String],
) -> Result<String, ReportError> {
    let mut ordered = Vec::with_capacity(rates.len());
    for &rate in rates {
        let run = runs
            .iter()
            .find(|r| r.noise_rate == rate)
            .ok_or(ReportError::MissingRun(rate))?;
        ordered.push(run);
    }

    let mut doc = String::new();
    let _ = writeln!(doc, "# {}\n", escape(title));
    let header: Vec<String> = ordered.iter().map(|r| percent(r.noise_rate)).collect();
    let table_head = format!("| split | {} |\n|---|{}\n", header.join(" | "), "---|".repeat(header.len()));

    let mut metrics: Vec<&str> = Vec::new();
    for r in &ordered {
        for s in &r.series {
            if !metrics.contains(&s.metric.as_str()) {
                metrics.push(&s.metric);
            }
        }
    }
    for metric in &metrics {
        let _ = writeln!(doc, "## {metric} (final epoch)\n");
        doc.push_str(&table_head);
        for split in Split::ALL {
            let cells: Vec<String> = ordered
                .iter()
                .map(|r| {
                    r.series
                        .iter()
                        .find(|s| s.metric == *metric)
                        .and_then(|s| s.final_value(split))
                        .map(format_sig)
                        .unwrap_or_else(|| "-".into())
                })
                .collect();
            let _ = writeln!(doc, "| {} | {} |", split.as_str(), cells.join(" | "));
        }
        doc.push('\n');
    }

    if ordered.iter().any(|r| r.heldout_score_median.is_some()) {
        let _ = writeln!(doc, "## heldout score median\n");
        doc.push_str(&table_head);
        let cells: Vec<String> = ordered
            .iter()
            .map(|r| r.heldout_score_median.map(format_sig).unwrap_or_else(|| "-".into()))
            .collect();
        let _ = writeln!(doc, "| heldout | {} |\n", cells.join(" | "));
    }
    if ordered.iter().any(|r| r.csr.is_some()) {
        let _ = writeln!(doc, "## critical sample ratio\n");
        doc.push_str(&table_head);
        let cells: Vec<String> = ordered
            .iter()
            .map(|r| r.csr.as_ref().map(|c| format_sig(c.ratio)).unwrap_or_else(|| "-".into()))
            .collect();
        let _ = writeln!(doc, "| heldout | {} |\n", cells.join(" | "));
    }

    let gini: Vec<Option<f64>> = ordered
        .iter()
        .map(|r| {
            r.series
                .iter()
                .find(|s| s.metric == "gini_loss")
                .and_then(|s| s.final_value(Split::Train))
        })
        .collect();
    if gini.iter().all(Option::is_some) && !gini.is_empty() {
        let g: Vec<f64> = gini.into_iter().flatten().collect();
        let decreasing = g.windows(2).all(|w| w[0] > w[1]);
        let _ = writeln!(doc, "## gini ordering\n");
        let _ = writeln!(
            doc,
            "train loss gini strictly decreases with noise rate: {}\n",
            if decreasing { "yes" } else { "no" }
        );
    }

    if !files.is_empty() {
        let _ = writeln!(doc, "## files\n");
        for f in files {
            let _ = writeln!(doc, "- {f}");
        }
    }
    Ok(doc)
}
