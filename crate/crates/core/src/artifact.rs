//! CSV tables and SVG charts for experiment results. Every file starts with a
//! metadata block carrying the config digest and seed; no timestamps are written,
//! so equal configs give byte-identical files.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::{config_digest, HistogramResult, KernelValidationRow, PowerCurve};

/// Provenance written at the top of every artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct Metadata {
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
}

impl Metadata {
    pub fn new(command: &str, seed: u64, config: &impl Serialize) -> Result<Self> {
        let config = serde_json::to_value(config).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self { command: command.to_string(), seed, config })
    }

    pub fn digest(&self) -> String {
        config_digest(&self.config)
    }

    fn lines(&self) -> Vec<String> {
        vec![
            format!("spikeshift {} {}", env!("CARGO_PKG_VERSION"), self.command),
            format!("config_digest: {}", self.digest()),
            format!("seed: {}", self.seed),
            format!("config: {}", self.config),
        ]
    }

    /// `# `-prefixed header lines for CSV files.
    pub fn csv_header(&self) -> String {
        self.lines().iter().map(|l| format!("# {l}\n")).collect()
    }

    fn svg_comment(&self) -> String {
        // "--" may not appear inside an XML comment
        let body = self.lines().join("\n").replace("--", "- -");
        format!("<!--\n{body}\n-->\n")
    }
}

fn csv_table(meta: &Metadata, header: &[&str], rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::Config(e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| Error::Config(e.to_string()))?;
    }
    let body = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(meta.csv_header() + &String::from_utf8(body).expect("csv output is UTF-8"))
}

pub fn power_curve_csv(c: &PowerCurve, meta: &Metadata) -> Result<String> {
    let rows = (0..c.deltas.len())
        .map(|i| {
            vec![
                c.deltas[i].to_string(),
                c.rejection_max[i].to_string(),
                c.rejection_sum[i].to_string(),
                (c.config.replicates - c.skipped).to_string(),
            ]
        })
        .collect();
    csv_table(meta, &["delta", "rejection_max", "rejection_sum", "replicates_used"], rows)
}

pub fn histogram_csv(h: &HistogramResult, meta: &Metadata) -> Result<String> {
    let e = &h.histogram.edges;
    let rows = h
        .histogram
        .counts
        .iter()
        .enumerate()
        .map(|(i, c)| vec![e[i].to_string(), e[i + 1].to_string(), c.to_string()])
        .collect();
    csv_table(meta, &["bin_lower", "bin_upper", "count"], rows)
}

pub fn kernel_validation_csv(rows: &[KernelValidationRow], meta: &Metadata) -> Result<String> {
    let rows = rows
        .iter()
        .map(|r| {
            vec![
                r.k.to_string(),
                r.s.to_string(),
                r.t.to_string(),
                r.empirical.to_string(),
                r.analytic.to_string(),
                r.rel_error.to_string(),
            ]
        })
        .collect();
    csv_table(meta, &["k", "s", "t", "empirical", "analytic", "rel_error"], rows)
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let (x0, x1) = if x1 > x0 { (x0, x1) } else { (x0 - 0.5, x0 + 0.5) };
        let (y0, y1) = if y1 > y0 { (y0, y1) } else { (y0 - 0.5, y0 + 0.5) };
        Self { x0, x1, y0, y1 }
    }

    fn x(&self, v: f64) -> f64 {
        PAD + (v - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn y(&self, v: f64) -> f64 {
        H - PAD - (v - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }

    fn axes(&self, title: &str, xlabel: &str, ylabel: &str) -> String {
        let mut s = format!(
            "<line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
             <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>\n\
             <text x=\"{cx}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{t}</text>\n\
             <text x=\"{cx}\" y=\"{xl}\" text-anchor=\"middle\" font-size=\"12\">{xlab}</text>\n\
             <text x=\"14\" y=\"{cy}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 {cy})\">{ylab}</text>\n",
            b = H - PAD,
            r = W - PAD,
            cx = W / 2.0,
            cy = H / 2.0,
            xl = H - 12.0,
            t = esc(title),
            xlab = esc(xlabel),
            ylab = esc(ylabel),
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x0 + f * (self.x1 - self.x0);
            let yv = self.y0 + f * (self.y1 - self.y0);
            s += &format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"10\">{}</text>\n",
                self.x(xv),
                H - PAD + 14.0,
                tick(xv)
            );
            s += &format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"10\">{}</text>\n",
                PAD - 4.0,
                self.y(yv) + 3.0,
                tick(yv)
            );
        }
        s
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn svg_doc(meta: &Metadata, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n{}\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n",
        meta.svg_comment()
    )
}

/// Line chart of named series sharing one x axis.
pub fn line_chart_svg(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[(&str, Vec<(f64, f64)>)],
    meta: &Metadata,
) -> String {
    let pts = series.iter().flat_map(|s| s.1.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y1) = (0.0, 1.0, 1.0);
    }
    let f = Frame::new(x0, x1, y0, y1);
    let mut body = f.axes(title, xlabel, ylabel);
    for (i, (name, s)) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let path: Vec<String> = s.iter().map(|&(x, y)| format!("{:.2},{:.2}", f.x(x), f.y(y))).collect();
        body += &format!("<polyline fill=\"none\" stroke=\"{c}\" stroke-width=\"2\" points=\"{}\"/>\n", path.join(" "));
        for &(x, y) in s {
            body += &format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{c}\"/>\n", f.x(x), f.y(y));
        }
        body += &format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" fill=\"{c}\">{}</text>\n",
            W - PAD - 110.0,
            PAD + 16.0 * i as f64,
            esc(name)
        );
    }
    svg_doc(meta, &body)
}

pub fn power_curve_svg(c: &PowerCurve, meta: &Metadata) -> String {
    let pts = |r: &[f64]| c.deltas.iter().copied().zip(r.iter().copied()).collect::<Vec<_>>();
    line_chart_svg(
        &format!("Rejection rates, {} ({} spikes)", c.alternative.name(), c.test),
        "delta",
        "rejection rate",
        &[("max-type", pts(&c.rejection_max)), ("sum-type", pts(&c.rejection_sum))],
        meta,
    )
}

pub fn histogram_svg(h: &HistogramResult, meta: &Metadata) -> String {
    let e = &h.histogram.edges;
    let top = h.histogram.counts.iter().copied().max().unwrap_or(1).max(1) as f64;
    let f = Frame::new(e[0], e[e.len() - 1], 0.0, top);
    let name = match h.statistic {
        crate::sim::Statistic::Max => "log M_n",
        crate::sim::Statistic::Sum => "log S_n",
    };
    let mut body = f.axes(&format!("Histogram of {name}"), name, "count");
    for (i, &c) in h.histogram.counts.iter().enumerate() {
        let (xa, xb) = (f.x(e[i]), f.x(e[i + 1]));
        let ya = f.y(c as f64);
        body += &format!(
            "<rect x=\"{xa:.2}\" y=\"{ya:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\" stroke=\"white\"/>\n",
            xb - xa,
            f.y(0.0) - ya,
            COLORS[0]
        );
    }
    svg_doc(meta, &body)
}
