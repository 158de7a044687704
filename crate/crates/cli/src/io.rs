//! Dataset CSV files: optional `#` metadata lines, one header row, then one
//! observation per row with `.` decimals and `,` separators.

use std::path::Path;

use anyhow::{bail, Context, Result};
use spikeshift::artifact::Metadata;
use spikeshift::spectrum::DataMatrix;

/// Header `xi_1..xi_M, eta_1..eta_p`.
pub fn column_names(m: usize, p: usize) -> Vec<String> {
    (1..=m).map(|i| format!("xi_{i}")).chain((1..=p).map(|i| format!("eta_{i}"))).collect()
}

pub fn parse_data(text: &str) -> Result<DataMatrix> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let width = rdr.headers().context("reading the header row")?.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| match e.position() {
            Some(p) => anyhow::anyhow!("row at line {}: {e}", p.line()),
            None => anyhow::anyhow!("{e}"),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            bail!("row at line {line} has {} fields, the header has {width}", rec.len());
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, f)| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => bail!("row at line {line}, column {}: '{f}' is not a finite number", j + 1),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("no data rows");
    }
    Ok(DataMatrix::from_rows(&rows)?)
}

pub fn read_data(path: &Path) -> Result<DataMatrix> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_data(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn format_data(data: &DataMatrix, m: usize, meta: &Metadata) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(column_names(m, data.d() - m))?;
    for row in data.matrix().row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    Ok(meta.csv_header() + &String::from_utf8(w.into_inner()?)?)
}
