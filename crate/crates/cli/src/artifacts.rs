//! Writers shared by the experiments. Output is a pure function of the
//! inputs: no timestamps, map keys sorted, floats in shortest round-trip form.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::CliError;

fn parent(path: &Path) -> Result<(), CliError> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    parent(path)?;
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes a CSV with the given header; each row is already formatted.
pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), CliError> {
    parent(path)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let csv_err = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Runtime(e.to_string()))?
        .flush()?;
    Ok(())
}

/// Reads a CSV into its header and string rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let err = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    let header = r
        .headers()
        .map_err(err)?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    Ok((header, rows))
}

pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn opt_usize(x: Option<usize>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// A percentage with two decimals, as summary tables print them.
pub fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}
