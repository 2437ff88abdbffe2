//! CSV and JSON artifact writers.

use std::fs;
use std::path::Path;

use dsvar::{Error, Result};
use serde::Serialize;

/// Rows of optional numbers; `None` and NaN become empty cells.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<Option<f64>>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        let cells = row.iter().map(|v| match v {
            Some(x) if !x.is_nan() => x.to_string(),
            _ => String::new(),
        });
        w.write_record(cells).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Trial names made safe for file names.
pub fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Artifact name relative to the output directory, as recorded in summaries.
pub fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}
