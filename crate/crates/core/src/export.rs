//! CSV and JSON emission for result types.
//!
//! Floats are written with Rust's shortest round-trip formatting, so output
//! is byte-stable for bit-identical values.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Serialize, Serializer};

use crate::error::Result;

/// A result that has a canonical long or wide CSV layout.
pub trait CsvTable {
    fn header(&self) -> Vec<String>;
    fn rows(&self) -> Vec<Vec<String>>;
}

/// Features followed by a `label` column, the layout read back by the CSV loader.
impl CsvTable for crate::data::Dataset {
    fn header(&self) -> Vec<String> {
        let mut h = self.column_names().to_vec();
        h.push("label".into());
        h
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.features()
            .rows()
            .into_iter()
            .zip(self.labels())
            .map(|(r, y)| r.iter().map(|&v| num(v)).chain([y.to_string()]).collect())
            .collect()
    }
}

pub fn write_csv(table: &dyn CsvTable, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(table.header())?;
    for row in table.rows() {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(table: &dyn CsvTable) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(table, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn write_csv_file(table: &dyn CsvTable, path: &Path) -> Result<()> {
    write_csv(table, std::fs::File::create(path)?)
}

pub fn write_json_file(value: &impl Serialize, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub(crate) fn num(v: f64) -> String {
    format!("{v}")
}

/// Serializes a matrix as a list of rows.
pub(crate) fn matrix_rows<S: Serializer>(m: &Array2<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.rows().into_iter().map(|r| r.to_vec()).collect();
    rows.serialize(s)
}
