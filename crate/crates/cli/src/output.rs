//! Plot tables written as CSV or JSON.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::CliError;

/// One table cell. Reals are always written with 17 significant digits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Real(f64),
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Real(x) => format!("{x:.16e}"),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Self { columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, csv::Error> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::text))?;
        }
        Ok(w.into_inner().expect("in-memory writer"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io { path: path.display().to_string(), source: e }
}

/// Write `table` as `<stem>.csv` or `<stem>.json` under `dir`; returns the file name.
pub fn write_table(dir: &Path, stem: &str, table: &Table, format: Format) -> Result<String, CliError> {
    let (name, bytes) = match format {
        Format::Csv => {
            let bytes = table.to_csv().map_err(|e| CliError::Io { path: stem.into(), source: e.into() })?;
            (format!("{stem}.csv"), bytes)
        }
        Format::Json => {
            let mut bytes = serde_json::to_vec_pretty(table).expect("tables serialize");
            bytes.push(b'\n');
            (format!("{stem}.json"), bytes)
        }
    };
    let path = dir.join(&name);
    fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
    Ok(name)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut t = Table::new(&["m", "h", "re", "im"]);
        t.push(vec![2usize.into(), 1usize.into(), 2.0.into(), 0.0.into()]);
        t.push(vec![0usize.into(), (-3i64).into(), (-0.1).into(), 1e-300.into()]);
        let text = String::from_utf8(t.to_csv().unwrap()).unwrap();
        assert_eq!(
            text,
            "m,h,re,im\n2,1,2.0000000000000000e0,0.0000000000000000e0\n0,-3,-1.0000000000000001e-1,1.0000000000000000e-300\n"
        );
        let x: f64 = "-1.0000000000000001e-1".parse().unwrap();
        assert_eq!(x, -0.1);
    }
}
