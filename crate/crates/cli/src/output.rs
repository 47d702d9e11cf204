//! Table and document writers. Floats are written in their shortest
//! round-trip form so reruns are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::args::Format;
use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    F(f64),
    I(u64),
    S(String),
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::F(v) => v.to_string(),
            Cell::I(v) => v.to_string(),
            Cell::S(v) => v.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::F(v) => Value::from(*v),
            Cell::I(v) => Value::from(*v),
            Cell::S(v) => Value::from(v.as_str()),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::I(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::I(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::S(v.to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).map_err(CliError::csv)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::text)).map_err(CliError::csv)?;
        }
        w.into_inner().map_err(|e| CliError::runtime(e.to_string()))
    }

    /// `{"columns": [...], "rows": [[...], ...]}`.
    pub fn to_json(&self) -> Result<Vec<u8>, CliError> {
        let rows: Vec<Value> = self.rows.iter().map(|r| Value::Array(r.iter().map(Cell::json).collect())).collect();
        let doc = serde_json::json!({ "columns": self.columns, "rows": rows });
        json_bytes(&doc)
    }
}

pub fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::runtime(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Collects the files a command produces.
pub struct OutputDir {
    dir: PathBuf,
    format: Format,
    pub written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(dir: &Path, format: Format) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            format,
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// Writes `stem.csv` or `stem.json` according to the chosen format.
    pub fn write_table(&mut self, stem: &str, table: &Table) -> Result<PathBuf, CliError> {
        match self.format {
            Format::Csv => self.write_bytes(&format!("{stem}.csv"), &table.to_csv()?),
            Format::Json => self.write_bytes(&format!("{stem}.json"), &table.to_json()?),
        }
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        self.write_bytes(name, &json_bytes(value)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_json_forms() {
        let mut t = Table::new(&["x", "label", "n"]);
        t.push(vec![0.1.into(), "a".into(), 3usize.into()]);
        t.push(vec![f64::NAN.into(), "b".into(), 4usize.into()]);
        assert_eq!(String::from_utf8(t.to_csv().unwrap()).unwrap(), "x,label,n\n0.1,a,3\nNaN,b,4\n");
        let v: Value = serde_json::from_slice(&t.to_json().unwrap()).unwrap();
        assert_eq!(v["columns"][1], "label");
        assert_eq!(v["rows"][0][0], 0.1);
        assert!(v["rows"][1][0].is_null());
    }
}
