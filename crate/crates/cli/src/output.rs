//! CSV tables and the run manifest.
//!
//! A CSV file starts with three `#` lines, then data rows only:
//!
//! ```text
//! # schema: noisy-mpo-csv/1
//! # quantity: error-trace
//! # columns: t,norm,err_l2,...
//! ```
//!
//! Floats carry 17 significant digits; a missing value is an empty field.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const CSV_SCHEMA: &str = "noisy-mpo-csv/1";
pub const MANIFEST_SCHEMA: &str = "noisy-mpo-manifest/1";

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(u64),
    Missing,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as u64)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Missing, Cell::Float)
    }
}

#[derive(Clone, Debug)]
pub struct Table {
    pub quantity: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(quantity: &str, columns: &[&str]) -> Self {
        Self { quantity: quantity.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut s = format!("# schema: {CSV_SCHEMA}\n# quantity: {}\n# columns: {}\n", self.quantity, self.columns.join(","));
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                match cell {
                    Cell::Float(x) => write!(s, "{x:.16e}").unwrap(),
                    Cell::Int(k) => write!(s, "{k}").unwrap(),
                    Cell::Missing => {}
                }
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{path}: {source}")]
pub struct IoError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), IoError> {
    let wrap = |source| IoError { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(wrap)?;
    }
    std::fs::write(path, contents).map_err(wrap)
}
