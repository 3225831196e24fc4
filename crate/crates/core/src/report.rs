//! Tabular experiment output with a provenance header.
//!
//! CSV layout: `# key=value` comment lines (experiment, config hash, seeds,
//! tool version), then the column header, then rows. A `.meta.json` sidecar
//! carries the same provenance plus the column list.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Int(v) => Some(*v as f64),
            Cell::Text(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }
}

/// Shortest round-trip representation; NaN and infinities spelled out.
fn format_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Num(v) => f.write_str(&format_num(*v)),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub experiment: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub tool_version: String,
}

impl Provenance {
    pub fn new(experiment: &str, config_hash: String, seeds: Vec<u64>) -> Self {
        Provenance {
            experiment: experiment.to_string(),
            config_hash,
            seeds,
            tool_version: TOOL_VERSION.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub provenance: Provenance,
    columns: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    #[serde(flatten)]
    provenance: &'a Provenance,
    columns: &'a [String],
    row_count: usize,
}

impl ReportTable {
    pub fn new(provenance: Provenance, columns: &[&str]) -> Self {
        ReportTable {
            provenance,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    /// Append a row; its width must match the header.
    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::DimensionMismatch {
                what: "report row",
                expected: self.columns.len(),
                found: row.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric values of a column (None for text cells).
    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[i].as_f64()).collect())
    }

    pub fn to_csv_string(&self) -> String {
        let p = &self.provenance;
        let seeds: Vec<String> = p.seeds.iter().map(|s| s.to_string()).collect();
        let mut out = String::new();
        out.push_str(&format!("# experiment={}\n", p.experiment));
        out.push_str(&format!("# config_hash={}\n", p.config_hash));
        out.push_str(&format!("# seeds={}\n", seeds.join(";")));
        out.push_str(&format!("# tool_version={}\n", p.tool_version));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.to_string())).expect("in-memory write");
        }
        let body = w.into_inner().expect("in-memory flush");
        out.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
        out
    }

    pub fn sidecar_json(&self) -> String {
        let s = Sidecar {
            provenance: &self.provenance,
            columns: &self.columns,
            row_count: self.rows.len(),
        };
        serde_json::to_string_pretty(&s).expect("sidecar serializes")
    }

    /// Write `<dir>/<stem>.csv` and `<dir>/<stem>.meta.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let meta_path = dir.join(format!("{stem}.meta.json"));
        fs::write(&csv_path, self.to_csv_string())?;
        fs::write(&meta_path, self.sidecar_json())?;
        Ok((csv_path, meta_path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ReportTable {
        let mut t = ReportTable::new(Provenance::new("demo", "ab".repeat(32), vec![0, 1]), &["name", "n", "value"]);
        t.push(vec!["a,b".into(), 3usize.into(), 0.1.into()]).unwrap();
        t.push(vec!["c".into(), 4usize.into(), f64::INFINITY.into()]).unwrap();
        t
    }

    #[test]
    fn csv_layout() {
        let s = table().to_csv_string();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "# experiment=demo");
        assert!(lines[1].starts_with("# config_hash=abab"));
        assert_eq!(lines[2], "# seeds=0;1");
        assert_eq!(lines[3], format!("# tool_version={TOOL_VERSION}"));
        assert_eq!(lines[4], "name,n,value");
        assert_eq!(lines[5], "\"a,b\",3,0.1");
        assert_eq!(lines[6], "c,4,inf");
    }

    #[test]
    fn ragged_row_rejected() {
        let mut t = table();
        assert!(t.push(vec![1usize.into()]).is_err());
        assert_eq!(t.rows().len(), 2);
    }

    #[test]
    fn floats_round_trip_through_text() {
        for v in [0.1, 1.0 / 3.0, 6.02e23, -1e-300, 2.0f64.sqrt()] {
            assert_eq!(format_num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(format_num(f64::NAN), "nan");
    }

    #[test]
    fn writes_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (c1, m1) = table().write(dir.path(), "one").unwrap();
        let (c2, _) = table().write(dir.path(), "two").unwrap();
        assert_eq!(fs::read(&c1).unwrap(), fs::read(&c2).unwrap());
        let meta: serde_json::Value = serde_json::from_slice(&fs::read(m1).unwrap()).unwrap();
        assert_eq!(meta["row_count"], 2);
        assert_eq!(meta["experiment"], "demo");
        assert_eq!(meta["columns"][2], "value");
    }
}
