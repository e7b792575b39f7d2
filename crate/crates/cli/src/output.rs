//! Artifact writing: CSV tables, JSON documents, field snapshots and the run
//! manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pam_core::lattice::{save_field, Field, SnapshotMeta};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::{io_err, CliError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_ECHO: &str = "config.json";

/// Manifest of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    /// SHA-256 of the echoed config.
    pub config_hash: String,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub wall_time_seconds: f64,
    pub threads: usize,
    /// Paths relative to the output directory.
    pub files: Vec<String>,
    /// `Some(false)` when a diagnostic came out inconclusive.
    pub conclusive: Option<bool>,
}

/// A table with a fixed column order.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let line = |s: &mut String, cells: &[String]| {
            let quoted: Vec<String> = cells.iter().map(|c| quote(c)).collect();
            let _ = writeln!(s, "{}", quoted.join(","));
        };
        line(&mut s, &self.header);
        for r in &self.rows {
            line(&mut s, r);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = split_csv(lines.next().ok_or_else(|| CliError::Report("empty table".into()))?);
        let rows: Vec<Vec<String>> = lines.filter(|l| !l.is_empty()).map(split_csv).collect();
        if let Some(bad) = rows.iter().find(|r| r.len() != header.len()) {
            return Err(CliError::Report(format!("row with {} cells under a {}-column header", bad.len(), header.len())));
        }
        Ok(Self { header, rows })
    }
}

fn quote(c: &str) -> String {
    if c.contains([',', '"', '\n']) {
        format!("\"{}\"", c.replace('"', "\"\""))
    } else {
        c.to_string()
    }
}

fn split_csv(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out
}

/// Shortest round-trip form, exponent notation for extreme magnitudes.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Collects artifacts of a run before they hit the disk.
#[derive(Default)]
pub struct Artifacts {
    pub tables: Vec<(String, Table)>,
    pub documents: Vec<(String, Value)>,
    pub fields: Vec<(String, Field, SnapshotMeta)>,
    pub conclusive: Option<bool>,
}

impl Artifacts {
    pub fn table(&mut self, name: &str, t: Table) {
        self.tables.push((name.into(), t));
    }

    pub fn json(&mut self, name: &str, v: impl Serialize) {
        self.documents.push((name.into(), serde_json::to_value(v).expect("results serialize")));
    }

    pub fn field(&mut self, name: &str, f: Field, meta: SnapshotMeta) {
        self.fields.push((name.into(), f, meta));
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(io_err(path))
}

/// Writes everything into `dir` and returns the relative file names.
pub fn write_artifacts(dir: &Path, art: &Artifacts) -> Result<Vec<String>> {
    let mut files = Vec::new();
    for (name, t) in &art.tables {
        write_text(dir, name, &t.to_csv())?;
        files.push(name.clone());
    }
    for (name, v) in &art.documents {
        write_text(dir, name, &pretty(v))?;
        files.push(name.clone());
    }
    for (name, f, meta) in &art.fields {
        let path: PathBuf = dir.join(name);
        save_field(f, *meta, &path).map_err(|e| match e {
            pam_core::PamError::Io(source) => CliError::Io { path: path.clone(), source },
            other => CliError::Config(other.to_string()),
        })?;
        files.push(name.clone());
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips_quoted_cells() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), "x,\"y\"".into()]);
        t.push(vec!["".into(), "2".into()]);
        assert_eq!(Table::parse(&t.to_csv()).unwrap(), t);
    }

    #[test]
    fn numbers_round_trip_exactly() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 12345.678] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }
}
