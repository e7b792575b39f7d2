//! Merging the main tables of several runs of one command.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::output::{pretty, write_text, RunRecord, Table, MANIFEST};
use crate::run::table_spec;
use crate::{io_err, CliError, Result};

#[derive(Debug, Clone, Serialize)]
pub struct RunSource {
    pub run: String,
    pub seed: Option<u64>,
    pub config_hash: String,
    pub rows: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportSummary {
    pub kind: String,
    pub columns: Vec<String>,
    pub runs: Vec<RunSource>,
    pub rows: usize,
}

fn read_record(dir: &Path) -> Result<RunRecord> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Report(format!("{}: {e}", path.display())))
}

/// Concatenates the main table of every run, prefixed by the provenance
/// columns `run`, `seed` and `config_hash`; writes `report.csv` and
/// `report.json` into `out`.
pub fn merge_runs(runs: &[PathBuf], kind: Option<&str>, out: &Path) -> Result<ReportSummary> {
    let records: Vec<RunRecord> = runs.iter().map(|r| read_record(r)).collect::<Result<_>>()?;
    let mut kinds: Vec<&str> = records.iter().map(|r| r.command.as_str()).collect();
    kinds.sort_unstable();
    kinds.dedup();
    if kinds.len() > 1 {
        return Err(CliError::Report(format!("mixed subcommands: {}", kinds.join(", "))));
    }
    let kind = match (kind, kinds.first()) {
        (Some(k), Some(found)) if k != *found => {
            return Err(CliError::Report(format!("runs are `{found}`, not `{k}`")));
        }
        (Some(k), _) => k.to_string(),
        (None, Some(found)) => found.to_string(),
        (None, None) => return Err(CliError::Config("an empty run set needs --kind".into())),
    };
    let (file, header) = table_spec(&kind).ok_or_else(|| CliError::Config(format!("unknown command `{kind}`")))?;
    let mut columns = vec!["run".to_string(), "seed".into(), "config_hash".into()];
    columns.extend(header.iter().map(|s| s.to_string()));
    let mut merged = Table { header: columns.clone(), rows: Vec::new() };
    let mut sources = Vec::new();
    for (dir, rec) in runs.iter().zip(&records) {
        let path = dir.join(file);
        let table = Table::parse(&fs::read_to_string(&path).map_err(io_err(&path))?)?;
        if table.header != header {
            let missing: Vec<&str> = header.iter().copied().filter(|h| !table.header.iter().any(|c| c == h)).collect();
            let extra: Vec<&str> = table.header.iter().map(String::as_str).filter(|c| !header.contains(c)).collect();
            return Err(CliError::Report(format!(
                "{}: columns diverge (missing: [{}], unexpected: [{}])",
                path.display(),
                missing.join(", "),
                extra.join(", ")
            )));
        }
        let name = dir.display().to_string();
        let seed = rec.seed.map(|s| s.to_string()).unwrap_or_default();
        for row in &table.rows {
            let mut r = vec![name.clone(), seed.clone(), rec.config_hash.clone()];
            r.extend(row.iter().cloned());
            merged.push(r);
        }
        sources.push(RunSource { run: name, seed: rec.seed, config_hash: rec.config_hash.clone(), rows: table.rows.len() });
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_text(out, "report.csv", &merged.to_csv())?;
    let summary = ReportSummary { kind, columns, runs: sources, rows: merged.rows.len() };
    write_text(out, "report.json", &pretty(&serde_json::to_value(&summary).expect("summary serializes")))?;
    Ok(summary)
}
