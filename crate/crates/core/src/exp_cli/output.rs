//! `result.csv` rows and the streaming writer behind them.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const RESULT_FILE: &str = "result.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
/// Column order of `result.csv`.
pub const RESULT_HEADER: [&str; 7] = ["quantity", "value", "stderr", "n", "samples", "seed", "params_hash"];
/// First field of the last line when a run stops early.
pub const TRUNCATION_MARKER: &str = "#truncated";

/// One long-format estimate. `n` labels the degree or size the value refers to (empty if none).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub quantity: String,
    pub value: f64,
    pub stderr: f64,
    pub n: String,
    pub samples: usize,
    pub seed: u64,
    pub params_hash: String,
}

/// Single writer for result rows; every row is flushed as soon as it is pushed.
pub struct RowSink {
    writer: Option<csv::Writer<File>>,
    rows: Vec<ResultRow>,
}

fn csv_err(e: csv::Error) -> LabError {
    LabError::Io(std::io::Error::other(e.to_string()))
}

impl RowSink {
    pub fn memory() -> Self {
        RowSink { writer: None, rows: Vec::new() }
    }

    pub fn create(path: &Path) -> Result<Self> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
        w.write_record(RESULT_HEADER).map_err(csv_err)?;
        w.flush()?;
        Ok(RowSink { writer: Some(w), rows: Vec::new() })
    }

    pub fn push(&mut self, row: ResultRow) -> Result<()> {
        if let Some(w) = &mut self.writer {
            w.serialize(&row).map_err(csv_err)?;
            w.flush()?;
        }
        self.rows.push(row);
        Ok(())
    }

    /// Appends the truncation marker line with the reason.
    pub fn truncate(&mut self, reason: &str) -> Result<()> {
        if let Some(w) = &mut self.writer {
            let mut record = vec![TRUNCATION_MARKER.to_string(), reason.replace(['\n', '\r'], " ")];
            record.resize(RESULT_HEADER.len(), String::new());
            w.write_record(&record).map_err(csv_err)?;
            w.flush()?;
        }
        Ok(())
    }

    pub fn rows(&self) -> &[ResultRow] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<ResultRow> {
        self.rows
    }
}

/// Reads back a `result.csv`, rejecting files whose header differs from `RESULT_HEADER`.
pub fn read_results(path: &Path) -> Result<(Vec<ResultRow>, Option<String>)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(RESULT_HEADER) {
        return Err(LabError::Config(format!("unexpected result header {header:?}")));
    }
    let mut rows = Vec::new();
    let mut truncated = None;
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.get(0) == Some(TRUNCATION_MARKER) {
            truncated = Some(rec.get(1).unwrap_or_default().to_string());
            continue;
        }
        rows.push(rec.deserialize(Some(&header)).map_err(csv_err)?);
    }
    Ok((rows, truncated))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}
