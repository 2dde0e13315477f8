//! Report rows and their CSV / JSON-lines encodings.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// CSV header; the JSON-lines objects carry the same keys.
pub const REPORT_COLUMNS: [&str; 9] = [
    "experiment",
    "shift",
    "alignment",
    "mask",
    "metric",
    "value",
    "seed",
    "version",
    "detail",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRow {
    pub experiment: String,
    pub shift: String,
    pub alignment: String,
    pub mask: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
    pub version: String,
    /// Free-form `key=value` pairs (sample counts, bin counts, severities, errors).
    pub detail: String,
}

impl ReportRow {
    pub fn new(experiment: &str, shift: &str, alignment: &str, mask: &str, metric: &str, value: f64, seed: u64) -> Self {
        Self {
            experiment: experiment.into(),
            shift: shift.into(),
            alignment: alignment.into(),
            mask: mask.into(),
            metric: metric.into(),
            value,
            seed,
            version: TOOL_VERSION.into(),
            detail: String::new(),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    /// Key identifying the configured cell a row came from.
    pub fn cell_key(&self) -> (String, String, String, String) {
        (
            self.experiment.clone(),
            self.shift.clone(),
            self.alignment.clone(),
            self.mask.clone(),
        )
    }
}

pub fn write_csv(rows: &[ReportRow], out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json_lines(rows: &[ReportRow], mut out: impl Write) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv(input: impl Read) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != REPORT_COLUMNS {
        return Err(Error::Parse {
            offset: 0,
            message: format!("report header {header:?} does not match {REPORT_COLUMNS:?}"),
        });
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_json_lines(text: &str) -> Result<Vec<ReportRow>> {
    let mut offset = 0u64;
    let mut rows = Vec::new();
    for line in text.split_inclusive('\n') {
        if !line.trim().is_empty() {
            rows.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                offset,
                message: e.to_string(),
            })?);
        }
        offset += line.len() as u64;
    }
    Ok(rows)
}

/// Reads a report in either encoding, chosen by extension (`.jsonl` or CSV).
pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        read_json_lines(&std::fs::read_to_string(path)?)
    } else {
        read_csv(std::fs::File::open(path)?)
    }
}
