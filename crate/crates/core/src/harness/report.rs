//! Output files and the published parameter/byte table comparison.
//!
//! CSV layouts are fixed per [`CSV_SCHEMA_VERSION`]; every JSON summary
//! carries the same version number.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::accounting::{reproduce_table, Column, Method};
use crate::{Error, Result};

/// Bumped whenever a CSV column is added, removed or reordered.
pub const CSV_SCHEMA_VERSION: u32 = 1;

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Header plus one record per row, `\n` line endings.
pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::Contract(format!("csv buffer flush failed: {e}")))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    fs::write(path, csv_bytes(rows)?).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct Versioned<'a, T> {
    schema_version: u32,
    #[serde(flatten)]
    body: &'a T,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(&Versioned {
        schema_version: CSV_SCHEMA_VERSION,
        body: value,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table1Row {
    pub row: usize,
    pub model: String,
    pub method: Method,
    pub setting: usize,
    pub column: Column,
    pub computed: u64,
    pub printed: String,
    pub matches: bool,
    /// Reason for an expected mismatch; empty when none is recorded.
    pub known_discrepancy: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table1Report {
    pub rows: Vec<Table1Row>,
    pub matched: usize,
    pub known_mismatches: usize,
    /// Mismatches with no recorded reason.
    pub unexpected_mismatches: usize,
    pub passed: bool,
}

/// Computed vs printed values for `presets` (all rows when empty).
pub fn run_table1(presets: &[&str]) -> Result<Table1Report> {
    let rows: Vec<Table1Row> = reproduce_table(presets)?
        .into_iter()
        .map(|cell| Table1Row {
            known_discrepancy: cell.known_discrepancy().unwrap_or_default().to_string(),
            row: cell.row,
            model: cell.model,
            method: cell.method,
            setting: cell.setting,
            column: cell.column,
            computed: cell.computed,
            printed: cell.printed,
            matches: cell.matches,
        })
        .collect();
    let matched = rows.iter().filter(|r| r.matches).count();
    let known_mismatches = rows.iter().filter(|r| !r.matches && !r.known_discrepancy.is_empty()).count();
    let unexpected_mismatches = rows.len() - matched - known_mismatches;
    Ok(Table1Report {
        passed: unexpected_mismatches == 0,
        rows,
        matched,
        known_mismatches,
        unexpected_mismatches,
    })
}
