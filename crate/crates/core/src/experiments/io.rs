//! CSV records and JSON summaries.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{SimulationOutput, TrialRecord};
use crate::error::{invalid, Error, Result};

/// Fixed column order of the record CSV.
pub const CSV_HEADER: [&str; 11] = [
    "trial",
    "n",
    "t",
    "seed",
    "energy",
    "sup_hess",
    "event_ok",
    "cost_bip",
    "cost_semi",
    "cost_exp",
    "wall_ms",
];

fn csv_error(e: csv::Error) -> Error {
    if let csv::ErrorKind::Deserialize { pos, err } = e.kind() {
        let column = err
            .field()
            .and_then(|i| CSV_HEADER.get(i as usize))
            .copied()
            .unwrap_or("?");
        let line = pos.as_ref().map_or(0, |p| p.line());
        return invalid(format!("column {column:?} on line {line}: {}", err.kind()));
    }
    Error::Io(e.to_string())
}

pub fn write_records(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_error)?;
    w.write_record(CSV_HEADER).map_err(csv_error)?;
    for r in records {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a record CSV, rejecting files whose header differs from
/// [`CSV_HEADER`] and naming the offending column on parse errors.
pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let header = r.headers().map_err(csv_error)?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(invalid("empty CSV"));
    }
    for (i, want) in CSV_HEADER.iter().enumerate() {
        match header.get(i) {
            Some(got) if got == *want => {}
            Some(got) => return Err(invalid(format!("column {i} is {got:?}, expected {want:?}"))),
            None => return Err(invalid(format!("missing column {want:?}"))),
        }
    }
    if header.len() > CSV_HEADER.len() {
        return Err(invalid(format!(
            "unexpected column {:?}",
            &header[CSV_HEADER.len()]
        )));
    }
    let records = r
        .deserialize()
        .collect::<std::result::Result<Vec<TrialRecord>, _>>()
        .map_err(csv_error)?;
    if records.is_empty() {
        return Err(invalid("CSV has no records"));
    }
    Ok(records)
}

/// Writes `<prefix>.csv` and `<prefix>.json`, creating parent directories.
pub fn write_outputs(prefix: &Path, output: &SimulationOutput) -> Result<(PathBuf, PathBuf)> {
    if let Some(parent) = prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let csv_path = with_suffix(prefix, "csv");
    let json_path = with_suffix(prefix, "json");
    write_records(&csv_path, &output.records)?;
    let mut w = BufWriter::new(File::create(&json_path)?);
    serde_json::to_writer_pretty(&mut w, &output.summary).map_err(|e| Error::Io(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok((csv_path, json_path))
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}
