//! Canonical on-disk form of life cycles.
//!
//! Each cycle is a pair of files in one directory: `<stem>.csv` holds a header
//! of feature names and one row per bucket, `<stem>.json` holds the metadata.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::series::LifeCycle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSidecar {
    pub atm_id: String,
    pub cycle_index: u32,
    pub start_time: DateTime<Utc>,
    pub end_time: DateTime<Utc>,
    pub period_hours: f64,
    pub ended_in_failure: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub withdrawal_events: Option<u64>,
}

fn sanitize(atm: &str) -> String {
    atm.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// File stem used for a cycle.
pub fn cycle_stem(atm_id: &str, cycle_index: u32) -> String {
    format!("{}__{cycle_index:04}", sanitize(atm_id))
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Malformed { path: path.to_path_buf(), reason: reason.into() }
}

/// Write one cycle; returns the CSV path.
pub fn write_cycle(dir: &Path, cycle: &LifeCycle) -> Result<PathBuf> {
    let stem = cycle_stem(cycle.atm_id(), cycle.cycle_index());
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(cycle.feature_names())?;
    for row in cycle.samples() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    let sidecar = CycleSidecar {
        atm_id: cycle.atm_id().to_string(),
        cycle_index: cycle.cycle_index(),
        start_time: cycle.start_time(),
        end_time: cycle.end_time(),
        period_hours: cycle.period_hours(),
        ended_in_failure: cycle.ended_in_failure(),
        withdrawal_events: cycle.withdrawal_events(),
    };
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(csv_path)
}

/// Write a corpus into `dir` (created if needed). Two cycles mapping to the same file name is an error.
pub fn write_cycles(dir: &Path, cycles: &[LifeCycle]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut stems = BTreeSet::new();
    for c in cycles {
        if !stems.insert(cycle_stem(c.atm_id(), c.cycle_index())) {
            return Err(Error::invalid(format!(
                "cycles {}#{} collide with another cycle's file name",
                c.atm_id(),
                c.cycle_index()
            )));
        }
    }
    cycles.iter().map(|c| write_cycle(dir, c)).collect()
}

/// Read one cycle from its CSV path; the sidecar sits next to it.
pub fn read_cycle(csv_path: &Path) -> Result<LifeCycle> {
    let sidecar_path = csv_path.with_extension("json");
    let sidecar: CycleSidecar = serde_json::from_str(&fs::read_to_string(&sidecar_path)?)
        .map_err(|e| malformed(&sidecar_path, e.to_string()))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(csv_path)?;
    let names: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let mut samples = Vec::new();
    for (k, row) in reader.records().enumerate() {
        let row = row?;
        let values = row
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| malformed(csv_path, format!("row {}: {e}", k + 2)))?;
        samples.push(values);
    }
    let cycle = LifeCycle::new(
        sidecar.atm_id,
        sidecar.cycle_index,
        sidecar.start_time,
        sidecar.period_hours,
        names,
        samples,
        sidecar.ended_in_failure,
    )
    .map_err(|e| malformed(csv_path, e.to_string()))?;
    Ok(cycle.with_withdrawal_events(sidecar.withdrawal_events))
}

fn cycle_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "csv") && path.with_extension("json").is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Read every cycle in `dir`, ordered by `(atm_id, cycle_index)`.
pub fn read_cycles(dir: &Path) -> Result<Vec<LifeCycle>> {
    let mut cycles = cycle_files(dir)?.iter().map(|p| read_cycle(p)).collect::<Result<Vec<_>>>()?;
    cycles.sort_by(|a, b| (a.atm_id(), a.cycle_index()).cmp(&(b.atm_id(), b.cycle_index())));
    Ok(cycles)
}

/// SHA-256 over the names and bytes of every cycle file in `dir`, hex encoded.
pub fn fingerprint(dir: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    for csv_path in cycle_files(dir)? {
        for path in [csv_path.clone(), csv_path.with_extension("json")] {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let bytes = fs::read(&path)?;
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
        }
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
