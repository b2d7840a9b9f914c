//! Delimited event-log and failure-mark readers.

use std::io::Read;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One timestamped event of one machine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub timestamp: DateTime<Utc>,
    pub atm_id: String,
    pub lifecycle_id: u32,
    pub event_code: String,
}

/// A column addressed by header name or by position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Column {
    Index(usize),
    Name(String),
}

impl Column {
    fn resolve(&self, headers: Option<&csv::StringRecord>) -> Result<usize> {
        match (self, headers) {
            (Column::Index(i), _) => Ok(*i),
            (Column::Name(name), Some(h)) => h
                .iter()
                .position(|c| c.trim() == name)
                .ok_or_else(|| Error::config(format!("column {name:?} not found in header"))),
            (Column::Name(name), None) => {
                Err(Error::config(format!("column {name:?} given by name but the file has no header")))
            }
        }
    }
}

/// Where each field lives in the input table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_true")]
    pub has_header: bool,
    pub timestamp: Column,
    pub atm_id: Column,
    #[serde(default)]
    pub lifecycle_id: Option<Column>,
    pub event_code: Column,
}

fn default_delimiter() -> char {
    ','
}

fn default_true() -> bool {
    true
}

impl Default for ColumnMapping {
    /// Header row with `timestamp, atm_id, lifecycle_id, event_code` columns.
    fn default() -> Self {
        Self {
            delimiter: ',',
            has_header: true,
            timestamp: Column::Name("timestamp".into()),
            atm_id: Column::Name("atm_id".into()),
            lifecycle_id: Some(Column::Name("lifecycle_id".into())),
            event_code: Column::Name("event_code".into()),
        }
    }
}

impl ColumnMapping {
    /// Headerless `timestamp, atm_id, lifecycle_id, event_code` rows.
    pub fn positional() -> Self {
        Self {
            delimiter: ',',
            has_header: false,
            timestamp: Column::Index(0),
            atm_id: Column::Index(1),
            lifecycle_id: Some(Column::Index(2)),
            event_code: Column::Index(3),
        }
    }

    fn delimiter_byte(&self) -> Result<u8> {
        u8::try_from(self.delimiter)
            .ok()
            .filter(u8::is_ascii)
            .ok_or_else(|| Error::config(format!("delimiter {:?} is not a single ASCII byte", self.delimiter)))
    }
}

/// Parsed log plus what had to be skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLog {
    /// Sorted by `(atm_id, lifecycle_id, timestamp)`.
    pub records: Vec<EventRecord>,
    pub malformed: usize,
    /// 1-based line numbers of the first few malformed rows.
    pub malformed_lines: Vec<u64>,
}

/// Share of malformed rows above which parsing fails.
pub const MAX_MALFORMED_FRACTION: f64 = 0.10;

const REPORTED_LINES: usize = 20;

/// Parse an ISO-8601 timestamp; values without an offset are taken as UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc());
        }
    }
    None
}

pub fn parse_event_log(source: impl Read, mapping: &ColumnMapping) -> Result<ParsedLog> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(mapping.delimiter_byte()?)
        .has_headers(mapping.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = if mapping.has_header { Some(reader.headers()?.clone()) } else { None };
    let ts_col = mapping.timestamp.resolve(headers.as_ref())?;
    let atm_col = mapping.atm_id.resolve(headers.as_ref())?;
    let code_col = mapping.event_code.resolve(headers.as_ref())?;
    let cycle_col = mapping.lifecycle_id.as_ref().map(|c| c.resolve(headers.as_ref())).transpose()?;

    let mut records = Vec::new();
    let mut malformed = 0usize;
    let mut malformed_lines = Vec::new();
    let mut total = 0usize;
    let mut row = csv::StringRecord::new();
    loop {
        let line = reader.position().line();
        match reader.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(_) => {
                total += 1;
                malformed += 1;
                if malformed_lines.len() < REPORTED_LINES {
                    malformed_lines.push(line);
                }
                continue;
            }
        }
        if row.iter().all(str::is_empty) {
            continue;
        }
        total += 1;
        let parsed = (|| {
            let timestamp = parse_timestamp(row.get(ts_col)?)?;
            let atm_id = row.get(atm_col).filter(|s| !s.is_empty())?.to_string();
            let event_code = row.get(code_col).filter(|s| !s.is_empty())?.to_string();
            let lifecycle_id = match cycle_col {
                Some(c) => row.get(c)?.parse().ok()?,
                None => 0,
            };
            Some(EventRecord { timestamp, atm_id, lifecycle_id, event_code })
        })();
        match parsed {
            Some(r) => records.push(r),
            None => {
                malformed += 1;
                if malformed_lines.len() < REPORTED_LINES {
                    malformed_lines.push(line);
                }
            }
        }
    }
    if total > 0 && malformed as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        return Err(Error::ParseQuality { malformed, total });
    }
    if malformed > 0 {
        log::warn!("skipped {malformed} malformed rows of {total} (first at lines {malformed_lines:?})");
    }
    records.sort_by(|a, b| {
        (a.atm_id.as_str(), a.lifecycle_id, a.timestamp).cmp(&(b.atm_id.as_str(), b.lifecycle_id, b.timestamp))
    });
    Ok(ParsedLog { records, malformed, malformed_lines })
}

/// A recorded failure of one machine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureMark {
    pub atm_id: String,
    pub failure_time: DateTime<Utc>,
    pub module: String,
}

/// Read `atm_id, failure_time, module` rows (header required).
pub fn parse_failures(source: impl Read) -> Result<Vec<FailureMark>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::config(format!("failure file lacks a {name:?} column")))
    };
    let (atm, time, module) = (col("atm_id")?, col("failure_time")?, col("module").ok());
    let mut out = Vec::new();
    for (k, row) in reader.records().enumerate() {
        let row = row?;
        let bad = || Error::invalid(format!("failure row {} is malformed", k + 2));
        let failure_time = parse_timestamp(row.get(time).ok_or_else(bad)?).ok_or_else(bad)?;
        out.push(FailureMark {
            atm_id: row.get(atm).ok_or_else(bad)?.to_string(),
            failure_time,
            module: module.and_then(|m| row.get(m)).unwrap_or("").to_string(),
        });
    }
    out.sort_by(|a, b| (a.atm_id.as_str(), a.failure_time).cmp(&(b.atm_id.as_str(), b.failure_time)));
    Ok(out)
}
