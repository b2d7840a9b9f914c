//! Occurrence counting and severity-ratio features.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::parse::EventRecord;
use crate::error::{Error, Result};
use crate::series::LifeCycle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Ok,
    Warning,
    Error,
}

/// Where one module-relevant code belongs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSlot {
    pub code: String,
    pub group: String,
    pub severity: Severity,
}

/// `sum(numerator severities) / max(sum(denominator severity), 1)` over a set of groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRecipe {
    pub name: String,
    pub numerator: Vec<Severity>,
    pub denominator: Severity,
    pub groups: Vec<String>,
}

/// Which codes matter and how they combine into features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeGroupingConfig {
    pub codes: Vec<CodeSlot>,
    pub features: Vec<FeatureRecipe>,
    /// Groups whose events count as withdrawals in dataset statistics.
    #[serde(default)]
    pub withdrawal_groups: Vec<String>,
}

impl CodeGroupingConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for slot in &self.codes {
            if slot.code.is_empty() || slot.group.is_empty() {
                return Err(Error::config("code slots need a non-empty code and group"));
            }
            if !seen.insert(slot.code.as_str()) {
                return Err(Error::config(format!("code {:?} is assigned to more than one slot", slot.code)));
            }
        }
        let groups: BTreeSet<&str> = self.codes.iter().map(|s| s.group.as_str()).collect();
        let mut names = BTreeSet::new();
        if self.features.is_empty() {
            return Err(Error::config("at least one feature recipe is required"));
        }
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return Err(Error::config(format!("feature {:?} is defined twice", f.name)));
            }
            if f.numerator.is_empty() || f.groups.is_empty() {
                return Err(Error::config(format!("feature {:?} needs numerator severities and groups", f.name)));
            }
            if let Some(g) = f.groups.iter().find(|g| !groups.contains(g.as_str())) {
                return Err(Error::config(format!("feature {:?} references unknown group {g:?}", f.name)));
            }
        }
        if let Some(g) = self.withdrawal_groups.iter().find(|g| !groups.contains(g.as_str())) {
            return Err(Error::config(format!("withdrawal group {g:?} has no codes")));
        }
        Ok(())
    }

    /// Module-relevant codes in configuration order.
    pub fn relevant_codes(&self) -> impl Iterator<Item = &str> {
        self.codes.iter().map(|s| s.code.as_str())
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    /// Default distribution-module grouping: 15 codes in four features.
    ///
    /// Only `6000`/`6001`/`6002` (distribution OK/Error/Warning) are known
    /// identities; the storage-box and withdrawal codes are named placeholders
    /// to be replaced with the dataset's real codes.
    pub fn distribution_default() -> Self {
        let slot = |code: &str, group: &str, severity| CodeSlot { code: code.into(), group: group.into(), severity };
        let mut codes = vec![
            slot("6000", "distribution", Severity::Ok),
            slot("6001", "distribution", Severity::Error),
            slot("6002", "distribution", Severity::Warning),
            slot("WD_OK", "withdrawal", Severity::Ok),
            slot("WD_ERR", "withdrawal", Severity::Error),
        ];
        for k in 1..=5 {
            codes.push(slot(&format!("K7_{k}_OK"), &format!("k7_{k}"), Severity::Ok));
            codes.push(slot(&format!("K7_{k}_ERR"), &format!("k7_{k}"), Severity::Error));
        }
        let recipe = |name: &str, num: Severity, den: Severity, groups: &[&str]| FeatureRecipe {
            name: name.into(),
            numerator: vec![num],
            denominator: den,
            groups: groups.iter().map(|g| g.to_string()).collect(),
        };
        let features = vec![
            recipe("distribution_error_ratio", Severity::Error, Severity::Ok, &["distribution"]),
            recipe("distribution_warning_ratio", Severity::Warning, Severity::Ok, &["distribution"]),
            recipe("k7_error_ratio", Severity::Error, Severity::Ok, &["k7_1", "k7_2", "k7_3", "k7_4", "k7_5"]),
            recipe("withdrawal_error_ratio", Severity::Error, Severity::Ok, &["withdrawal"]),
        ];
        Self { codes, features, withdrawal_groups: vec!["withdrawal".into()] }
    }
}

/// Occurrences per (bucket, code).
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    pub codes: Vec<String>,
    /// One row per bucket, one column per code.
    pub counts: Vec<Vec<u32>>,
    pub start: DateTime<Utc>,
    pub period_hours: f64,
    /// Events whose code is outside the universe or whose time is outside the span.
    pub dropped: usize,
}

impl CountMatrix {
    pub fn buckets(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().map(|&c| c as u64).sum()
    }

    pub fn column(&self, code: &str) -> Option<usize> {
        self.codes.iter().position(|c| c == code)
    }
}

pub(crate) fn period_seconds(period_hours: f64) -> Result<i64> {
    let secs = (period_hours * 3600.0).round();
    if !(period_hours.is_finite() && secs >= 1.0) {
        return Err(Error::invalid(format!("resampling period must be positive, got {period_hours} h")));
    }
    Ok(secs as i64)
}

/// Floor `t` to the resampling grid anchored at the Unix epoch.
pub fn align_to_period(t: DateTime<Utc>, period_hours: f64) -> Result<DateTime<Utc>> {
    let p = period_seconds(period_hours)?;
    let secs = t.timestamp().div_euclid(p) * p;
    Ok(DateTime::from_timestamp(secs, 0).expect("aligned time in range"))
}

/// Count events per `period_hours` bucket, starting at the grid-aligned first event.
///
/// Buckets without events are explicit zero rows.
pub fn resample(records: &[EventRecord], period_hours: f64, universe: &[String]) -> Result<CountMatrix> {
    let first = records
        .iter()
        .map(|r| r.timestamp)
        .min()
        .ok_or_else(|| Error::invalid("cannot resample a cycle without events"))?;
    let last = records.iter().map(|r| r.timestamp).max().expect("non-empty");
    let start = align_to_period(first, period_hours)?;
    resample_within(records, period_hours, universe, start, last + Duration::seconds(1))
}

/// [`resample`] over the explicit span `[start, end)`.
pub fn resample_within(
    records: &[EventRecord],
    period_hours: f64,
    universe: &[String],
    start: DateTime<Utc>,
    end: DateTime<Utc>,
) -> Result<CountMatrix> {
    let p = period_seconds(period_hours)?;
    let span = (end - start).num_seconds().max(0);
    let rows = ((span + p - 1) / p).max(1) as usize;
    let column: HashMap<&str, usize> = universe.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut counts = vec![vec![0u32; universe.len()]; rows];
    let mut dropped = 0;
    for r in records {
        let offset = (r.timestamp - start).num_seconds();
        let bucket = offset.div_euclid(p);
        match column.get(r.event_code.as_str()) {
            Some(&c) if offset >= 0 && (bucket as usize) < rows => counts[bucket as usize][c] += 1,
            _ => dropped += 1,
        }
    }
    Ok(CountMatrix { codes: universe.to_vec(), counts, start, period_hours, dropped })
}

/// Identity of the cycle a feature series is built for.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleMeta {
    pub atm_id: String,
    pub cycle_index: u32,
    pub ended_in_failure: bool,
}

/// Ratio features per bucket; codes outside the configuration are ignored.
pub fn build_features(counts: &CountMatrix, config: &CodeGroupingConfig, meta: &CycleMeta) -> Result<LifeCycle> {
    config.validate()?;
    let mut slots: BTreeMap<(&str, Severity), Vec<usize>> = BTreeMap::new();
    for slot in &config.codes {
        let col = counts
            .column(&slot.code)
            .ok_or_else(|| Error::config(format!("configured code {:?} is missing from the count matrix", slot.code)))?;
        slots.entry((slot.group.as_str(), slot.severity)).or_default().push(col);
    }
    let columns_for = |groups: &[String], severity: Severity| -> Vec<usize> {
        groups
            .iter()
            .flat_map(|g| slots.get(&(g.as_str(), severity)).into_iter().flatten().copied())
            .collect()
    };
    let recipes: Vec<(Vec<usize>, Vec<usize>)> = config
        .features
        .iter()
        .map(|f| {
            let num = f.numerator.iter().flat_map(|&s| columns_for(&f.groups, s)).collect();
            (num, columns_for(&f.groups, f.denominator))
        })
        .collect();

    let samples = counts
        .counts
        .iter()
        .map(|row| {
            recipes
                .iter()
                .map(|(num, den)| {
                    let n: u64 = num.iter().map(|&c| row[c] as u64).sum();
                    let d: u64 = den.iter().map(|&c| row[c] as u64).sum();
                    n as f64 / d.max(1) as f64
                })
                .collect()
        })
        .collect();

    let withdrawal_cols: Vec<usize> = config
        .codes
        .iter()
        .filter(|s| config.withdrawal_groups.contains(&s.group))
        .filter_map(|s| counts.column(&s.code))
        .collect();
    let withdrawals = (!withdrawal_cols.is_empty())
        .then(|| counts.counts.iter().map(|row| withdrawal_cols.iter().map(|&c| row[c] as u64).sum::<u64>()).sum());

    Ok(LifeCycle::new(
        meta.atm_id.clone(),
        meta.cycle_index,
        counts.start,
        counts.period_hours,
        config.feature_names(),
        samples,
        meta.ended_in_failure,
    )?
    .with_withdrawal_events(withdrawals))
}
