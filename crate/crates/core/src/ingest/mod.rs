//! From raw event logs to per-life-cycle feature series.
//!
//! The steps are independent functions so each can be tested alone:
//! [`parse_event_log`], [`remove_infected`], [`split_by_failures`],
//! [`resample`] and [`build_features`]. [`ingest`] chains them.

mod features;
mod parse;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

pub use features::{
    align_to_period, build_features, resample, resample_within, CodeGroupingConfig, CodeSlot, CountMatrix, CycleMeta,
    FeatureRecipe, Severity,
};
pub use parse::{
    parse_event_log, parse_failures, parse_timestamp, Column, ColumnMapping, EventRecord, FailureMark, ParsedLog,
    MAX_MALFORMED_FRACTION,
};

use crate::error::{Error, Result};
use crate::series::LifeCycle;

fn days(d: f64) -> Duration {
    Duration::milliseconds((d * 86_400_000.0).round() as i64)
}

/// Drop every event of a machine that falls in `[f, f + ii]` for one of its failures `f`.
pub fn remove_infected(records: &[EventRecord], failures: &[FailureMark], ii_days: f64) -> Vec<EventRecord> {
    if ii_days <= 0.0 || failures.is_empty() {
        return records.to_vec();
    }
    let width = days(ii_days);
    let mut by_atm: HashMap<&str, Vec<DateTime<Utc>>> = HashMap::new();
    for f in failures {
        by_atm.entry(f.atm_id.as_str()).or_default().push(f.failure_time);
    }
    records
        .iter()
        .filter(|r| {
            by_atm
                .get(r.atm_id.as_str())
                .map_or(true, |fs| !fs.iter().any(|&f| r.timestamp >= f && r.timestamp <= f + width))
        })
        .cloned()
        .collect()
}

/// Assign life-cycle ids from failure marks: an event's cycle is the number
/// of failures of its machine at or before its timestamp.
pub fn split_by_failures(records: &[EventRecord], failures: &[FailureMark]) -> Vec<EventRecord> {
    let mut by_atm: HashMap<&str, Vec<DateTime<Utc>>> = HashMap::new();
    for f in failures {
        by_atm.entry(f.atm_id.as_str()).or_default().push(f.failure_time);
    }
    for times in by_atm.values_mut() {
        times.sort();
    }
    let mut out: Vec<EventRecord> = records
        .iter()
        .map(|r| {
            let k = by_atm.get(r.atm_id.as_str()).map_or(0, |fs| fs.partition_point(|&f| f <= r.timestamp));
            EventRecord { lifecycle_id: k as u32, ..r.clone() }
        })
        .collect();
    out.sort_by(|a, b| (&a.atm_id, a.lifecycle_id, a.timestamp).cmp(&(&b.atm_id, b.lifecycle_id, b.timestamp)));
    out
}

/// How the ingestion pipeline is set up.
#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub grouping: CodeGroupingConfig,
    pub period_hours: f64,
    pub ii_days: f64,
    /// Derive cycle ids from the failure marks instead of the log's own column.
    pub split_on_failures: bool,
}

/// Counts reported after ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records: usize,
    pub malformed: usize,
    pub removed_infected: usize,
    pub unique_codes: usize,
    pub cycles: usize,
    pub atms: usize,
}

/// Build every life cycle in a parsed log.
///
/// With failure marks, cycle `k` of a machine ended in failure when the
/// machine has more than `k` failures, and its span runs to that failure.
/// Without them every cycle is taken to end in failure at its last event.
pub fn ingest(log: &ParsedLog, failures: &[FailureMark], options: &IngestOptions) -> Result<(Vec<LifeCycle>, IngestReport)> {
    options.grouping.validate()?;
    if log.records.is_empty() {
        return Err(Error::invalid("the event log contains no records"));
    }
    let unique_codes = log.records.iter().map(|r| r.event_code.as_str()).collect::<BTreeSet<_>>().len();
    let cleaned = remove_infected(&log.records, failures, options.ii_days);
    let removed_infected = log.records.len() - cleaned.len();
    let cleaned = if options.split_on_failures { split_by_failures(&cleaned, failures) } else { cleaned };

    let mut failure_times: BTreeMap<&str, Vec<DateTime<Utc>>> = BTreeMap::new();
    for f in failures {
        failure_times.entry(f.atm_id.as_str()).or_default().push(f.failure_time);
    }
    for times in failure_times.values_mut() {
        times.sort();
    }

    let mut groups: BTreeMap<(&str, u32), Vec<EventRecord>> = BTreeMap::new();
    for r in &cleaned {
        groups.entry((r.atm_id.as_str(), r.lifecycle_id)).or_default().push(r.clone());
    }

    let universe: Vec<String> = options.grouping.relevant_codes().map(String::from).collect();
    let mut cycles = Vec::with_capacity(groups.len());
    for ((atm, id), records) in &groups {
        let failure = if failures.is_empty() {
            None
        } else {
            Some(failure_times.get(atm).and_then(|fs| fs.get(*id as usize)).copied())
        };
        let first = records.iter().map(|r| r.timestamp).min().expect("group is non-empty");
        let last = records.iter().map(|r| r.timestamp).max().expect("group is non-empty");
        let start = align_to_period(first, options.period_hours)?;
        let end = match failure {
            Some(Some(f)) if f > last => f,
            _ => last + Duration::seconds(1),
        };
        let counts = resample_within(records, options.period_hours, &universe, start, end)?;
        let meta = CycleMeta {
            atm_id: atm.to_string(),
            cycle_index: *id,
            ended_in_failure: failure.map_or(true, |f| f.is_some()),
        };
        cycles.push(build_features(&counts, &options.grouping, &meta)?);
    }

    let atms = cycles.iter().map(|c| c.atm_id()).collect::<BTreeSet<_>>().len();
    let report = IngestReport {
        records: log.records.len(),
        malformed: log.malformed,
        removed_infected,
        unique_codes,
        cycles: cycles.len(),
        atms,
    };
    Ok((cycles, report))
}

/// Duration and activity statistics for ATMs with the same number of cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleGroupStats {
    pub cycles_per_atm: usize,
    pub atms: usize,
    pub cycles: usize,
    pub min_duration_days: f64,
    pub median_duration_days: f64,
    pub max_duration_days: f64,
    /// Mean over cycles of withdrawal events per day; absent when no cycle records withdrawals.
    pub mean_daily_withdrawals: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total_cycles: usize,
    pub total_atms: usize,
    pub groups: Vec<CycleGroupStats>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Group cycles by how many cycles their ATM has and summarize each group.
pub fn dataset_stats(cycles: &[LifeCycle]) -> DatasetStats {
    let mut per_atm: BTreeMap<&str, Vec<&LifeCycle>> = BTreeMap::new();
    for c in cycles {
        per_atm.entry(c.atm_id()).or_default().push(c);
    }
    let mut by_count: BTreeMap<usize, Vec<&LifeCycle>> = BTreeMap::new();
    let mut atm_counts: BTreeMap<usize, usize> = BTreeMap::new();
    for list in per_atm.values() {
        by_count.entry(list.len()).or_default().extend(list.iter().copied());
        *atm_counts.entry(list.len()).or_default() += 1;
    }
    let groups = by_count
        .into_iter()
        .map(|(k, list)| {
            let mut durations: Vec<f64> = list.iter().map(|c| c.duration_days()).collect();
            durations.sort_by(f64::total_cmp);
            let rates: Vec<f64> = list
                .iter()
                .filter_map(|c| c.withdrawal_events().map(|w| w as f64 / c.duration_days()))
                .collect();
            CycleGroupStats {
                cycles_per_atm: k,
                atms: atm_counts[&k],
                cycles: list.len(),
                min_duration_days: durations[0],
                median_duration_days: median(&durations),
                max_duration_days: durations[durations.len() - 1],
                mean_daily_withdrawals: (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64),
            }
        })
        .collect();
    DatasetStats { total_cycles: cycles.len(), total_atms: per_atm.len(), groups }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap()
    }

    fn ev(atm: &str, day: f64, code: &str) -> EventRecord {
        EventRecord { timestamp: t0() + days(day), atm_id: atm.into(), lifecycle_id: 0, event_code: code.into() }
    }

    fn fail(atm: &str, day: f64) -> FailureMark {
        FailureMark { atm_id: atm.into(), failure_time: t0() + days(day), module: "distribution".into() }
    }

    #[test]
    fn zero_width_interval_keeps_everything() {
        let recs = vec![ev("a", 10.0, "6000"), ev("a", 10.5, "6000")];
        assert_eq!(remove_infected(&recs, &[fail("a", 10.0)], 0.0), recs);
    }

    #[test]
    fn infected_day_removed() {
        let recs = vec![ev("a", 9.0, "6000"), ev("a", 10.5, "6000"), ev("a", 11.5, "6000"), ev("b", 10.5, "6000")];
        let out = remove_infected(&recs, &[fail("a", 10.0)], 1.0);
        assert_eq!(out, vec![recs[0].clone(), recs[2].clone(), recs[3].clone()]);
    }

    #[test]
    fn closed_interval_edges() {
        let recs = vec![ev("a", 10.0, "x"), ev("a", 11.0, "x")];
        assert!(remove_infected(&recs, &[fail("a", 10.0)], 1.0).is_empty());
    }

    #[test]
    fn overlapping_intervals() {
        let recs: Vec<_> = (0..40).map(|i| ev("a", 9.0 + i as f64 * 0.1, "x")).collect();
        let out = remove_infected(&recs, &[fail("a", 10.0), fail("a", 10.5)], 1.0);
        // removed span is [10.0, 11.5]
        let kept: Vec<f64> = out.iter().map(|r| (r.timestamp - t0()).num_milliseconds() as f64 / 86_400_000.0).collect();
        assert!(kept.iter().all(|&d| !(10.0 - 1e-9..=11.5 + 1e-9).contains(&d)));
        assert_eq!(out.len(), 40 - 16);
    }

    #[test]
    fn split_assigns_cycles() {
        let recs = vec![ev("a", 1.0, "x"), ev("a", 5.0, "x"), ev("a", 12.0, "x"), ev("b", 3.0, "x")];
        let out = split_by_failures(&recs, &[fail("a", 5.0), fail("a", 10.0)]);
        let ids: Vec<(String, u32)> = out.iter().map(|r| (r.atm_id.clone(), r.lifecycle_id)).collect();
        assert_eq!(ids, [("a".into(), 0), ("a".into(), 1), ("a".into(), 2), ("b".into(), 0)]);
    }

    fn options() -> IngestOptions {
        IngestOptions {
            grouping: CodeGroupingConfig::distribution_default(),
            period_hours: 24.0,
            ii_days: 1.0,
            split_on_failures: true,
        }
    }

    #[test]
    fn pipeline_builds_cycles() {
        let mut records = Vec::new();
        for d in 0..20 {
            records.push(ev("a", d as f64 + 0.25, "6000"));
            if d >= 15 {
                records.push(ev("a", d as f64 + 0.5, "6001"));
            }
        }
        records.push(ev("a", 20.5, "6000"));
        records.push(ev("a", 23.0, "6000"));
        records.push(ev("a", 23.0, "9999"));
        let log = ParsedLog { records, malformed: 0, malformed_lines: vec![] };
        let (cycles, report) = ingest(&log, &[fail("a", 20.0)], &options()).unwrap();
        assert_eq!(report.removed_infected, 1);
        assert_eq!(report.unique_codes, 3);
        assert_eq!((report.cycles, report.atms), (2, 1));
        let first = &cycles[0];
        assert!(first.ended_in_failure());
        assert_eq!(first.len(), 20);
        assert_eq!(first.samples()[14][0], 0.0);
        assert_eq!(first.samples()[15][0], 1.0);
        assert!(!cycles[1].ended_in_failure());
    }

    #[test]
    fn empty_log_is_an_error() {
        let log = ParsedLog { records: vec![], malformed: 0, malformed_lines: vec![] };
        assert!(ingest(&log, &[], &options()).is_err());
    }

    fn cycle(atm: &str, idx: u32, n: usize) -> LifeCycle {
        LifeCycle::from_samples(atm, idx, vec![vec![0.0]; n]).unwrap()
    }

    #[test]
    fn stats_single_cycle() {
        let s = dataset_stats(&[cycle("a", 0, 30)]);
        assert_eq!(s.groups.len(), 1);
        assert_eq!(s.groups[0].median_duration_days, 30.0);
        assert_eq!(s.groups[0].mean_daily_withdrawals, None);
    }

    #[test]
    fn stats_two_groups() {
        let cycles = vec![
            cycle("a", 0, 10),
            cycle("b", 0, 10),
            cycle("b", 1, 20),
            cycle("b", 2, 40).with_withdrawal_events(Some(80)),
        ];
        let s = dataset_stats(&cycles);
        assert_eq!((s.total_cycles, s.total_atms), (4, 2));
        let counts: Vec<(usize, usize)> = s.groups.iter().map(|g| (g.cycles_per_atm, g.cycles)).collect();
        assert_eq!(counts, [(1, 1), (3, 3)]);
        assert_eq!(s.groups[1].median_duration_days, 20.0);
        assert_eq!(s.groups[1].max_duration_days, 40.0);
        assert_eq!(s.groups[1].mean_daily_withdrawals, Some(2.0));
    }

    proptest! {
        #[test]
        fn removal_is_idempotent(
            times in prop::collection::vec(0.0f64..30.0, 0..60),
            fails in prop::collection::vec(0.0f64..30.0, 0..4),
            ii in 0.0f64..3.0,
        ) {
            let recs: Vec<_> = times.iter().map(|&d| ev("a", d, "x")).collect();
            let marks: Vec<_> = fails.iter().map(|&d| fail("a", d)).collect();
            let once = remove_infected(&recs, &marks, ii);
            prop_assert_eq!(remove_infected(&once, &marks, ii), once);
        }
    }
}
