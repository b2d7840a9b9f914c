//! Parameter grids, the parallel (cycle x configuration) evaluation, and the
//! results table on disk.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::{Bandwidth, SegmentCost};
use crate::detectors::{ChannelRule, DetectorConfig, FlussParams, Method, MethodKind, Penalized};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, best_average_config, best_per_sample, method_of, Aggregate, EvaluationRecord};
use crate::protocol::{run_streaming, Alert, AlertTiming, Verdict};
use crate::series::{BusinessParams, LifeCycle};

/// A list of values, given either literally or as an evenly spaced range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Values {
    List(Vec<f64>),
    /// `num` values from `start` to `stop` inclusive, evenly spaced in log10, rounded to 3 significant digits.
    LogSpace { log_space: Range },
    /// `num` values from `start` to `stop` inclusive.
    LinSpace { lin_space: Range },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub num: usize,
}

fn round_sig(x: f64, digits: usize) -> f64 {
    format!("{:.*e}", digits - 1, x).parse().expect("formatted float parses")
}

impl Values {
    pub fn expand(&self) -> Result<Vec<f64>> {
        let spaced = |r: &Range, f: &dyn Fn(f64) -> f64, inv: &dyn Fn(f64) -> f64| -> Result<Vec<f64>> {
            if r.num == 0 || !r.start.is_finite() || !r.stop.is_finite() {
                return Err(Error::Grid(format!("bad range {r:?}")));
            }
            if r.num == 1 {
                return Ok(vec![r.start]);
            }
            let (a, b) = (f(r.start), f(r.stop));
            Ok((0..r.num).map(|k| inv(a + (b - a) * k as f64 / (r.num - 1) as f64)).collect())
        };
        match self {
            Values::List(v) => Ok(v.clone()),
            Values::LogSpace { log_space } => {
                if log_space.start <= 0.0 || log_space.stop <= 0.0 {
                    return Err(Error::Grid("log-spaced ranges need positive bounds".into()));
                }
                spaced(log_space, &f64::log10, &|e| round_sig(10f64.powf(e), 3))
            }
            Values::LinSpace { lin_space } => spaced(lin_space, &|x| x, &|x| round_sig(x, 6)),
        }
    }
}

fn default_znorm() -> Vec<bool> {
    vec![true, false]
}

/// Grid for PELT, Binseg or BottomUp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenalizedGrid {
    /// Cost names as in detector ids: `l1`, `l2`, `normal`, `rbf`, `rbf:0.5`.
    pub costs: Vec<String>,
    pub penalties: Values,
    pub min_sizes: Vec<usize>,
    #[serde(default = "default_znorm")]
    pub znorm: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthSpec {
    /// Only `"median"` is accepted.
    Named(String),
    Gamma(f64),
}

impl BandwidthSpec {
    fn resolve(&self) -> Result<Bandwidth> {
        match self {
            BandwidthSpec::Named(s) if s == "median" => Ok(Bandwidth::Median),
            BandwidthSpec::Named(s) => Err(Error::Grid(format!("unknown bandwidth {s:?}"))),
            BandwidthSpec::Gamma(g) => Ok(Bandwidth::Fixed(*g)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KcpdGrid {
    pub bandwidths: Vec<BandwidthSpec>,
    pub penalties: Values,
    pub min_sizes: Vec<usize>,
    #[serde(default = "default_znorm")]
    pub znorm: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlussGrid {
    pub thresholds: Values,
    pub m: Vec<usize>,
    pub channel_rules: Vec<ChannelRule>,
    #[serde(default = "default_znorm")]
    pub znorm: Vec<bool>,
}

/// Per-method parameter lists; a missing method contributes no configurations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pelt: Option<PenalizedGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binseg: Option<PenalizedGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bottomup: Option<PenalizedGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kcpd: Option<KcpdGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fluss: Option<FlussGrid>,
}

/// The grid shipped with the toolkit.
pub const DEFAULT_GRID_JSON: &str = include_str!("../grids/default.json");

impl GridSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Grid(e.to_string()))
    }

    pub fn default_grid() -> Self {
        Self::from_json(DEFAULT_GRID_JSON).expect("shipped grid parses")
    }
}

fn penalized_configs(grid: &PenalizedGrid, wrap: fn(Penalized) -> Method, out: &mut Vec<DetectorConfig>) -> Result<()> {
    let penalties = grid.penalties.expand()?;
    for cost in &grid.costs {
        let cost: SegmentCost = cost.parse().map_err(|e: Error| Error::Grid(e.to_string()))?;
        for &penalty in &penalties {
            for &min_size in &grid.min_sizes {
                for &znorm in &grid.znorm {
                    out.push(DetectorConfig::new(wrap(Penalized { cost, penalty, min_size }), znorm)?);
                }
            }
        }
    }
    Ok(())
}

/// Expand a spec into configurations, grouped by method in the order
/// PELT, Binseg, BottomUp, KCPD, FLUSS, each in nested parameter order.
pub fn build_grid(spec: &GridSpec) -> Result<Vec<DetectorConfig>> {
    let mut out = Vec::new();
    let grid_err = |e: Error| Error::Grid(e.to_string());
    if let Some(g) = &spec.pelt {
        penalized_configs(g, Method::Pelt, &mut out).map_err(grid_err)?;
    }
    if let Some(g) = &spec.binseg {
        penalized_configs(g, Method::Binseg, &mut out).map_err(grid_err)?;
    }
    if let Some(g) = &spec.bottomup {
        penalized_configs(g, Method::BottomUp, &mut out).map_err(grid_err)?;
    }
    if let Some(g) = &spec.kcpd {
        let penalties = g.penalties.expand()?;
        for bw in &g.bandwidths {
            let bandwidth = bw.resolve()?;
            for &penalty in &penalties {
                for &min_size in &g.min_sizes {
                    for &znorm in &g.znorm {
                        let method = Method::Kcpd { bandwidth, penalty, min_size };
                        out.push(DetectorConfig::new(method, znorm).map_err(grid_err)?);
                    }
                }
            }
        }
    }
    if let Some(g) = &spec.fluss {
        for threshold in g.thresholds.expand()? {
            for &m in &g.m {
                for &channel_rule in &g.channel_rules {
                    for &znorm in &g.znorm {
                        let method = Method::Fluss(FlussParams { threshold, m, channel_rule });
                        out.push(DetectorConfig::new(method, znorm).map_err(grid_err)?);
                    }
                }
            }
        }
    }
    let mut seen = HashSet::new();
    for c in &out {
        if !seen.insert(c.id()) {
            return Err(Error::Grid(format!("configuration {} appears twice", c.id())));
        }
    }
    Ok(out)
}

/// Number of configurations per method.
pub fn grid_counts(configs: &[DetectorConfig]) -> BTreeMap<MethodKind, usize> {
    let mut counts = BTreeMap::new();
    for c in configs {
        *counts.entry(c.kind()).or_default() += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub params: BusinessParams,
    /// Window step in samples.
    pub step: usize,
    pub timing: AlertTiming,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
}

/// A pair that could not be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFailure {
    pub atm_id: String,
    pub cycle_index: u32,
    pub config_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    /// Canonically sorted by `(atm_id, cycle_index, config_id)`.
    pub records: Vec<EvaluationRecord>,
    pub failures: Vec<PairFailure>,
    /// Pairs taken from a previous partial run instead of being evaluated.
    pub resumed: usize,
}

/// Failures above this share of all pairs make the run as a whole unusable.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

impl SweepOutcome {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn failure_fraction(&self) -> f64 {
        let total = self.records.len() + self.failures.len();
        if total == 0 {
            0.0
        } else {
            self.failures.len() as f64 / total as f64
        }
    }
}

/// Evaluate one pair through the streaming protocol and score it.
pub fn evaluate_pair(cycle: &LifeCycle, config: &DetectorConfig, options: &SweepOptions) -> Result<EvaluationRecord> {
    let alert = run_streaming(cycle, config, options.step, options.timing)?;
    EvaluationRecord::score(
        cycle.atm_id(),
        cycle.cycle_index(),
        config.id(),
        alert,
        cycle.len(),
        cycle.ended_in_failure(),
        &options.params,
        cycle.period_hours(),
    )
}

pub fn sort_records(records: &mut [EvaluationRecord]) {
    records.sort_by(|a, b| {
        (a.atm_id.as_str(), a.cycle_index, a.config_id.as_str()).cmp(&(b.atm_id.as_str(), b.cycle_index, b.config_id.as_str()))
    });
}

/// Evaluate every (cycle, configuration) pair not already present in `previous`.
///
/// `on_record` sees each new record as soon as it is computed, from worker
/// threads and in no particular order. The returned table is sorted and
/// independent of the worker count.
pub fn run_sweep(
    cycles: &[LifeCycle],
    configs: &[DetectorConfig],
    options: &SweepOptions,
    previous: Vec<EvaluationRecord>,
    on_record: &(dyn Fn(&EvaluationRecord) + Sync),
) -> Result<SweepOutcome> {
    if cycles.is_empty() {
        return Err(Error::invalid("a sweep needs at least one cycle"));
    }
    if options.step == 0 {
        return Err(Error::invalid("window step must be at least one sample"));
    }
    options.params.validate()?;

    let ids: Vec<String> = configs.iter().map(DetectorConfig::id).collect();
    let wanted: HashSet<(&str, u32, &str)> = cycles
        .iter()
        .flat_map(|c| ids.iter().map(move |id| (c.atm_id(), c.cycle_index(), id.as_str())))
        .collect();
    let mut done = HashSet::new();
    let mut kept = Vec::new();
    for r in previous {
        let key = (r.atm_id.clone(), r.cycle_index, r.config_id.clone());
        if wanted.contains(&(key.0.as_str(), key.1, key.2.as_str())) && done.insert(key) {
            kept.push(r);
        }
    }
    let resumed = kept.len();

    let pairs: Vec<(usize, usize)> = (0..cycles.len())
        .flat_map(|i| (0..configs.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| {
            let c = &cycles[i];
            !done.contains(&(c.atm_id().to_string(), c.cycle_index(), ids[j].clone()))
        })
        .collect();

    let total = pairs.len();
    let finished = AtomicUsize::new(0);
    let report_every = (total / 20).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    log::info!("evaluating {total} pairs ({resumed} resumed) on {} workers", pool.current_num_threads());

    let results: Vec<std::result::Result<EvaluationRecord, PairFailure>> = pool.install(|| {
        pairs
            .par_iter()
            .map(|&(i, j)| {
                let cycle = &cycles[i];
                let outcome = catch_unwind(AssertUnwindSafe(|| evaluate_pair(cycle, &configs[j], options)));
                let result = match outcome {
                    Ok(Ok(record)) => {
                        on_record(&record);
                        Ok(record)
                    }
                    Ok(Err(e)) => Err(e.to_string()),
                    Err(panic) => Err(panic
                        .downcast_ref::<&str>()
                        .map(|s| s.to_string())
                        .or_else(|| panic.downcast_ref::<String>().cloned())
                        .unwrap_or_else(|| "evaluation panicked".into())),
                };
                let k = finished.fetch_add(1, Ordering::Relaxed) + 1;
                if k % report_every == 0 || k == total {
                    log::info!("progress {k}/{total}");
                }
                result.map_err(|reason| PairFailure {
                    atm_id: cycle.atm_id().to_string(),
                    cycle_index: cycle.cycle_index(),
                    config_id: ids[j].clone(),
                    reason,
                })
            })
            .collect()
    });

    let mut records = kept;
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(f) => failures.push(f),
        }
    }
    sort_records(&mut records);
    failures.sort_by(|a, b| (&a.atm_id, a.cycle_index, &a.config_id).cmp(&(&b.atm_id, b.cycle_index, &b.config_id)));
    Ok(SweepOutcome { records, failures, resumed })
}

/// One row of the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ResultRow {
    atm_id: String,
    cycle_index: u32,
    config_id: String,
    verdict: Verdict,
    step_end_index: Option<usize>,
    change_point_index: Option<usize>,
    a: Option<usize>,
    n: usize,
    e_score: f64,
}

impl From<&EvaluationRecord> for ResultRow {
    fn from(r: &EvaluationRecord) -> Self {
        Self {
            atm_id: r.atm_id.clone(),
            cycle_index: r.cycle_index,
            config_id: r.config_id.clone(),
            verdict: r.verdict,
            step_end_index: r.alert.map(|a| a.step_end_index),
            change_point_index: r.alert.map(|a| a.change_point_index),
            a: r.alert.map(|a| a.a),
            n: r.n,
            e_score: r.e_score,
        }
    }
}

impl TryFrom<ResultRow> for EvaluationRecord {
    type Error = String;

    fn try_from(r: ResultRow) -> std::result::Result<Self, String> {
        let alert = match (r.step_end_index, r.change_point_index, r.a) {
            (Some(step_end_index), Some(change_point_index), Some(a)) => {
                Some(Alert { step_end_index, change_point_index, a })
            }
            (None, None, None) => None,
            _ => return Err("alert columns must be all set or all empty".into()),
        };
        if !(0.0..=1.0).contains(&r.e_score) {
            return Err(format!("e_score {} outside [0, 1]", r.e_score));
        }
        Ok(Self {
            atm_id: r.atm_id,
            cycle_index: r.cycle_index,
            config_id: r.config_id,
            verdict: r.verdict,
            alert,
            e_score: r.e_score,
            n: r.n,
        })
    }
}

/// Column order of the results file.
pub const RESULT_COLUMNS: [&str; 9] =
    ["atm_id", "cycle_index", "config_id", "verdict", "step_end_index", "change_point_index", "a", "n", "e_score"];

/// Appends records one line at a time, flushing after each.
pub struct ResultsAppender {
    writer: csv::Writer<File>,
}

impl ResultsAppender {
    /// Open `path` for appending, writing the header if the file is new or empty.
    pub fn open(path: &Path) -> Result<Self> {
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            writer.write_record(RESULT_COLUMNS)?;
            writer.flush()?;
        }
        Ok(Self { writer })
    }

    pub fn append(&mut self, record: &EvaluationRecord) -> Result<()> {
        self.writer.serialize(ResultRow::from(record))?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Write a full table (header plus rows in the given order), replacing `path` atomically.
pub fn write_results(path: &Path, records: &[EvaluationRecord]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        if records.is_empty() {
            w.write_record(RESULT_COLUMNS)?;
        }
        for r in records {
            w.serialize(ResultRow::from(r))?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_rows(path: &Path, lenient: bool) -> Result<(Vec<EvaluationRecord>, usize)> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().ne(RESULT_COLUMNS) {
        return Err(Error::Malformed { path: path.to_path_buf(), reason: "unexpected header".into() });
    }
    let mut out = Vec::new();
    let mut skipped = 0;
    for (k, row) in reader.deserialize::<ResultRow>().enumerate() {
        let parsed = row.map_err(|e| e.to_string()).and_then(EvaluationRecord::try_from);
        match parsed {
            Ok(r) => out.push(r),
            Err(_) if lenient => skipped += 1,
            Err(reason) => {
                return Err(Error::Malformed { path: path.to_path_buf(), reason: format!("row {}: {reason}", k + 2) })
            }
        }
    }
    Ok((out, skipped))
}

pub fn read_results(path: &Path) -> Result<Vec<EvaluationRecord>> {
    read_rows(path, false).map(|(r, _)| r)
}

/// Read what survived an interrupted run; unreadable rows (such as a
/// half-written last line) are skipped and counted.
pub fn recover_results(path: &Path) -> Result<(Vec<EvaluationRecord>, usize)> {
    read_rows(path, true)
}

/// Sidecar written next to a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsMeta {
    pub version: String,
    pub dataset_fingerprint: String,
    pub configs: Vec<String>,
    pub params: BusinessParams,
    pub period_hours: f64,
    pub step: usize,
    pub alert_at: AlertTiming,
    pub partial: bool,
    pub failures: Vec<PairFailure>,
    /// Cycles that had not failed when the data ended, as `(atm_id, cycle_index)`.
    pub unfailed_cycles: Vec<(String, u32)>,
}

pub fn meta_path(results: &Path) -> PathBuf {
    results.with_extension("meta.json")
}

/// Scores of one method at one padding value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub configs: usize,
    pub best_average_config: String,
    pub best_average: Aggregate,
    pub best_per_sample_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaddingSummary {
    pub pp: f64,
    pub methods: BTreeMap<String, MethodSummary>,
    /// Over all methods at once.
    pub overall: Option<MethodSummary>,
}

fn summarize_method(records: &[EvaluationRecord]) -> Result<Option<MethodSummary>> {
    let Some((id, best_average)) = best_average_config(records)? else {
        return Ok(None);
    };
    let configs = records.iter().map(|r| r.config_id.as_str()).collect::<BTreeSet<_>>().len();
    let bps = best_per_sample(records)?;
    Ok(Some(MethodSummary { configs, best_average_config: id, best_average, best_per_sample_mean: bps.mean }))
}

/// Rescore `records` at each padding value and summarize per method.
///
/// `unfailed` lists the cycles that did not end in failure.
pub fn summarize(
    records: &[EvaluationRecord],
    unfailed: &BTreeSet<(String, u32)>,
    base: &BusinessParams,
    period_hours: f64,
    pp_values: &[f64],
) -> Result<Vec<PaddingSummary>> {
    let mut out = Vec::with_capacity(pp_values.len());
    for &pp in pp_values {
        let params = BusinessParams::new(base.rd, pp, base.ii, base.s)?;
        let rescored = records
            .iter()
            .map(|r| {
                let ended = !unfailed.contains(&(r.atm_id.clone(), r.cycle_index));
                r.rescore(ended, &params, period_hours)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut by_method: BTreeMap<String, Vec<EvaluationRecord>> = BTreeMap::new();
        for r in &rescored {
            by_method.entry(method_of(&r.config_id).to_string()).or_default().push(r.clone());
        }
        let mut methods = BTreeMap::new();
        for (m, recs) in &by_method {
            if let Some(s) = summarize_method(recs)? {
                methods.insert(m.clone(), s);
            }
        }
        out.push(PaddingSummary { pp, methods, overall: summarize_method(&rescored)? });
    }
    Ok(out)
}

/// Aggregate of one configuration's records, for single-config reports.
pub fn config_aggregate(records: &[EvaluationRecord]) -> Result<Aggregate> {
    aggregate(records)
}

/// Append-only sink shared by worker threads.
pub struct SharedAppender(pub std::sync::Mutex<ResultsAppender>);

impl SharedAppender {
    pub fn push(&self, record: &EvaluationRecord) {
        let mut guard = self.0.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = guard.append(record) {
            log::warn!("could not persist a record incrementally: {e}");
        }
    }
}

/// Write `value` as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::Detection;

    fn pelt_only(costs: &[&str], penalties: Vec<f64>) -> GridSpec {
        GridSpec {
            pelt: Some(PenalizedGrid {
                costs: costs.iter().map(|c| c.to_string()).collect(),
                penalties: Values::List(penalties),
                min_sizes: vec![2],
                znorm: vec![true],
            }),
            ..GridSpec::default()
        }
    }

    #[test]
    fn cartesian_count() {
        assert_eq!(build_grid(&pelt_only(&["l2", "rbf"], vec![1.0, 10.0, 100.0])).unwrap().len(), 6);
        assert!(build_grid(&GridSpec::default()).unwrap().is_empty());
    }

    #[test]
    fn duplicates_rejected() {
        assert!(matches!(build_grid(&pelt_only(&["l2"], vec![1.0, 1.0])), Err(Error::Grid(_))));
    }

    #[test]
    fn shipped_grid_sizes() {
        let configs = build_grid(&GridSpec::default_grid()).unwrap();
        let counts = grid_counts(&configs);
        assert_eq!(counts.len(), 5);
        for (method, n) in counts {
            assert!((250..=350).contains(&n), "{method}: {n}");
        }
    }

    #[test]
    fn log_space_rounding() {
        let v = Values::LogSpace { log_space: Range { start: 0.01, stop: 1000.0, num: 11 } }.expand().unwrap();
        assert_eq!(v.len(), 11);
        assert_eq!(v[0], 0.01);
        assert_eq!(v[1], 0.0316);
        assert_eq!(v[10], 1000.0);
    }

    #[test]
    fn grid_json_round_trip() {
        let spec = GridSpec::default_grid();
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(GridSpec::from_json(&json).unwrap(), spec);
        assert!(GridSpec::from_json(r#"{"pelt": {"costs": ["l9"], "penalties": [1], "min_sizes": [2]}}"#)
            .and_then(|s| build_grid(&s))
            .is_err());
    }

    fn options(workers: usize) -> SweepOptions {
        SweepOptions { params: BusinessParams::default(), step: 7, timing: AlertTiming::WindowEnd, workers }
    }

    fn corpus() -> Vec<LifeCycle> {
        (0..4)
            .map(|k| {
                let samples = (0..40).map(|t| vec![if t >= 30 + k { 5.0 } else { (t % 3) as f64 * 0.1 }]).collect();
                LifeCycle::from_samples(format!("m{}", k % 2), k as u32, samples).unwrap()
            })
            .collect()
    }

    #[test]
    fn never_firing_gives_false_negative() {
        let cycles = vec![LifeCycle::from_samples("a", 0, vec![vec![1.0]; 20]).unwrap()];
        let config = DetectorConfig::pelt(SegmentCost::L2, 1e6, 2, false).unwrap();
        let out = run_sweep(&cycles, &[config], &options(1), vec![], &|_| {}).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].verdict, Verdict::FalseNegative);
        assert_eq!(Detection::none().change_point, None);
    }

    #[test]
    fn deterministic_across_workers_and_resumable() {
        let configs = build_grid(&pelt_only(&["l2", "l1"], vec![0.5, 5.0, 50.0])).unwrap();
        let cycles = corpus();
        let one = run_sweep(&cycles, &configs, &options(1), vec![], &|_| {}).unwrap();
        let many = run_sweep(&cycles, &configs, &options(8), vec![], &|_| {}).unwrap();
        assert_eq!(one, many);
        assert_eq!(one.records.len(), cycles.len() * configs.len());

        let partial: Vec<_> = one.records.iter().step_by(3).cloned().collect();
        let resumed = run_sweep(&cycles, &configs, &options(3), partial.clone(), &|_| {}).unwrap();
        assert_eq!(resumed.resumed, partial.len());
        assert_eq!(resumed.records, one.records);
    }

    #[test]
    fn results_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let configs = build_grid(&pelt_only(&["l2"], vec![0.5, 500.0])).unwrap();
        let out = run_sweep(&corpus(), &configs, &options(2), vec![], &|_| {}).unwrap();
        write_results(&path, &out.records).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("atm_id,cycle_index,config_id,verdict,step_end_index,change_point_index,a,n,e_score\n"));
        assert_eq!(read_results(&path).unwrap(), out.records);
    }

    #[test]
    fn appender_survives_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let configs = build_grid(&pelt_only(&["l2"], vec![0.5])).unwrap();
        let out = run_sweep(&corpus(), &configs, &options(1), vec![], &|_| {}).unwrap();
        let mut app = ResultsAppender::open(&path).unwrap();
        for r in &out.records[..3] {
            app.append(r).unwrap();
        }
        drop(app);
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("m1,3,pelt/l2/0.5");
        fs::write(&path, text).unwrap();
        let (recovered, skipped) = recover_results(&path).unwrap();
        assert_eq!(recovered, out.records[..3]);
        assert_eq!(skipped, 1);
        assert!(read_results(&path).is_err());
    }

    #[test]
    fn summary_dominance() {
        let configs = build_grid(&pelt_only(&["l2", "l1", "normal"], vec![0.5, 5.0, 50.0])).unwrap();
        let out = run_sweep(&corpus(), &configs, &options(2), vec![], &|_| {}).unwrap();
        let summary =
            summarize(&out.records, &BTreeSet::new(), &BusinessParams::default(), 24.0, &[7.0, 14.0, 21.0]).unwrap();
        assert_eq!(summary.len(), 3);
        for s in &summary {
            for m in s.methods.values() {
                assert!(m.best_per_sample_mean >= m.best_average.mean_e);
            }
        }
    }
}
