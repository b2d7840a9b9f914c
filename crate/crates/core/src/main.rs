use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use cli_error::{fail, CliResult};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use maintseg::cycles::{fingerprint, read_cycles, write_cycles};
use maintseg::ingest::{dataset_stats, ingest, parse_event_log, parse_failures, CodeGroupingConfig, ColumnMapping, IngestOptions};
use maintseg::metrics::{aggregate, best_per_sample, model_stability, StabilityLevel};
use maintseg::protocol::run_streaming_traced;
use maintseg::sweep::{
    build_grid, grid_counts, meta_path, recover_results, read_results, run_sweep, summarize, write_json, write_results,
    GridSpec, ResultsAppender, ResultsMeta, SharedAppender, SweepOptions, MAX_FAILURE_FRACTION,
};
use maintseg::synth::{generate, SynthSpec};
use maintseg::{AlertTiming, BusinessParams, DetectorConfig, EvaluationRecord, LifeCycle, VERSION};

/// Minimal error plumbing for the binary: every failure becomes a message and an exit code.
mod cli_error {
    pub struct CliError {
        pub message: String,
        pub code: u8,
    }

    pub type CliResult<T = ()> = Result<T, CliError>;

    impl<E: std::fmt::Display> From<E> for CliError {
        fn from(e: E) -> Self {
            CliError { message: e.to_string(), code: 1 }
        }
    }

    pub fn fail<T>(message: impl Into<String>) -> CliResult<T> {
        Err(CliError { message: message.into(), code: 1 })
    }
}

#[derive(Parser, Debug)]
#[command(name = "maintseg", version, about = "Evaluate change-point detectors as predictive-maintenance alerting")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// Responsive duration in days.
    #[arg(long, global = true, default_value_t = 1.0)]
    rd: f64,
    /// Predictive padding in days.
    #[arg(long, global = true, default_value_t = 14.0)]
    pp: f64,
    /// Sensibility of the score to early alerts.
    #[arg(long, global = true, default_value_t = 0.2)]
    s: f64,
    /// Infected interval in days, removed after each failure during ingestion.
    #[arg(long, global = true, default_value_t = 1.0)]
    ii: f64,
    /// Window growth step in days.
    #[arg(long, global = true, default_value_t = 7.0)]
    step: f64,
    /// Which instant counts as the alert time.
    #[arg(long = "alert-at", global = true, value_enum, default_value_t = AlertAt::WindowEnd)]
    alert_at: AlertAt,
    /// Worker threads for sweeps (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "maintseg-out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum AlertAt {
    WindowEnd,
    Changepoint,
}

impl From<AlertAt> for AlertTiming {
    fn from(a: AlertAt) -> Self {
        match a {
            AlertAt::WindowEnd => AlertTiming::WindowEnd,
            AlertAt::Changepoint => AlertTiming::ChangePoint,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turn a raw event log into canonical cycle files.
    Ingest {
        #[arg(long)]
        log: PathBuf,
        /// Code grouping JSON; the built-in distribution grouping when omitted.
        #[arg(long)]
        grouping: Option<PathBuf>,
        /// Column mapping JSON; a header with timestamp, atm_id, lifecycle_id, event_code when omitted.
        #[arg(long)]
        mapping: Option<PathBuf>,
        /// Failure marks (atm_id, failure_time[, module]).
        #[arg(long)]
        failures: Option<PathBuf>,
        /// Derive cycle boundaries from the failure marks.
        #[arg(long, requires = "failures")]
        split_on_failures: bool,
        /// Resampling period in hours.
        #[arg(long, default_value_t = 24.0)]
        period_hours: f64,
    },
    /// Run one configuration over a corpus and write traces.
    Evaluate {
        #[arg(long)]
        cycles: PathBuf,
        /// Detector id, e.g. pelt/l2/10/2/-/z/-
        #[arg(long)]
        config: String,
    },
    /// Run every configuration of a grid over a corpus.
    Sweep {
        #[arg(long)]
        cycles: PathBuf,
        /// Grid JSON; the shipped default grid when omitted.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Padding values (days) summarized after the sweep.
        #[arg(long, value_delimiter = ',', default_values_t = [7.0, 14.0, 21.0])]
        pp_list: Vec<f64>,
        /// Continue a previous run in the same output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Plot-ready curves, per-cycle winners and stability from a results file.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [7.0, 14.0, 21.0])]
        pp_list: Vec<f64>,
    },
    /// Duration statistics grouped by cycles per ATM.
    Stats {
        #[arg(long)]
        cycles: PathBuf,
    },
    /// Generate a synthetic corpus with a planted pre-failure change.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n_cycles: Option<usize>,
        /// Generator JSON; fields not given keep their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Days before failure where the change is planted.
        #[arg(long)]
        change_offset_days: Option<f64>,
    },
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool_version: &'a str,
    subcommand: &'a str,
    inputs: BTreeMap<&'a str, String>,
    params: BusinessParams,
    step_days: f64,
    alert_at: AlertAt,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    out: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MAINTSEG_LOG", "warn")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn params(g: &Global) -> CliResult<BusinessParams> {
    Ok(BusinessParams::new(g.rd, g.pp, g.ii, g.s)?)
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn write_manifest(g: &Global, subcommand: &str, inputs: BTreeMap<&str, String>, seed: Option<u64>) -> CliResult {
    let manifest = RunManifest {
        tool_version: VERSION,
        subcommand,
        inputs,
        params: params(g)?,
        step_days: g.step,
        alert_at: g.alert_at,
        seed,
        out: show(&g.out),
    };
    write_json(&g.out.join("manifest.json"), &manifest)?;
    Ok(())
}

fn load_cycles(dir: &Path) -> CliResult<Vec<LifeCycle>> {
    let cycles = read_cycles(dir)?;
    if cycles.is_empty() {
        return fail(format!("no cycle files found in {}", show(dir)));
    }
    Ok(cycles)
}

fn common_period(cycles: &[LifeCycle]) -> CliResult<f64> {
    let f = cycles[0].period_hours();
    if cycles.iter().any(|c| c.period_hours() != f) {
        return fail("cycles with different resampling periods cannot be evaluated together");
    }
    Ok(f)
}

fn step_samples(step_days: f64, period_hours: f64) -> CliResult<usize> {
    let samples = (step_days * 24.0 / period_hours).round();
    if !(samples >= 1.0) {
        return fail(format!("a step of {step_days} days is shorter than one {period_hours} h sample"));
    }
    Ok(samples as usize)
}

fn run(cli: Cli) -> CliResult {
    let g = cli.global;
    params(&g)?;
    fs::create_dir_all(&g.out)?;
    match cli.command {
        Command::Ingest { log, grouping, mapping, failures, split_on_failures, period_hours } => {
            let grouping_cfg = match &grouping {
                Some(p) => CodeGroupingConfig::from_json(&fs::read_to_string(p)?)?,
                None => CodeGroupingConfig::distribution_default(),
            };
            let mapping_cfg: ColumnMapping = match &mapping {
                Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
                None => ColumnMapping::default(),
            };
            let parsed = parse_event_log(File::open(&log)?, &mapping_cfg)?;
            if parsed.malformed > 0 {
                log::warn!("{} malformed rows skipped (first at lines {:?})", parsed.malformed, parsed.malformed_lines);
            }
            let marks = match &failures {
                Some(p) => parse_failures(File::open(p)?)?,
                None => Vec::new(),
            };
            let options = IngestOptions { grouping: grouping_cfg, period_hours, ii_days: g.ii, split_on_failures };
            let (cycles, report) = ingest(&parsed, &marks, &options)?;
            write_cycles(&g.out, &cycles)?;
            write_json(&g.out.join("ingest_report.json"), &report)?;
            let mut inputs = BTreeMap::from([("log", show(&log)), ("period_hours", period_hours.to_string())]);
            for (k, v) in [("grouping", &grouping), ("mapping", &mapping), ("failures", &failures)] {
                if let Some(p) = v {
                    inputs.insert(k, show(p));
                }
            }
            if split_on_failures {
                inputs.insert("split_on_failures", "true".into());
            }
            write_manifest(&g, "ingest", inputs, None)?;
            println!(
                "{} cycles, {} ATMs, {} unique event codes ({} records, {} malformed, {} in infected intervals)",
                report.cycles, report.atms, report.unique_codes, report.records, report.malformed, report.removed_infected
            );
            Ok(())
        }
        Command::Evaluate { cycles, config } => evaluate(&g, &cycles, &config),
        Command::Sweep { cycles, grid, pp_list, resume } => sweep(&g, &cycles, grid.as_deref(), &pp_list, resume),
        Command::Report { results, pp_list } => report(&g, &results, &pp_list),
        Command::Stats { cycles } => {
            let corpus = load_cycles(&cycles)?;
            let stats = dataset_stats(&corpus);
            write_json(&g.out.join("stats.json"), &stats)?;
            write_manifest(&g, "stats", BTreeMap::from([("cycles", show(&cycles))]), None)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
            Ok(())
        }
        Command::Synth { seed, n_cycles, spec, change_offset_days } => {
            let mut synth: SynthSpec = match &spec {
                Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
                None => SynthSpec::default(),
            };
            if let Some(n) = n_cycles {
                synth.n_cycles = n;
            }
            if change_offset_days.is_some() {
                synth.change_offset_days = change_offset_days;
            }
            let corpus = generate(&synth, seed)?;
            write_cycles(&g.out, &corpus)?;
            write_json(&g.out.join("synth_spec.json"), &synth)?;
            let mut inputs = BTreeMap::new();
            if let Some(p) = &spec {
                inputs.insert("spec", show(p));
            }
            write_manifest(&g, "synth", inputs, Some(seed))?;
            println!("{} synthetic cycles written to {}", corpus.len(), show(&g.out));
            Ok(())
        }
    }
}

fn evaluate(g: &Global, dir: &Path, config_id: &str) -> CliResult {
    let config: DetectorConfig = config_id.parse()?;
    let cycles = load_cycles(dir)?;
    let period = common_period(&cycles)?;
    let step = step_samples(g.step, period)?;
    let params = params(g)?;
    let mut trace = csv::Writer::from_path(g.out.join("trace.csv"))?;
    trace.write_record(["atm_id", "cycle_index", "end_index", "fired", "change_point_index", "breakpoints", "score"])?;
    let mut records = Vec::with_capacity(cycles.len());
    for cycle in &cycles {
        let mut rows = Vec::new();
        let alert = run_streaming_traced(cycle, &config, step, g.alert_at.into(), |w| rows.push(w))?;
        for w in rows {
            trace.write_record([
                cycle.atm_id().to_string(),
                cycle.cycle_index().to_string(),
                w.end_index.to_string(),
                w.detection.fired().to_string(),
                w.detection.change_point.map(|c| c.to_string()).unwrap_or_default(),
                w.detection.breakpoints.to_string(),
                w.detection.score.map(|s| s.to_string()).unwrap_or_default(),
            ])?;
        }
        records.push(EvaluationRecord::score(
            cycle.atm_id(),
            cycle.cycle_index(),
            config.id(),
            alert,
            cycle.len(),
            cycle.ended_in_failure(),
            &params,
            period,
        )?);
    }
    trace.flush()?;
    write_results(&g.out.join("records.csv"), &records)?;
    let agg = aggregate(&records)?;

    #[derive(Serialize)]
    struct Report<'a> {
        config: &'a str,
        cycles: usize,
        step_samples: usize,
        aggregate: &'a maintseg::Aggregate,
    }
    write_json(
        &g.out.join("report.json"),
        &Report { config: &config.id(), cycles: cycles.len(), step_samples: step, aggregate: &agg },
    )?;
    write_manifest(g, "evaluate", BTreeMap::from([("cycles", show(dir)), ("config", config.id())]), None)?;
    println!(
        "{}: mean E_s {:.6}, precision {:.4}{}, recall {:.4} (TP {}, FP {}, FN {}, TN {})",
        config.id(),
        agg.mean_e,
        agg.precision,
        if agg.precision_defined { "" } else { " (no alerts)" },
        agg.recall,
        agg.tp,
        agg.fp,
        agg.fn_,
        agg.tn
    );
    Ok(())
}

fn sweep(g: &Global, dir: &Path, grid: Option<&Path>, pp_list: &[f64], resume: bool) -> CliResult {
    let spec = match grid {
        Some(p) => GridSpec::from_json(&fs::read_to_string(p)?)?,
        None => GridSpec::default_grid(),
    };
    let configs = build_grid(&spec)?;
    if configs.is_empty() {
        return fail("the grid contains no configurations");
    }
    for (method, n) in grid_counts(&configs) {
        log::info!("{method}: {n} configurations");
    }
    let cycles = load_cycles(dir)?;
    let period = common_period(&cycles)?;
    let step = step_samples(g.step, period)?;
    let params = params(g)?;
    let dataset_fingerprint = fingerprint(dir)?;

    let results_path = g.out.join("results.csv");
    let previous = if resume && results_path.exists() {
        if let Ok(text) = fs::read_to_string(meta_path(&results_path)) {
            let meta: ResultsMeta = serde_json::from_str(&text)?;
            if meta.dataset_fingerprint != dataset_fingerprint {
                return fail("cannot resume: the cycle files differ from the ones the partial run used");
            }
        }
        let (records, skipped) = recover_results(&results_path)?;
        if skipped > 0 {
            log::warn!("{skipped} unreadable rows dropped from the partial results");
        }
        records
    } else {
        if results_path.exists() {
            fs::remove_file(&results_path)?;
        }
        Vec::new()
    };
    if resume {
        // rewrite what was recovered so the appender starts from clean rows
        write_results(&results_path, &previous)?;
    }

    let sink = SharedAppender(Mutex::new(ResultsAppender::open(&results_path)?));
    let options = SweepOptions { params, step, timing: g.alert_at.into(), workers: g.workers };
    let outcome = run_sweep(&cycles, &configs, &options, previous, &|r| sink.push(r))?;
    drop(sink);
    write_results(&results_path, &outcome.records)?;

    let unfailed: BTreeSet<(String, u32)> = cycles
        .iter()
        .filter(|c| !c.ended_in_failure())
        .map(|c| (c.atm_id().to_string(), c.cycle_index()))
        .collect();
    let meta = ResultsMeta {
        version: VERSION.to_string(),
        dataset_fingerprint,
        configs: configs.iter().map(DetectorConfig::id).collect(),
        params,
        period_hours: period,
        step,
        alert_at: g.alert_at.into(),
        partial: !outcome.is_complete(),
        failures: outcome.failures.clone(),
        unfailed_cycles: unfailed.iter().cloned().collect(),
    };
    write_json(&meta_path(&results_path), &meta)?;

    let mut inputs = BTreeMap::from([("cycles", show(dir))]);
    if let Some(p) = grid {
        inputs.insert("grid", show(p));
    }
    inputs.insert("pp_list", pp_list.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
    write_manifest(g, "sweep", inputs, None)?;

    if outcome.is_complete() {
        let summary = summarize(&outcome.records, &unfailed, &params, period, pp_list)?;
        write_json(&g.out.join("summary.json"), &summary)?;
        for s in &summary {
            for (method, m) in &s.methods {
                println!(
                    "pp={} {method}: best average {:.6} ({}), best per sample {:.6}",
                    s.pp, m.best_average.mean_e, m.best_average_config, m.best_per_sample_mean
                );
            }
        }
        println!("{} records written to {}", outcome.records.len(), show(&results_path));
        Ok(())
    } else {
        let fraction = outcome.failure_fraction();
        let mut message = format!(
            "{} of {} pairs failed ({:.2}%); partial results in {}",
            outcome.failures.len(),
            outcome.records.len() + outcome.failures.len(),
            fraction * 100.0,
            show(&results_path)
        );
        if fraction > MAX_FAILURE_FRACTION {
            let mut reasons: BTreeMap<&str, usize> = BTreeMap::new();
            for f in &outcome.failures {
                *reasons.entry(f.reason.as_str()).or_default() += 1;
            }
            for (reason, n) in reasons {
                message.push_str(&format!("\n  {n} x {reason}"));
            }
        }
        Err(cli_error::CliError { message, code: 2 })
    }
}

fn report(g: &Global, results: &Path, pp_list: &[f64]) -> CliResult {
    if !results.is_file() {
        return fail(format!("results file {} not found", show(results)));
    }
    let records = read_results(results)?;
    if records.is_empty() {
        return fail("the results file has no records");
    }
    let meta: Option<ResultsMeta> = match fs::read_to_string(meta_path(results)) {
        Ok(text) => Some(serde_json::from_str(&text)?),
        Err(_) => None,
    };
    let period = meta.as_ref().map_or(24.0, |m| m.period_hours);
    let unfailed: BTreeSet<(String, u32)> =
        meta.as_ref().map(|m| m.unfailed_cycles.iter().cloned().collect()).unwrap_or_default();
    let params = params(g)?;

    let summary = summarize(&records, &unfailed, &params, period, pp_list)?;
    let methods: BTreeSet<&String> = summary.iter().flat_map(|s| s.methods.keys()).collect();
    for method in &methods {
        let mut w = csv::Writer::from_path(g.out.join(format!("curve_{method}.csv")))?;
        w.write_record(["pp", "best_average_config", "best_average_mean_e", "precision", "recall", "best_per_sample_mean_e"])?;
        for s in &summary {
            if let Some(m) = s.methods.get(*method) {
                w.write_record([
                    s.pp.to_string(),
                    m.best_average_config.clone(),
                    m.best_average.mean_e.to_string(),
                    m.best_average.precision.to_string(),
                    m.best_average.recall.to_string(),
                    m.best_per_sample_mean.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }

    let rescored = records
        .iter()
        .map(|r| r.rescore(!unfailed.contains(&(r.atm_id.clone(), r.cycle_index)), &params, period))
        .collect::<maintseg::Result<Vec<_>>>()?;
    let best = best_per_sample(&rescored)?;
    let mut w = csv::Writer::from_path(g.out.join("best_per_cycle.csv"))?;
    w.write_record(["atm_id", "cycle_index", "method", "config_id", "e_score"])?;
    for b in &best.per_cycle {
        w.write_record([
            b.atm_id.clone(),
            b.cycle_index.to_string(),
            b.method().to_string(),
            b.config_id.clone(),
            b.e_score.to_string(),
        ])?;
    }
    w.flush()?;

    let by_method = model_stability(&best.per_cycle, StabilityLevel::Method);
    let by_config = model_stability(&best.per_cycle, StabilityLevel::Config);
    write_json(&g.out.join("stability.json"), &[&by_method, &by_config])?;
    write_json(&g.out.join("summary.json"), &summary)?;
    write_manifest(g, "report", BTreeMap::from([("results", show(results))]), None)?;
    println!(
        "same best method across cycles: {} ({} of {} ATMs); at most one change: {} ({} of {} ATMs)",
        by_method.same_model_fraction,
        by_method.same_model_atms,
        by_method.multi_cycle_atms,
        by_method.one_change_fraction,
        by_method.one_change_atms,
        by_method.long_history_atms
    );
    println!("{} curve file(s) written to {}", methods.len(), show(&g.out));
    Ok(())
}
