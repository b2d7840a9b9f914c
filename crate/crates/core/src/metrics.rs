//! Business metric, confusion counts and the cross-configuration analyses.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{classify_cycle, Alert, Verdict};
use crate::series::BusinessParams;

/// Above this exponent the early-alert branch switches to a log-space form.
const EXP_LIMIT: f64 = 700.0;

/// Early-alert-tolerant score of one cycle, in `[0, 1]`.
///
/// `a`, `n`, `pp` and `rd` share one unit (samples). No alert and alerts at
/// or after `n - rd` score 0; alerts inside the padding `[n - (rd + pp), n - rd)`
/// score 1; earlier alerts score `(e^{s a} - 1) / (e^{s (n - rd - pp)} - 1)`,
/// which rises continuously to 1 at the start of the padding.
pub fn e_score(a: Option<f64>, n: f64, pp: f64, rd: f64, s: f64) -> Result<f64> {
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::invalid(format!("cycle length must be positive, got {n}")));
    }
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::invalid(format!("sensibility must be positive, got {s}")));
    }
    if !(pp.is_finite() && pp > 0.0 && rd.is_finite() && rd >= 0.0) {
        return Err(Error::invalid(format!("need pp > 0 and rd >= 0, got pp={pp}, rd={rd}")));
    }
    let Some(a) = a else { return Ok(0.0) };
    if !(a.is_finite() && a >= 0.0) {
        return Err(Error::invalid(format!("alert time must be >= 0, got {a}")));
    }
    if a >= n - rd {
        return Ok(0.0);
    }
    let start = n - (rd + pp);
    if a >= start {
        return Ok(1.0);
    }
    // here 0 <= a < start
    let value = if s * start > EXP_LIMIT {
        (s * (a - start)).exp() * (-(-s * a).exp_m1()) / (-(-s * start).exp_m1())
    } else {
        (s * a).exp_m1() / (s * start).exp_m1()
    };
    Ok(value.clamp(0.0, 1.0))
}

/// Outcome of one (cycle, configuration) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub atm_id: String,
    pub cycle_index: u32,
    pub config_id: String,
    pub verdict: Verdict,
    pub alert: Option<Alert>,
    pub e_score: f64,
    /// Cycle length in samples.
    pub n: usize,
}

impl EvaluationRecord {
    /// Score an alert under `params`, converting days to samples with `period_hours`.
    ///
    /// A cycle that did not end in failure scores 1 when silent and 0 otherwise.
    pub fn score(
        atm_id: impl Into<String>,
        cycle_index: u32,
        config_id: impl Into<String>,
        alert: Option<Alert>,
        n: usize,
        ended_in_failure: bool,
        params: &BusinessParams,
        period_hours: f64,
    ) -> Result<Self> {
        let (pp, rd) = params.in_samples(period_hours);
        let a = alert.map(|al| al.a as f64);
        let verdict = classify_cycle(a, n as f64, pp, rd, ended_in_failure);
        let e_score = match verdict {
            Verdict::TrueNegative => 1.0,
            _ if !ended_in_failure => 0.0,
            _ => e_score(a, n as f64, pp, rd, params.s)?,
        };
        Ok(Self {
            atm_id: atm_id.into(),
            cycle_index,
            config_id: config_id.into(),
            verdict,
            alert,
            e_score,
            n,
        })
    }

    /// The same outcome scored under different business parameters.
    pub fn rescore(&self, ended_in_failure: bool, params: &BusinessParams, period_hours: f64) -> Result<Self> {
        Self::score(
            self.atm_id.clone(),
            self.cycle_index,
            self.config_id.clone(),
            self.alert,
            self.n,
            ended_in_failure,
            params,
            period_hours,
        )
    }

    pub fn cycle_key(&self) -> (&str, u32) {
        (&self.atm_id, self.cycle_index)
    }

    /// Method name: the identifier's first field.
    pub fn method(&self) -> &str {
        method_of(&self.config_id)
    }
}

pub fn method_of(config_id: &str) -> &str {
    config_id.split('/').next().unwrap_or(config_id)
}

/// Summary of the records of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub mean_e: f64,
    /// `TP / (TP + FP)`, 0 when nothing was predicted.
    pub precision: f64,
    /// False when no alert was raised at all and precision defaulted to 0.
    pub precision_defined: bool,
    /// `TP / (TP + FN)`.
    pub recall: f64,
}

fn sorted_by_cycle<'a>(records: impl IntoIterator<Item = &'a EvaluationRecord>) -> Vec<&'a EvaluationRecord> {
    let mut v: Vec<_> = records.into_iter().collect();
    v.sort_by(|a, b| a.cycle_key().cmp(&b.cycle_key()).then_with(|| a.config_id.cmp(&b.config_id)));
    v
}

pub fn aggregate<'a>(records: impl IntoIterator<Item = &'a EvaluationRecord>) -> Result<Aggregate> {
    let records = sorted_by_cycle(records);
    if records.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty record set"));
    }
    let mut agg = Aggregate {
        count: records.len(),
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
        mean_e: 0.0,
        precision: 0.0,
        precision_defined: false,
        recall: 0.0,
    };
    let mut sum = 0.0;
    for r in &records {
        sum += r.e_score;
        match r.verdict {
            Verdict::TruePositive => agg.tp += 1,
            Verdict::FalsePositive => agg.fp += 1,
            Verdict::FalseNegative => agg.fn_ += 1,
            Verdict::TrueNegative => agg.tn += 1,
        }
    }
    agg.mean_e = sum / records.len() as f64;
    if agg.tp + agg.fp > 0 {
        agg.precision = agg.tp as f64 / (agg.tp + agg.fp) as f64;
        agg.precision_defined = true;
    }
    if agg.tp + agg.fn_ > 0 {
        agg.recall = agg.tp as f64 / (agg.tp + agg.fn_) as f64;
    }
    Ok(agg)
}

fn by_config<'a>(records: &'a [EvaluationRecord]) -> BTreeMap<&'a str, Vec<&'a EvaluationRecord>> {
    let mut map: BTreeMap<&str, Vec<&EvaluationRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.config_id.as_str()).or_default().push(r);
    }
    map
}

/// Configuration with the highest mean score; ties go to higher precision,
/// then to the smaller identifier.
pub fn best_average_config(records: &[EvaluationRecord]) -> Result<Option<(String, Aggregate)>> {
    let mut best: Option<(String, Aggregate)> = None;
    for (id, recs) in by_config(records) {
        let agg = aggregate(recs)?;
        let better = match &best {
            None => true,
            Some((_, b)) => agg.mean_e > b.mean_e || (agg.mean_e == b.mean_e && agg.precision > b.precision),
        };
        if better {
            best = Some((id.to_string(), agg));
        }
    }
    Ok(best)
}

/// Best configuration of one cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleBest {
    pub atm_id: String,
    pub cycle_index: u32,
    pub config_id: String,
    pub e_score: f64,
}

impl CycleBest {
    pub fn method(&self) -> &str {
        method_of(&self.config_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPerSample {
    pub per_cycle: Vec<CycleBest>,
    /// Mean over cycles of the per-cycle maximum score.
    pub mean: f64,
}

/// Per-cycle maximum score over all configurations (ties to the smaller identifier).
///
/// Every cycle must have been evaluated under every configuration exactly once.
pub fn best_per_sample(records: &[EvaluationRecord]) -> Result<BestPerSample> {
    let configs: BTreeSet<&str> = records.iter().map(|r| r.config_id.as_str()).collect();
    let mut cycles: BTreeMap<(&str, u32), BTreeMap<&str, f64>> = BTreeMap::new();
    for r in records {
        let slot = cycles.entry(r.cycle_key()).or_default();
        if slot.insert(r.config_id.as_str(), r.e_score).is_some() {
            return Err(Error::IncompleteGrid(format!(
                "duplicate record for cycle {}#{} under {}",
                r.atm_id, r.cycle_index, r.config_id
            )));
        }
    }
    if cycles.is_empty() {
        return Err(Error::invalid("no records"));
    }
    let mut per_cycle = Vec::with_capacity(cycles.len());
    let mut sum = 0.0;
    for ((atm, idx), scores) in &cycles {
        if scores.len() != configs.len() {
            let missing = configs.iter().find(|c| !scores.contains_key(*c)).unwrap();
            return Err(Error::IncompleteGrid(format!("cycle {atm}#{idx} lacks a record for {missing}")));
        }
        let (id, e) = scores
            .iter()
            .fold(None::<(&str, f64)>, |acc, (id, &e)| match acc {
                Some((_, best)) if e <= best => acc,
                _ => Some((id, e)),
            })
            .unwrap();
        sum += e;
        per_cycle.push(CycleBest { atm_id: atm.to_string(), cycle_index: *idx, config_id: id.to_string(), e_score: e });
    }
    let mean = sum / per_cycle.len() as f64;
    Ok(BestPerSample { per_cycle, mean })
}

/// Granularity of "the same model" in [`model_stability`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilityLevel {
    Method,
    Config,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stability {
    pub level: StabilityLevel,
    /// Machines with more than one cycle.
    pub multi_cycle_atms: usize,
    pub same_model_atms: usize,
    pub same_model_fraction: f64,
    /// Machines with more than two cycles.
    pub long_history_atms: usize,
    pub one_change_atms: usize,
    pub one_change_fraction: f64,
}

/// How often a machine keeps its best model across its cycles.
pub fn model_stability(best: &[CycleBest], level: StabilityLevel) -> Stability {
    let mut per_atm: BTreeMap<&str, Vec<(u32, &str)>> = BTreeMap::new();
    for b in best {
        let model = match level {
            StabilityLevel::Method => b.method(),
            StabilityLevel::Config => b.config_id.as_str(),
        };
        per_atm.entry(&b.atm_id).or_default().push((b.cycle_index, model));
    }
    let (mut multi, mut same, mut long, mut one_change) = (0, 0, 0, 0);
    for seq in per_atm.values_mut() {
        seq.sort_unstable();
        let changes = seq.windows(2).filter(|w| w[0].1 != w[1].1).count();
        if seq.len() > 1 {
            multi += 1;
            if changes == 0 {
                same += 1;
            }
        }
        if seq.len() > 2 {
            long += 1;
            if changes <= 1 {
                one_change += 1;
            }
        }
    }
    let frac = |k: usize, of: usize| if of == 0 { 0.0 } else { k as f64 / of as f64 };
    Stability {
        level,
        multi_cycle_atms: multi,
        same_model_atms: same,
        same_model_fraction: frac(same, multi),
        long_history_atms: long,
        one_change_atms: one_change,
        one_change_fraction: frac(one_change, long),
    }
}
