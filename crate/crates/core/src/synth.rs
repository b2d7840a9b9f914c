//! Seeded synthetic corpora with a planted pre-failure regime change.
//!
//! Daily event counts are Poisson draws per code. Before the change every
//! Error and Warning code fires at its base rate; from the change onward the
//! codes of the affected groups fire `change_factor` times as often. Counts
//! then go through the same feature builder as real logs.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{build_features, CodeGroupingConfig, CountMatrix, CycleMeta, Severity};
use crate::series::LifeCycle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_cycles: usize,
    pub min_days: usize,
    pub max_days: usize,
    /// Most cycles one ATM receives; ATMs get between 1 and this many.
    pub max_cycles_per_atm: usize,
    /// Days before the end of each cycle where the change is planted; `None` keeps every cycle stationary.
    pub change_offset_days: Option<f64>,
    pub change_factor: f64,
    pub ok_rate: f64,
    pub error_rate: f64,
    pub warning_rate: f64,
    /// Groups whose Error/Warning rates rise at the change.
    pub affected_groups: Vec<String>,
    pub period_hours: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_cycles: 50,
            min_days: 60,
            max_days: 150,
            max_cycles_per_atm: 3,
            change_offset_days: Some(10.0),
            change_factor: 6.0,
            ok_rate: 40.0,
            error_rate: 2.0,
            warning_rate: 3.0,
            affected_groups: ["distribution", "k7_1", "k7_2", "k7_3", "k7_4", "k7_5"].map(String::from).to_vec(),
            period_hours: 24.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_days == 0 || self.min_days > self.max_days {
            return Err(Error::invalid("synthetic cycle lengths need 0 < min_days <= max_days"));
        }
        if self.max_cycles_per_atm == 0 {
            return Err(Error::invalid("max_cycles_per_atm must be at least 1"));
        }
        if !(self.period_hours > 0.0 && self.period_hours.is_finite()) {
            return Err(Error::invalid("period_hours must be positive"));
        }
        for (name, v) in [
            ("ok_rate", self.ok_rate),
            ("error_rate", self.error_rate),
            ("warning_rate", self.warning_rate),
            ("change_factor", self.change_factor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(off) = self.change_offset_days {
            if !(off > 0.0 && off < self.min_days as f64) {
                return Err(Error::invalid(format!("change offset {off} days must lie inside the shortest cycle")));
            }
        }
        Ok(())
    }

    fn samples_per_day(&self) -> f64 {
        24.0 / self.period_hours
    }

    /// Sample index where the change lands in a cycle of `n` samples.
    pub fn change_index(&self, n: usize) -> Option<usize> {
        self.change_offset_days
            .map(|d| n.saturating_sub((d * self.samples_per_day()).round() as usize))
    }
}

fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2019, 1, 1, 0, 0, 0).unwrap()
}

fn poisson(rng: &mut ChaCha8Rng, rate: f64) -> u32 {
    Poisson::new(rate).expect("rate validated positive").sample(rng) as u32
}

/// Generate `spec.n_cycles` cycles with the default grouping's features. Same seed, same corpus.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<Vec<LifeCycle>> {
    spec.validate()?;
    let grouping = CodeGroupingConfig::distribution_default();
    if spec.n_cycles == 0 {
        log::warn!("synthetic corpus requested with zero cycles");
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_day = spec.samples_per_day();
    let mut cycles = Vec::with_capacity(spec.n_cycles);
    let mut atm = 0usize;
    while cycles.len() < spec.n_cycles {
        let count = rng.gen_range(1..=spec.max_cycles_per_atm).min(spec.n_cycles - cycles.len());
        let atm_id = format!("synth-{atm:03}");
        let mut start = epoch() + Duration::days(rng.gen_range(0..30));
        for k in 0..count {
            let days = rng.gen_range(spec.min_days..=spec.max_days);
            let n = ((days as f64) * per_day).round().max(1.0) as usize;
            let change = spec.change_index(n);
            let counts: Vec<Vec<u32>> = (0..n)
                .map(|t| {
                    let shifted = change.is_some_and(|c| t >= c);
                    grouping
                        .codes
                        .iter()
                        .map(|slot| {
                            let base = match slot.severity {
                                Severity::Ok => spec.ok_rate,
                                Severity::Error => spec.error_rate,
                                Severity::Warning => spec.warning_rate,
                            } / per_day;
                            let boost = shifted
                                && slot.severity != Severity::Ok
                                && spec.affected_groups.iter().any(|g| g == &slot.group);
                            poisson(&mut rng, if boost { base * spec.change_factor } else { base })
                        })
                        .collect()
                })
                .collect();
            let matrix = CountMatrix {
                codes: grouping.codes.iter().map(|s| s.code.clone()).collect(),
                counts,
                start,
                period_hours: spec.period_hours,
                dropped: 0,
            };
            let meta = CycleMeta { atm_id: atm_id.clone(), cycle_index: k as u32, ended_in_failure: true };
            let cycle = build_features(&matrix, &grouping, &meta)?;
            start = cycle.end_time() + Duration::days(1);
            cycles.push(cycle);
        }
        atm += 1;
    }
    Ok(cycles)
}
