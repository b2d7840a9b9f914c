//! Shared domain types plus windowing and z-normalization primitives.

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard deviations below this are treated as a flat series.
pub const DEGENERATE_STD: f64 = 1e-8;

/// Dense row-major `n x d` matrix of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl Signal {
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != d {
                return Err(Error::invalid(format!(
                    "row {i} has {} values, expected {d}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { n: rows.len(), d, data })
    }

    pub fn univariate(values: &[f64]) -> Self {
        Self { n: values.len(), d: 1, data: values.to_vec() }
    }

    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Result<Self> {
        let d = columns.len();
        let n = columns.first().map_or(0, |c| c.as_ref().len());
        if columns.iter().any(|c| c.as_ref().len() != n) {
            return Err(Error::invalid("columns have different lengths"));
        }
        let mut data = vec![0.0; n * d];
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.as_ref().iter().enumerate() {
                data[i * d + j] = v;
            }
        }
        Ok(Self { n, d, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dims(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.data[i * self.d + j]).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.d).map(|j| self.column(j)).collect()
    }

    /// Every channel z-normalized independently.
    pub fn znormalized(&self) -> Result<Self> {
        let cols = self
            .columns()
            .iter()
            .map(|c| znormalize(c))
            .collect::<Result<Vec<_>>>()?;
        Self::from_columns(&cols)
    }

    /// Map every value through `f`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { n: self.n, d: self.d, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// `(x - mean) / std` with population standard deviation.
///
/// A series whose standard deviation is below [`DEGENERATE_STD`] maps to all zeros.
pub fn znormalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::invalid("cannot z-normalize an empty series"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("cannot z-normalize non-finite values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < DEGENERATE_STD {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|v| (v - mean) / std).collect())
}

/// Business constraints, all durations in days.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusinessParams {
    /// Responsive duration: time needed to act on an alert.
    pub rd: f64,
    /// Predictive padding: how early an alert is still useful.
    pub pp: f64,
    /// Infected interval removed after each failure.
    pub ii: f64,
    /// Sensibility to early alerts.
    pub s: f64,
}

impl Default for BusinessParams {
    fn default() -> Self {
        Self { rd: 1.0, pp: 14.0, ii: 1.0, s: 0.2 }
    }
}

impl BusinessParams {
    pub fn new(rd: f64, pp: f64, ii: f64, s: f64) -> Result<Self> {
        let p = Self { rd, pp, ii, s };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.rd.is_finite()
            && self.rd >= 0.0
            && self.pp.is_finite()
            && self.pp > 0.0
            && self.ii.is_finite()
            && self.ii >= 0.0
            && self.s.is_finite()
            && self.s > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "business params need rd >= 0, pp > 0, ii >= 0, s > 0; got {self:?}"
            )))
        }
    }

    /// `(pp, rd)` expressed in samples for a resampling period in hours.
    pub fn in_samples(&self, period_hours: f64) -> (f64, f64) {
        let per_day = 24.0 / period_hours;
        (self.pp * per_day, self.rd * per_day)
    }
}

/// One maintenance-to-failure interval, resampled into a feature series.
#[derive(Debug, Clone, PartialEq)]
pub struct LifeCycle {
    atm_id: String,
    cycle_index: u32,
    start_time: DateTime<Utc>,
    end_time: DateTime<Utc>,
    feature_names: Vec<String>,
    samples: Vec<Vec<f64>>,
    period_hours: f64,
    ended_in_failure: bool,
    withdrawal_events: Option<u64>,
}

impl LifeCycle {
    /// Build a cycle; `end_time` is derived from the bucket count.
    pub fn new(
        atm_id: impl Into<String>,
        cycle_index: u32,
        start_time: DateTime<Utc>,
        period_hours: f64,
        feature_names: Vec<String>,
        samples: Vec<Vec<f64>>,
        ended_in_failure: bool,
    ) -> Result<Self> {
        if !(period_hours.is_finite() && period_hours > 0.0) {
            return Err(Error::invalid(format!("period must be positive, got {period_hours}")));
        }
        if samples.is_empty() {
            return Err(Error::invalid("a life cycle needs at least one sample"));
        }
        for (k, row) in samples.iter().enumerate() {
            if row.len() != feature_names.len() {
                return Err(Error::invalid(format!(
                    "sample {k} has {} values for {} features",
                    row.len(),
                    feature_names.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::invalid(format!("sample {k} has a negative or non-finite value")));
            }
        }
        let span_secs = (period_hours * 3600.0 * samples.len() as f64).round() as i64;
        Ok(Self {
            atm_id: atm_id.into(),
            cycle_index,
            start_time,
            end_time: start_time + Duration::seconds(span_secs),
            feature_names,
            samples,
            period_hours,
            ended_in_failure,
            withdrawal_events: None,
        })
    }

    /// Daily cycle starting at the Unix epoch with features `f0, f1, ...`.
    pub fn from_samples(atm_id: impl Into<String>, cycle_index: u32, samples: Vec<Vec<f64>>) -> Result<Self> {
        let d = samples.first().map_or(0, Vec::len);
        let names = (0..d).map(|j| format!("f{j}")).collect();
        Self::new(atm_id, cycle_index, DateTime::UNIX_EPOCH, 24.0, names, samples, true)
    }

    pub fn with_withdrawal_events(mut self, count: Option<u64>) -> Self {
        self.withdrawal_events = count;
        self
    }

    pub fn atm_id(&self) -> &str {
        &self.atm_id
    }

    pub fn cycle_index(&self) -> u32 {
        self.cycle_index
    }

    pub fn start_time(&self) -> DateTime<Utc> {
        self.start_time
    }

    pub fn end_time(&self) -> DateTime<Utc> {
        self.end_time
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn period_hours(&self) -> f64 {
        self.period_hours
    }

    pub fn ended_in_failure(&self) -> bool {
        self.ended_in_failure
    }

    pub fn withdrawal_events(&self) -> Option<u64> {
        self.withdrawal_events
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_days(&self) -> f64 {
        self.samples.len() as f64 * self.period_hours / 24.0
    }

    /// The first `end` samples as a signal.
    pub fn prefix_signal(&self, end: usize) -> Signal {
        Signal::from_rows(&self.samples[..end]).expect("rows validated at construction")
    }
}

/// A growing prefix `samples[0..end_index]` of a cycle.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub cycle: &'a LifeCycle,
    pub end_index: usize,
}

impl Window<'_> {
    pub fn signal(&self) -> Signal {
        self.cycle.prefix_signal(self.end_index)
    }
}

/// Window end indices `T, 2T, ...`, closed by `n` when `n` is not a multiple of `T`.
pub fn prefix_ends(n: usize, step: usize) -> Vec<usize> {
    assert!(step >= 1, "window step must be at least one sample");
    let mut ends: Vec<usize> = (1..=n / step).map(|k| k * step).collect();
    if n % step != 0 {
        ends.push(n);
    }
    ends
}

pub fn prefix_windows(cycle: &LifeCycle, step: usize) -> Vec<Window<'_>> {
    prefix_ends(cycle.len(), step)
        .into_iter()
        .map(|end_index| Window { cycle, end_index })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn znormalize_three_points() {
        let z = znormalize(&[1.0, 2.0, 3.0]).unwrap();
        // pop. std of [1,2,3] is sqrt(2/3)
        let expect = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((z[0] + expect).abs() < 1e-12);
        assert!(z[1].abs() < 1e-12);
        assert!((z[2] - expect).abs() < 1e-12);
        assert!((expect - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn znormalize_constant_is_zero() {
        assert_eq!(znormalize(&[5.0, 5.0, 5.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn znormalize_rejects_empty() {
        assert!(matches!(znormalize(&[]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn prefix_window_examples() {
        assert_eq!(prefix_ends(21, 7), vec![7, 14, 21]);
        assert_eq!(prefix_ends(10, 7), vec![7, 10]);
        assert_eq!(prefix_ends(5, 7), vec![5]);
        let cycle = LifeCycle::from_samples("a", 0, vec![vec![0.0]; 10]).unwrap();
        let ends: Vec<_> = prefix_windows(&cycle, 7).iter().map(|w| w.end_index).collect();
        assert_eq!(ends, vec![7, 10]);
    }

    #[test]
    fn lifecycle_rejects_negative_values() {
        assert!(LifeCycle::from_samples("a", 0, vec![vec![-1.0]]).is_err());
        assert!(LifeCycle::from_samples("a", 0, vec![]).is_err());
    }

    #[test]
    fn business_params_validation() {
        assert!(BusinessParams::new(1.0, 14.0, 1.0, 0.2).is_ok());
        assert!(BusinessParams::new(1.0, 0.0, 1.0, 0.2).is_err());
        assert!(BusinessParams::new(-1.0, 14.0, 1.0, 0.2).is_err());
        assert!(BusinessParams::new(1.0, 14.0, 1.0, 0.0).is_err());
        let p = BusinessParams::default();
        assert_eq!(p.in_samples(12.0), (28.0, 2.0));
    }

    fn non_degenerate() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e3f64..1e3, 2..64)
            .prop_filter("needs spread", |v| {
                let m = v.iter().sum::<f64>() / v.len() as f64;
                v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64 > 1e-6
            })
    }

    proptest! {
        #[test]
        fn znormalize_idempotent(x in non_degenerate()) {
            let once = znormalize(&x).unwrap();
            let twice = znormalize(&once).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn znormalize_affine_invariant(x in non_degenerate(), a in 0.01f64..100.0, b in -100.0f64..100.0) {
            let base = znormalize(&x).unwrap();
            let shifted: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let moved = znormalize(&shifted).unwrap();
            for (p, q) in base.iter().zip(&moved) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }

        #[test]
        fn znormalize_moments(x in non_degenerate()) {
            let z = znormalize(&x).unwrap();
            let n = z.len() as f64;
            let mean = z.iter().sum::<f64>() / n;
            let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-9);
        }

        #[test]
        fn prefix_windows_cover_cycle(n in 1usize..400, step in 1usize..30) {
            let ends = prefix_ends(n, step);
            prop_assert_eq!(*ends.last().unwrap(), n);
            prop_assert!(ends.windows(2).all(|w| w[0] < w[1]));
            for pair in ends[..ends.len() - 1].windows(2) {
                prop_assert_eq!(pair[1] - pair[0], step);
            }
            prop_assert!(ends.len() <= n.div_ceil(step));
        }
    }
}
