//! Segment cost functions for the segmentation detectors.
//!
//! A [`SegmentCost`] is fitted once per signal into a [`FittedCost`], which
//! precomputes whatever cumulative structure makes `cost(a, b)` queries cheap:
//! prefix sums for `L2` and `Normal`, a cumulative Gram table for `Rbf`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::Signal;

/// Diagonal regularization for the `Normal` cost.
pub const NORMAL_EPSILON: f64 = 1e-6;

/// Cap on the number of points used by the median heuristic.
pub const MEDIAN_SUBSAMPLE: usize = 1000;

/// RBF kernel bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    /// `gamma = 1 / median pairwise squared distance` of the fitted signal.
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    L1,
    L2,
    Normal,
    Rbf,
}

impl CostKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CostKind::L1 => "l1",
            CostKind::L2 => "l2",
            CostKind::Normal => "normal",
            CostKind::Rbf => "rbf",
        }
    }
}

/// A segment cost with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentCost {
    /// Sum of L1 deviations from the coordinate-wise median.
    L1,
    /// Sum of squared deviations from the segment mean.
    L2,
    /// `len * log det(cov + eps*I)`; may be negative.
    Normal { epsilon: f64 },
    /// `len - sum_ij k(x_i, x_j) / len` with `k(x, y) = exp(-gamma |x - y|^2)`.
    Rbf { bandwidth: Bandwidth },
}

impl SegmentCost {
    pub fn normal() -> Self {
        SegmentCost::Normal { epsilon: NORMAL_EPSILON }
    }

    pub fn rbf_median() -> Self {
        SegmentCost::Rbf { bandwidth: Bandwidth::Median }
    }

    pub fn rbf(gamma: f64) -> Self {
        SegmentCost::Rbf { bandwidth: Bandwidth::Fixed(gamma) }
    }

    pub fn kind(&self) -> CostKind {
        match self {
            SegmentCost::L1 => CostKind::L1,
            SegmentCost::L2 => CostKind::L2,
            SegmentCost::Normal { .. } => CostKind::Normal,
            SegmentCost::Rbf { .. } => CostKind::Rbf,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SegmentCost::Normal { epsilon } if !(epsilon.is_finite() && epsilon > 0.0) => {
                Err(Error::invalid(format!("normal cost epsilon must be > 0, got {epsilon}")))
            }
            SegmentCost::Rbf { bandwidth: Bandwidth::Fixed(g) } if !(g.is_finite() && g > 0.0) => {
                Err(Error::invalid(format!("rbf gamma must be > 0, got {g}")))
            }
            _ => Ok(()),
        }
    }

    /// Precompute the query structure for `signal`.
    pub fn fit<'a>(&self, signal: &'a Signal) -> Result<FittedCost<'a>> {
        self.validate()?;
        let inner = match *self {
            SegmentCost::L1 => Fitted::L1,
            SegmentCost::L2 => Fitted::L2(PrefixMoments::new(signal, false)),
            SegmentCost::Normal { epsilon } => Fitted::Normal(PrefixMoments::new(signal, true), epsilon),
            SegmentCost::Rbf { bandwidth } => {
                let gamma = match bandwidth {
                    Bandwidth::Fixed(g) => g,
                    Bandwidth::Median if signal.len() >= 2 => rbf_bandwidth_median(signal)?,
                    Bandwidth::Median => 1.0,
                };
                Fitted::Rbf(CumulativeGram::new(signal, gamma))
            }
        };
        Ok(FittedCost { signal, inner })
    }

    /// Cost of `signal[a..b]`.
    pub fn cost(&self, signal: &Signal, a: usize, b: usize) -> Result<f64> {
        self.fit(signal)?.cost(a, b)
    }
}

impl fmt::Display for SegmentCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmentCost::L1 => f.write_str("l1"),
            SegmentCost::L2 => f.write_str("l2"),
            SegmentCost::Normal { epsilon } if *epsilon == NORMAL_EPSILON => f.write_str("normal"),
            SegmentCost::Normal { epsilon } => write!(f, "normal:{epsilon}"),
            SegmentCost::Rbf { bandwidth: Bandwidth::Median } => f.write_str("rbf"),
            SegmentCost::Rbf { bandwidth: Bandwidth::Fixed(g) } => write!(f, "rbf:{g}"),
        }
    }
}

impl FromStr for SegmentCost {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s, None),
        };
        let param = param
            .map(|p| p.parse::<f64>().map_err(|_| Error::invalid(format!("bad cost parameter in {s:?}"))))
            .transpose()?;
        let cost = match (name.to_ascii_lowercase().as_str(), param) {
            ("l1", None) => SegmentCost::L1,
            ("l2", None) => SegmentCost::L2,
            ("normal", None) => SegmentCost::normal(),
            ("normal", Some(e)) => SegmentCost::Normal { epsilon: e },
            ("rbf", None) => SegmentCost::rbf_median(),
            ("rbf", Some(g)) => SegmentCost::rbf(g),
            _ => return Err(Error::invalid(format!("unknown cost {s:?}"))),
        };
        cost.validate()?;
        Ok(cost)
    }
}

/// A cost bound to one signal.
pub struct FittedCost<'a> {
    signal: &'a Signal,
    inner: Fitted,
}

enum Fitted {
    L1,
    L2(PrefixMoments),
    Normal(PrefixMoments, f64),
    Rbf(CumulativeGram),
}

impl FittedCost<'_> {
    pub fn len(&self) -> usize {
        self.signal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }

    /// Cost of `[a, b)`, checking bounds.
    pub fn cost(&self, a: usize, b: usize) -> Result<f64> {
        if a >= b || b > self.signal.len() {
            return Err(Error::invalid(format!(
                "segment [{a}, {b}) is empty or outside a signal of length {}",
                self.signal.len()
            )));
        }
        Ok(self.eval(a, b))
    }

    /// Cost of `[a, b)`; caller guarantees `a < b <= n`.
    pub(crate) fn eval(&self, a: usize, b: usize) -> f64 {
        debug_assert!(a < b && b <= self.signal.len());
        match &self.inner {
            Fitted::L1 => l1_cost(self.signal, a, b),
            Fitted::L2(m) => m.l2(a, b),
            Fitted::Normal(m, eps) => m.normal(a, b, *eps),
            Fitted::Rbf(g) => g.cost(a, b),
        }
    }

    /// RBF bandwidth actually used, if this is a kernel cost.
    pub fn gamma(&self) -> Option<f64> {
        match &self.inner {
            Fitted::Rbf(g) => Some(g.gamma),
            _ => None,
        }
    }
}

fn l1_cost(signal: &Signal, a: usize, b: usize) -> f64 {
    let mut buf: Vec<f64> = Vec::with_capacity(b - a);
    let mut total = 0.0;
    for j in 0..signal.dims() {
        buf.clear();
        buf.extend((a..b).map(|i| signal.row(i)[j]));
        let mid = buf.len() / 2;
        let (_, median, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
        let median = *median;
        total += buf.iter().map(|v| (v - median).abs()).sum::<f64>();
    }
    total
}

/// Cumulative first and (optionally cross) second moments.
struct PrefixMoments {
    d: usize,
    // (n+1) x d
    sum: Vec<f64>,
    // (n+1) x d: squares only, or (n+1) x d x d with cross terms
    second: Vec<f64>,
    cross: bool,
}

impl PrefixMoments {
    fn new(signal: &Signal, cross: bool) -> Self {
        let (n, d) = (signal.len(), signal.dims());
        let width = if cross { d * d } else { d };
        let mut sum = vec![0.0; (n + 1) * d];
        let mut second = vec![0.0; (n + 1) * width];
        for (i, row) in signal.rows().enumerate() {
            for j in 0..d {
                sum[(i + 1) * d + j] = sum[i * d + j] + row[j];
            }
            if cross {
                for p in 0..d {
                    for q in 0..d {
                        let k = p * d + q;
                        second[(i + 1) * width + k] = second[i * width + k] + row[p] * row[q];
                    }
                }
            } else {
                for j in 0..d {
                    second[(i + 1) * d + j] = second[i * d + j] + row[j] * row[j];
                }
            }
        }
        Self { d, sum, second, cross }
    }

    fn l2(&self, a: usize, b: usize) -> f64 {
        debug_assert!(!self.cross);
        let d = self.d;
        let len = (b - a) as f64;
        let mut total = 0.0;
        for j in 0..d {
            let s = self.sum[b * d + j] - self.sum[a * d + j];
            let s2 = self.second[b * d + j] - self.second[a * d + j];
            total += (s2 - s * s / len).max(0.0);
        }
        total
    }

    fn normal(&self, a: usize, b: usize, eps: f64) -> f64 {
        debug_assert!(self.cross);
        let d = self.d;
        let len = (b - a) as f64;
        let mean: Vec<f64> = (0..d).map(|j| (self.sum[b * d + j] - self.sum[a * d + j]) / len).collect();
        let mut cov = vec![0.0; d * d];
        for p in 0..d {
            for q in 0..d {
                let k = p * d + q;
                let s2 = (self.second[b * d * d + k] - self.second[a * d * d + k]) / len;
                cov[k] = s2 - mean[p] * mean[q];
            }
            cov[p * d + p] = cov[p * d + p].max(0.0) + eps;
        }
        len * log_det_spd(&mut cov, d, eps)
    }
}

/// Log-determinant of a symmetric positive definite matrix via Cholesky.
/// Pivots that round below `floor` are clamped to it.
fn log_det_spd(a: &mut [f64], d: usize, floor: f64) -> f64 {
    let mut log_det = 0.0;
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        let diag = diag.max(floor);
        let l_jj = diag.sqrt();
        a[j * d + j] = l_jj;
        log_det += diag.ln();
        for i in (j + 1)..d {
            let mut v = a[i * d + j];
            for k in 0..j {
                v -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = v / l_jj;
        }
    }
    log_det
}

/// Two-dimensional prefix sums of the RBF Gram matrix.
struct CumulativeGram {
    n: usize,
    gamma: f64,
    // (n+1) x (n+1); table[i][j] = sum over [0,i) x [0,j)
    table: Vec<f64>,
}

impl CumulativeGram {
    fn new(signal: &Signal, gamma: f64) -> Self {
        let n = signal.len();
        let w = n + 1;
        let mut table = vec![0.0; w * w];
        for i in 0..n {
            let xi = signal.row(i);
            let mut row_acc = 0.0;
            for j in 0..n {
                let k = (-gamma * sq_dist(xi, signal.row(j))).exp();
                row_acc += k;
                table[(i + 1) * w + j + 1] = table[i * w + j + 1] + row_acc;
            }
        }
        Self { n, gamma, table }
    }

    fn block_sum(&self, a: usize, b: usize) -> f64 {
        let w = self.n + 1;
        self.table[b * w + b] - self.table[a * w + b] - self.table[b * w + a] + self.table[a * w + a]
    }

    fn cost(&self, a: usize, b: usize) -> f64 {
        let len = (b - a) as f64;
        (len - self.block_sum(a, b) / len).max(0.0)
    }
}

pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Median-heuristic RBF bandwidth: `1 / median pairwise squared distance`.
///
/// Uses at most [`MEDIAN_SUBSAMPLE`] evenly spaced points. Falls back to 1 when
/// the median distance is zero.
pub fn rbf_bandwidth_median(signal: &Signal) -> Result<f64> {
    let n = signal.len();
    if n < 2 {
        return Err(Error::invalid("median heuristic needs at least two points"));
    }
    let idx: Vec<usize> = if n > MEDIAN_SUBSAMPLE {
        (0..MEDIAN_SUBSAMPLE).map(|k| k * n / MEDIAN_SUBSAMPLE).collect()
    } else {
        (0..n).collect()
    };
    let mut dists = Vec::with_capacity(idx.len() * (idx.len() - 1) / 2);
    for (p, &i) in idx.iter().enumerate() {
        for &j in &idx[p + 1..] {
            dists.push(sq_dist(signal.row(i), signal.row(j)));
        }
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let median = if m % 2 == 1 { dists[m / 2] } else { 0.5 * (dists[m / 2 - 1] + dists[m / 2]) };
    if median > 0.0 && median.is_finite() {
        Ok(1.0 / median)
    } else {
        Ok(1.0)
    }
}
