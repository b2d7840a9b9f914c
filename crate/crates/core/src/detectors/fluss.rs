//! Semantic segmentation from matrix-profile arcs.
//!
//! Every subsequence draws an arc to its nearest neighbor. Few arcs cross a
//! regime boundary, so the arc count, normalized by what uniformly random arcs
//! would give, dips there. An alert is raised when the dip falls under a
//! threshold anywhere in the window.

use serde::{Deserialize, Serialize};

use super::matrix_profile::{matrix_profile, min_series_len};
use crate::series::{Signal, DEGENERATE_STD};

/// Positions closer than `EDGE_FACTOR * m` to either end are masked to 1.
pub const EDGE_FACTOR: usize = 5;

/// How several channels are combined into one decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelRule {
    /// Alert when any channel dips under the threshold.
    Any,
    /// Average the channels' curves, then threshold.
    Sum,
}

impl ChannelRule {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelRule::Any => "any",
            ChannelRule::Sum => "sum",
        }
    }
}

/// Corrected arc curve for a matrix-profile index.
///
/// Values lie in `[0, 1]`; positions within `5 m` of either edge are 1.
pub fn fluss_cac(mp_index: &[usize], m: usize) -> Vec<f64> {
    let len = mp_index.len();
    let mut marks = vec![0i64; len + 1];
    for (i, &j) in mp_index.iter().enumerate() {
        if j >= len {
            continue;
        }
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        marks[lo] += 1;
        marks[hi] -= 1;
    }
    let edge = EDGE_FACTOR * m;
    let n = len as f64;
    let mut crossings = 0i64;
    (0..len)
        .map(|x| {
            crossings += marks[x];
            if x < edge || x + edge >= len {
                return 1.0;
            }
            let xf = x as f64;
            let ideal = 2.0 * xf * (n - xf) / n;
            if ideal <= 0.0 {
                1.0
            } else {
                (crossings as f64 / ideal).clamp(0.0, 1.0)
            }
        })
        .collect()
}

/// Lowest interior value of a curve and its first position.
fn interior_min(cac: &[f64], m: usize) -> Option<(usize, f64)> {
    let edge = EDGE_FACTOR * m;
    if cac.len() <= 2 * edge {
        return None;
    }
    let mut best: Option<(usize, f64)> = None;
    for (x, &v) in cac.iter().enumerate().take(cac.len() - edge).skip(edge) {
        if best.map_or(true, |(_, b)| v < b) {
            best = Some((x, v));
        }
    }
    best
}

/// Curve for one channel, or `None` when the channel is too short. A channel
/// that is flat across the whole window has no arcs to speak of and yields all ones.
fn channel_cac(series: &[f64], m: usize) -> Option<Vec<f64>> {
    if series.len() < min_series_len(m) {
        return None;
    }
    let count = series.len() - m + 1;
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / series.len() as f64;
    if var.sqrt() < DEGENERATE_STD {
        return Some(vec![1.0; count]);
    }
    let mp = matrix_profile(series, m).ok()?;
    Some(fluss_cac(&mp.index, m))
}

/// Lowest combined curve value and where it occurs, without thresholding.
///
/// `None` when the window is too short for any interior position.
pub fn fluss_score(window: &Signal, m: usize, rule: ChannelRule) -> Option<(usize, f64)> {
    let curves: Vec<Vec<f64>> = window
        .columns()
        .iter()
        .map(|c| channel_cac(c, m))
        .collect::<Option<Vec<_>>>()?;
    if curves.is_empty() {
        return None;
    }
    match rule {
        ChannelRule::Any => {
            let mut best: Option<(usize, f64)> = None;
            for cac in &curves {
                if let Some((x, v)) = interior_min(cac, m) {
                    if best.map_or(true, |(_, b)| v < b) {
                        best = Some((x, v));
                    }
                }
            }
            best
        }
        ChannelRule::Sum => {
            let k = curves.len() as f64;
            let avg: Vec<f64> = (0..curves[0].len())
                .map(|x| curves.iter().map(|c| c[x]).sum::<f64>() / k)
                .collect();
            interior_min(&avg, m)
        }
    }
}

/// Position of a regime change when the combined curve dips strictly below `threshold`.
pub fn fluss_alert(window: &Signal, m: usize, threshold: f64, rule: ChannelRule) -> Option<usize> {
    fluss_score(window, m, rule).and_then(|(x, v)| (v < threshold).then_some(x))
}
