//! Self-join matrix profile under z-normalized Euclidean distance.
//!
//! Dot products are updated in constant time along each diagonal of the
//! distance matrix, so the whole profile costs O(n^2).

use crate::error::{Error, Result};
use crate::series::DEGENERATE_STD;

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixProfile {
    /// Distance from each subsequence to its nearest non-trivial neighbor;
    /// infinite for a subsequence that has none (possible in very short series).
    pub profile: Vec<f64>,
    /// Start index of that neighbor, `usize::MAX` when there is none.
    pub index: Vec<usize>,
}

/// Half-width of the trivial-match exclusion zone: `ceil(m / 2)`.
pub fn exclusion_zone(m: usize) -> usize {
    m.div_ceil(2)
}

/// Shortest series in which some subsequence of length `m` has a non-trivial neighbor.
pub fn min_series_len(m: usize) -> usize {
    m + exclusion_zone(m) + 1
}

/// Mean and population standard deviation of every length-`m` subsequence.
pub(crate) fn sliding_stats(series: &[f64], m: usize) -> (Vec<f64>, Vec<f64>) {
    let count = series.len() + 1 - m;
    let mut means = Vec::with_capacity(count);
    let mut stds = Vec::with_capacity(count);
    for w in series.windows(m) {
        let mu = w.iter().sum::<f64>() / m as f64;
        let var = w.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
        means.push(mu);
        stds.push(var.sqrt());
    }
    (means, stds)
}

/// Z-normalized distance from a dot product. Flat subsequences count as the
/// zero vector after normalization.
fn znorm_distance(qt: f64, m: usize, mu_i: f64, sd_i: f64, mu_j: f64, sd_j: f64) -> f64 {
    let flat_i = sd_i < DEGENERATE_STD;
    let flat_j = sd_j < DEGENERATE_STD;
    match (flat_i, flat_j) {
        (true, true) => 0.0,
        (true, false) | (false, true) => (m as f64).sqrt(),
        (false, false) => {
            let mf = m as f64;
            let corr = (qt - mf * mu_i * mu_j) / (mf * sd_i * sd_j);
            (2.0 * mf * (1.0 - corr)).max(0.0).sqrt()
        }
    }
}

pub fn matrix_profile(series: &[f64], m: usize) -> Result<MatrixProfile> {
    if m < 2 {
        return Err(Error::invalid(format!("subsequence length must be >= 2, got {m}")));
    }
    if series.len() < min_series_len(m) {
        return Err(Error::invalid(format!(
            "series of length {} is too short for m = {m} (need {})",
            series.len(),
            min_series_len(m)
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix profile input has non-finite values"));
    }

    // Centering leaves z-normalized distances unchanged and limits cancellation.
    let offset = series.iter().sum::<f64>() / series.len() as f64;
    let ts: Vec<f64> = series.iter().map(|v| v - offset).collect();

    let count = ts.len() - m + 1;
    let excl = exclusion_zone(m);
    let (means, stds) = sliding_stats(&ts, m);
    let mut profile = vec![f64::INFINITY; count];
    let mut index = vec![usize::MAX; count];

    let mut update = |i: usize, j: usize, d: f64| {
        if d < profile[i] || (d == profile[i] && j < index[i]) {
            profile[i] = d;
            index[i] = j;
        }
    };

    for k in (excl + 1)..count {
        let mut qt: f64 = ts[..m].iter().zip(&ts[k..k + m]).map(|(a, b)| a * b).sum();
        for i in 0..count - k {
            let j = i + k;
            if i > 0 {
                qt += ts[i + m - 1] * ts[j + m - 1] - ts[i - 1] * ts[j - 1];
            }
            let d = znorm_distance(qt, m, means[i], stds[i], means[j], stds[j]);
            update(i, j, d);
            update(j, i, d);
        }
    }

    Ok(MatrixProfile { profile, index })
}
