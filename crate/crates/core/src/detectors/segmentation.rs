//! Penalized segmentation: exact (PELT, KCPD) and greedy (Binseg, BottomUp).
//!
//! All methods minimize or approximate
//! `sum of segment costs + penalty * number of breakpoints`
//! over segmentations whose segments all hold at least `min_size` samples.
//! Ties are always broken towards the smallest index.

use crate::costs::{Bandwidth, FittedCost, SegmentCost};
use crate::error::{Error, Result};
use crate::series::Signal;

/// Interior breakpoints of a segmentation and its penalized cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    /// Strictly increasing, exclusive of 0 and n.
    pub breakpoints: Vec<usize>,
    /// Sum of segment costs plus penalty times the number of breakpoints.
    pub total_cost: f64,
}

impl Segmentation {
    pub fn last(&self) -> Option<usize> {
        self.breakpoints.last().copied()
    }
}

fn check_args(signal: &Signal, penalty: f64, min_size: usize) -> Result<()> {
    if !(penalty.is_finite() && penalty >= 0.0) {
        return Err(Error::invalid(format!("penalty must be finite and >= 0, got {penalty}")));
    }
    if min_size == 0 {
        return Err(Error::invalid("min_size must be at least 1"));
    }
    if signal.is_empty() {
        return Err(Error::invalid("cannot segment an empty signal"));
    }
    Ok(())
}

/// Penalized cost of an explicit breakpoint set.
pub fn penalized_cost(cost: &FittedCost<'_>, breakpoints: &[usize], penalty: f64) -> f64 {
    let mut bounds = Vec::with_capacity(breakpoints.len() + 2);
    bounds.push(0);
    bounds.extend_from_slice(breakpoints);
    bounds.push(cost.len());
    let sum: f64 = bounds.windows(2).map(|w| cost.eval(w[0], w[1])).sum();
    sum + penalty * breakpoints.len() as f64
}

/// Exact penalized segmentation with PELT pruning.
pub fn pelt(signal: &Signal, cost: &SegmentCost, penalty: f64, min_size: usize) -> Result<Segmentation> {
    check_args(signal, penalty, min_size)?;
    let fitted = cost.fit(signal)?;
    Ok(pelt_fitted(&fitted, penalty, min_size))
}

/// Kernel change-point detection: [`pelt`] over the RBF kernel cost.
pub fn kcpd(signal: &Signal, bandwidth: Bandwidth, penalty: f64, min_size: usize) -> Result<Segmentation> {
    pelt(signal, &SegmentCost::Rbf { bandwidth }, penalty, min_size)
}

pub(crate) fn pelt_fitted(cost: &FittedCost<'_>, penalty: f64, min_size: usize) -> Segmentation {
    let n = cost.len();
    if n < 2 * min_size {
        return Segmentation { breakpoints: vec![], total_cost: cost.eval(0, n) };
    }

    // best[t]: optimal penalized cost of [0, t), counting one penalty per segment
    // and starting at -penalty so the total counts breakpoints.
    let mut best = vec![f64::INFINITY; n + 1];
    let mut last = vec![0usize; n + 1];
    best[0] = -penalty;

    // (start, expires): a candidate flagged at time t stays usable until t + min_size,
    // since t itself cannot close a segment ending before then.
    let mut candidates: Vec<(usize, usize)> = vec![(0, usize::MAX)];
    let mut partial: Vec<f64> = Vec::with_capacity(n);

    for t in min_size..=n {
        partial.clear();
        let mut incumbent = f64::INFINITY;
        let mut arg = 0;
        for &(s, expires) in &candidates {
            if t >= expires || t - s < min_size {
                partial.push(f64::NAN);
                continue;
            }
            let v = best[s] + cost.eval(s, t);
            partial.push(v);
            if v + penalty < incumbent {
                incumbent = v + penalty;
                arg = s;
            }
        }
        best[t] = incumbent;
        last[t] = arg;

        if incumbent.is_finite() {
            for (c, &v) in candidates.iter_mut().zip(&partial) {
                if c.1 == usize::MAX && v > incumbent {
                    c.1 = t + min_size;
                }
            }
        }
        candidates.retain(|&(_, expires)| expires > t + 1);
        if incumbent.is_finite() && t + min_size <= n {
            candidates.push((t, usize::MAX));
        }
    }

    let mut breakpoints = Vec::new();
    let mut t = n;
    while t > 0 {
        let s = last[t];
        if s > 0 {
            breakpoints.push(s);
        }
        t = s;
    }
    breakpoints.reverse();
    let total_cost = penalized_cost(cost, &breakpoints, penalty);
    Segmentation { breakpoints, total_cost }
}

/// Greedy binary segmentation.
///
/// A split is kept when its cost reduction strictly exceeds `penalty`; both
/// halves are then split recursively.
pub fn binseg(signal: &Signal, cost: &SegmentCost, penalty: f64, min_size: usize) -> Result<Segmentation> {
    check_args(signal, penalty, min_size)?;
    let fitted = cost.fit(signal)?;
    let n = signal.len();
    let mut breakpoints = Vec::new();
    let mut stack = vec![(0usize, n)];
    while let Some((a, b)) = stack.pop() {
        if b - a < 2 * min_size {
            continue;
        }
        let whole = fitted.eval(a, b);
        let mut best_gain = f64::NEG_INFINITY;
        let mut best_split = a;
        for m in (a + min_size)..=(b - min_size) {
            let gain = whole - fitted.eval(a, m) - fitted.eval(m, b);
            if gain > best_gain {
                best_gain = gain;
                best_split = m;
            }
        }
        if best_gain > penalty {
            breakpoints.push(best_split);
            stack.push((best_split, b));
            stack.push((a, best_split));
        }
    }
    breakpoints.sort_unstable();
    let total_cost = penalized_cost(&fitted, &breakpoints, penalty);
    Ok(Segmentation { breakpoints, total_cost })
}

/// Bottom-up segmentation.
///
/// Starts from a breakpoint every `min_size` samples and merges the adjacent
/// pair with the smallest cost increase while that increase is strictly below
/// `penalty`. With `penalty == 0` the initial grid is returned.
pub fn bottomup(signal: &Signal, cost: &SegmentCost, penalty: f64, min_size: usize) -> Result<Segmentation> {
    check_args(signal, penalty, min_size)?;
    let fitted = cost.fit(signal)?;
    let n = signal.len();

    let mut bounds: Vec<usize> = vec![0];
    let mut b = min_size;
    while b + min_size <= n {
        bounds.push(b);
        b += min_size;
    }
    bounds.push(n);

    // increase[i] belongs to interior bound i (1..len-1); index 0 unused
    let merge_increase = |bounds: &[usize], i: usize| {
        let (l, m, r) = (bounds[i - 1], bounds[i], bounds[i + 1]);
        (fitted.eval(l, r) - fitted.eval(l, m) - fitted.eval(m, r)).max(0.0)
    };
    let mut increase: Vec<f64> = (0..bounds.len())
        .map(|i| if i == 0 || i + 1 == bounds.len() { f64::INFINITY } else { merge_increase(&bounds, i) })
        .collect();

    while bounds.len() > 2 {
        let mut arg = 0;
        let mut min = f64::INFINITY;
        for (i, &inc) in increase.iter().enumerate().take(bounds.len() - 1).skip(1) {
            if inc < min {
                min = inc;
                arg = i;
            }
        }
        if !(min < penalty) {
            break;
        }
        bounds.remove(arg);
        increase.remove(arg);
        for i in [arg - 1, arg] {
            if i >= 1 && i + 1 < bounds.len() {
                increase[i] = merge_increase(&bounds, i);
            }
        }
    }

    let breakpoints = bounds[1..bounds.len() - 1].to_vec();
    let total_cost = penalized_cost(&fitted, &breakpoints, penalty);
    Ok(Segmentation { breakpoints, total_cost })
}
