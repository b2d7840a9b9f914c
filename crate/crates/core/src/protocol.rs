//! Streaming first-alert evaluation of one life cycle.
//!
//! A cycle is replayed as a growing prefix, `T` samples at a time. The
//! detector runs on each prefix in turn and the first one that fires ends the
//! replay: in the field that alert triggers maintenance, so nothing after it
//! matters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detectors::{detect, Detection, DetectorConfig};
use crate::error::{Error, Result};
use crate::series::{prefix_ends, LifeCycle, Signal};

/// Anything that can be asked whether a window warrants an alert.
pub trait WindowDetector {
    fn detect_window(&self, window: &Signal) -> Result<Detection>;
}

impl WindowDetector for DetectorConfig {
    fn detect_window(&self, window: &Signal) -> Result<Detection> {
        detect(window, self)
    }
}

/// Which instant counts as the alert time `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlertTiming {
    /// End of the window that fired: when the system could actually act.
    #[default]
    WindowEnd,
    /// The change point the detector reported inside that window.
    ChangePoint,
}

impl fmt::Display for AlertTiming {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlertTiming::WindowEnd => "window-end",
            AlertTiming::ChangePoint => "changepoint",
        })
    }
}

impl FromStr for AlertTiming {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "window-end" => Ok(AlertTiming::WindowEnd),
            "changepoint" => Ok(AlertTiming::ChangePoint),
            _ => Err(Error::invalid(format!("unknown alert timing {s:?}"))),
        }
    }
}

/// The first detection for a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alert {
    /// Exclusive end of the window that fired, in samples.
    pub step_end_index: usize,
    pub change_point_index: usize,
    /// Alert time in samples from the cycle start.
    pub a: usize,
}

/// One evaluated window, for traces.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowTrace {
    pub end_index: usize,
    pub detection: Detection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "TP")]
    TruePositive,
    #[serde(rename = "FP")]
    FalsePositive,
    #[serde(rename = "FN")]
    FalseNegative,
    /// Only possible for a cycle that has not (yet) failed.
    #[serde(rename = "TN")]
    TrueNegative,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::TruePositive => "TP",
            Verdict::FalsePositive => "FP",
            Verdict::FalseNegative => "FN",
            Verdict::TrueNegative => "TN",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "TP" => Ok(Verdict::TruePositive),
            "FP" => Ok(Verdict::FalsePositive),
            "FN" => Ok(Verdict::FalseNegative),
            "TN" => Ok(Verdict::TrueNegative),
            _ => Err(Error::invalid(format!("unknown verdict {s:?}"))),
        }
    }
}

/// Replay `cycle` in steps of `step` samples and stop at the first alert.
pub fn run_streaming<D: WindowDetector + ?Sized>(
    cycle: &LifeCycle,
    detector: &D,
    step: usize,
    timing: AlertTiming,
) -> Result<Option<Alert>> {
    run_streaming_traced(cycle, detector, step, timing, |_| {})
}

/// [`run_streaming`], reporting every evaluated window to `on_window`.
pub fn run_streaming_traced<D: WindowDetector + ?Sized>(
    cycle: &LifeCycle,
    detector: &D,
    step: usize,
    timing: AlertTiming,
    mut on_window: impl FnMut(WindowTrace),
) -> Result<Option<Alert>> {
    if step == 0 {
        return Err(Error::invalid("window step must be at least one sample"));
    }
    for end in prefix_ends(cycle.len(), step) {
        let detection = detector.detect_window(&cycle.prefix_signal(end))?;
        let change_point = detection.change_point;
        on_window(WindowTrace { end_index: end, detection });
        if let Some(cp) = change_point {
            let cp = cp.min(end - 1);
            let a = match timing {
                AlertTiming::WindowEnd => end,
                AlertTiming::ChangePoint => cp,
            };
            return Ok(Some(Alert { step_end_index: end, change_point_index: cp, a }));
        }
    }
    Ok(None)
}

/// Classify a cycle outcome. `n`, `pp` and `rd` are in samples.
///
/// TP when the alert lands in `[n - (pp + rd), n - rd)`, FP when it is earlier
/// or inside the responsive duration, FN when nothing fired.
pub fn classify(alert_time: Option<f64>, n: f64, pp: f64, rd: f64) -> Verdict {
    match alert_time {
        None => Verdict::FalseNegative,
        Some(a) if a >= n - rd => Verdict::FalsePositive,
        Some(a) if a >= n - (pp + rd) => Verdict::TruePositive,
        Some(_) => Verdict::FalsePositive,
    }
}

/// [`classify`] for a cycle that may not have ended in failure: without a
/// failure an alert can only be a false positive and silence is a true negative.
pub fn classify_cycle(alert_time: Option<f64>, n: f64, pp: f64, rd: f64, ended_in_failure: bool) -> Verdict {
    if ended_in_failure {
        classify(alert_time, n, pp, rd)
    } else if alert_time.is_some() {
        Verdict::FalsePositive
    } else {
        Verdict::TrueNegative
    }
}
