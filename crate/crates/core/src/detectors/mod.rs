//! The five change-point methods and the configuration that selects one.
//!
//! A [`DetectorConfig`] is identified by a stable slash-separated string,
//! `method/cost/penalty-or-threshold/min_size/m/znorm/channel_rule`, with `-`
//! for fields the method does not use:
//!
//! ```text
//! pelt/l2/10/2/-/z/-
//! kcpd/rbf:0.1/3/7/-/raw/-
//! fluss/-/0.45/-/14/z/any
//! ```

mod fluss;
mod matrix_profile;
mod segmentation;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use fluss::{fluss_alert, fluss_cac, fluss_score, ChannelRule, EDGE_FACTOR};
pub use matrix_profile::{exclusion_zone, matrix_profile, min_series_len, MatrixProfile};
pub use segmentation::{binseg, bottomup, kcpd, pelt, penalized_cost, Segmentation};

use crate::costs::{Bandwidth, SegmentCost};
use crate::error::{Error, Result};
use crate::series::Signal;

/// Method name without parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Pelt,
    Binseg,
    BottomUp,
    Kcpd,
    Fluss,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] =
        [MethodKind::Pelt, MethodKind::Binseg, MethodKind::BottomUp, MethodKind::Kcpd, MethodKind::Fluss];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodKind::Pelt => "pelt",
            MethodKind::Binseg => "binseg",
            MethodKind::BottomUp => "bottomup",
            MethodKind::Kcpd => "kcpd",
            MethodKind::Fluss => "fluss",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

/// Parameters shared by the penalized segmentation methods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalized {
    pub cost: SegmentCost,
    pub penalty: f64,
    pub min_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlussParams {
    pub threshold: f64,
    /// Subsequence length.
    pub m: usize,
    pub channel_rule: ChannelRule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Pelt(Penalized),
    Binseg(Penalized),
    BottomUp(Penalized),
    /// PELT restricted to the RBF kernel cost.
    Kcpd { bandwidth: Bandwidth, penalty: f64, min_size: usize },
    Fluss(FlussParams),
}

impl Method {
    pub fn kind(&self) -> MethodKind {
        match self {
            Method::Pelt(_) => MethodKind::Pelt,
            Method::Binseg(_) => MethodKind::Binseg,
            Method::BottomUp(_) => MethodKind::BottomUp,
            Method::Kcpd { .. } => MethodKind::Kcpd,
            Method::Fluss(_) => MethodKind::Fluss,
        }
    }
}

/// A fully specified detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub method: Method,
    /// Z-normalize each channel of every window before detection.
    pub znorm: bool,
}

impl DetectorConfig {
    pub fn new(method: Method, znorm: bool) -> Result<Self> {
        let config = Self { method, znorm };
        config.validate()?;
        Ok(config)
    }

    pub fn pelt(cost: SegmentCost, penalty: f64, min_size: usize, znorm: bool) -> Result<Self> {
        Self::new(Method::Pelt(Penalized { cost, penalty, min_size }), znorm)
    }

    pub fn fluss(threshold: f64, m: usize, channel_rule: ChannelRule, znorm: bool) -> Result<Self> {
        Self::new(Method::Fluss(FlussParams { threshold, m, channel_rule }), znorm)
    }

    pub fn kind(&self) -> MethodKind {
        self.method.kind()
    }

    pub fn validate(&self) -> Result<()> {
        let check_penalized = |penalty: f64, min_size: usize| {
            if !(penalty.is_finite() && penalty >= 0.0) {
                return Err(Error::invalid(format!("penalty must be finite and >= 0, got {penalty}")));
            }
            if min_size == 0 {
                return Err(Error::invalid("min_size must be at least 1"));
            }
            Ok(())
        };
        match &self.method {
            Method::Pelt(p) | Method::Binseg(p) | Method::BottomUp(p) => {
                p.cost.validate()?;
                check_penalized(p.penalty, p.min_size)
            }
            Method::Kcpd { bandwidth, penalty, min_size } => {
                SegmentCost::Rbf { bandwidth: *bandwidth }.validate()?;
                check_penalized(*penalty, *min_size)
            }
            Method::Fluss(f) => {
                if !(f.threshold > 0.0 && f.threshold < 1.0) {
                    return Err(Error::invalid(format!("threshold must be in (0, 1), got {}", f.threshold)));
                }
                if f.m < 3 {
                    return Err(Error::invalid(format!("subsequence length must be >= 3, got {}", f.m)));
                }
                Ok(())
            }
        }
    }

    /// Stable identifier used as the key in result tables.
    pub fn id(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for DetectorConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let z = if self.znorm { "z" } else { "raw" };
        let kind = self.kind();
        match &self.method {
            Method::Pelt(p) | Method::Binseg(p) | Method::BottomUp(p) => {
                write!(f, "{kind}/{}/{}/{}/-/{z}/-", p.cost, p.penalty, p.min_size)
            }
            Method::Kcpd { bandwidth, penalty, min_size } => {
                let cost = SegmentCost::Rbf { bandwidth: *bandwidth };
                write!(f, "{kind}/{cost}/{penalty}/{min_size}/-/{z}/-")
            }
            Method::Fluss(p) => {
                write!(f, "{kind}/-/{}/-/{}/{z}/{}", p.threshold, p.m, p.channel_rule.as_str())
            }
        }
    }
}

impl FromStr for DetectorConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |what: &str| Error::invalid(format!("bad {what} in detector id {s:?}"));
        let fields: Vec<&str> = s.split('/').collect();
        let [method, cost, value, min_size, m, znorm, rule] = fields[..] else {
            return Err(Error::invalid(format!("detector id {s:?} must have 7 '/'-separated fields")));
        };
        let kind: MethodKind = method.parse()?;
        let znorm = match znorm {
            "z" => true,
            "raw" => false,
            _ => return Err(bad("znorm flag")),
        };
        let value: f64 = value.parse().map_err(|_| bad("penalty/threshold"))?;
        let method = if kind == MethodKind::Fluss {
            let m = m.parse().map_err(|_| bad("subsequence length"))?;
            let channel_rule = match rule {
                "any" => ChannelRule::Any,
                "sum" => ChannelRule::Sum,
                _ => return Err(bad("channel rule")),
            };
            Method::Fluss(FlussParams { threshold: value, m, channel_rule })
        } else {
            let cost: SegmentCost = cost.parse()?;
            let min_size = min_size.parse().map_err(|_| bad("min_size"))?;
            let p = Penalized { cost, penalty: value, min_size };
            match kind {
                MethodKind::Pelt => Method::Pelt(p),
                MethodKind::Binseg => Method::Binseg(p),
                MethodKind::BottomUp => Method::BottomUp(p),
                MethodKind::Kcpd => match cost {
                    SegmentCost::Rbf { bandwidth } => Method::Kcpd { bandwidth, penalty: value, min_size },
                    _ => return Err(bad("kcpd cost (must be rbf)")),
                },
                MethodKind::Fluss => unreachable!(),
            }
        };
        DetectorConfig::new(method, znorm)
    }
}

impl Serialize for DetectorConfig {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DetectorConfig {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Outcome of running a detector on one window.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// Reported change point: the last breakpoint, or the FLUSS curve minimum under threshold.
    pub change_point: Option<usize>,
    /// Number of breakpoints found (segmentation methods).
    pub breakpoints: usize,
    /// Diagnostic score: penalized cost for segmentation, lowest curve value for FLUSS.
    pub score: Option<f64>,
}

impl Detection {
    pub fn none() -> Self {
        Self { change_point: None, breakpoints: 0, score: None }
    }

    pub fn fired(&self) -> bool {
        self.change_point.is_some()
    }
}

/// Run `config` on one window.
pub fn detect(window: &Signal, config: &DetectorConfig) -> Result<Detection> {
    if window.is_empty() {
        return Err(Error::invalid("cannot run a detector on an empty window"));
    }
    let normalized;
    let signal = if config.znorm {
        normalized = window.znormalized()?;
        &normalized
    } else {
        window
    };
    let from_segmentation = |seg: Segmentation| Detection {
        change_point: seg.last(),
        breakpoints: seg.breakpoints.len(),
        score: Some(seg.total_cost),
    };
    Ok(match &config.method {
        Method::Pelt(p) => from_segmentation(pelt(signal, &p.cost, p.penalty, p.min_size)?),
        Method::Binseg(p) => from_segmentation(binseg(signal, &p.cost, p.penalty, p.min_size)?),
        Method::BottomUp(p) => from_segmentation(bottomup(signal, &p.cost, p.penalty, p.min_size)?),
        Method::Kcpd { bandwidth, penalty, min_size } => {
            from_segmentation(kcpd(signal, *bandwidth, *penalty, *min_size)?)
        }
        Method::Fluss(p) => match fluss_score(signal, p.m, p.channel_rule) {
            Some((pos, value)) => Detection {
                change_point: (value < p.threshold).then_some(pos),
                breakpoints: 0,
                score: Some(value),
            },
            None => Detection::none(),
        },
    })
}
