//! Change-point detection evaluated as a predictive-maintenance alerting system.
//!
//! The pipeline turns categorical machine event logs into per-life-cycle
//! severity-ratio series ([`ingest`]), replays each cycle as a growing stream
//! through one of five change-point detectors ([`detectors`], [`protocol`]),
//! and scores the first alert against business constraints ([`metrics`]).
//! [`sweep`] runs the full (cycle x configuration) grid.

#![forbid(unsafe_code)]

pub mod costs;
pub mod cycles;
pub mod detectors;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod protocol;
pub mod series;
pub mod sweep;
pub mod synth;

pub use costs::{rbf_bandwidth_median, Bandwidth, CostKind, SegmentCost};
pub use detectors::{
    binseg, bottomup, detect, fluss_alert, fluss_cac, kcpd, matrix_profile, pelt, ChannelRule,
    Detection, DetectorConfig, FlussParams, Method, MethodKind, Penalized, Segmentation,
};
pub use error::{Error, Result};
pub use metrics::{e_score, Aggregate, EvaluationRecord};
pub use protocol::{classify, run_streaming, Alert, AlertTiming, Verdict};
pub use series::{prefix_windows, znormalize, BusinessParams, LifeCycle, Signal, Window};

/// Version string recorded in results metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
