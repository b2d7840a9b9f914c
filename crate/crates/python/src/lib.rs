//! Python bindings for the `maintseg` toolkit.
//!
//! Signals cross the boundary as lists of rows (`list[list[float]]`) or, for
//! univariate helpers, plain `list[float]`. Detector configurations are passed
//! by their string id, e.g. `"pelt/l2/80/3/-/z/-"`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use maintseg::sweep::{run_sweep, SweepOptions};
use maintseg::{
    AlertTiming, Bandwidth, BusinessParams, DetectorConfig, EvaluationRecord, LifeCycle, SegmentCost,
    Segmentation, Signal,
};

fn err(e: maintseg::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn signal(rows: Vec<Vec<f64>>) -> PyResult<Signal> {
    Signal::from_rows(&rows).map_err(err)
}

fn config(id: &str) -> PyResult<DetectorConfig> {
    id.parse().map_err(err)
}

fn cost(name: &str) -> PyResult<SegmentCost> {
    name.parse().map_err(err)
}

fn seg_tuple(seg: Segmentation) -> (Vec<usize>, f64) {
    (seg.breakpoints, seg.total_cost)
}

/// One life cycle: a per-period feature series for a single ATM interval.
#[pyclass(name = "LifeCycle", module = "maintseg", frozen)]
#[derive(Clone)]
struct PyLifeCycle {
    inner: LifeCycle,
}

#[pymethods]
impl PyLifeCycle {
    /// Daily cycle built from raw rows, with features named `f0, f1, ...`.
    #[new]
    #[pyo3(signature = (atm_id, cycle_index, samples, ended_in_failure = true))]
    fn new(atm_id: String, cycle_index: u32, samples: Vec<Vec<f64>>, ended_in_failure: bool) -> PyResult<Self> {
        let base = LifeCycle::from_samples(atm_id, cycle_index, samples).map_err(err)?;
        let inner = LifeCycle::new(
            base.atm_id(),
            base.cycle_index(),
            base.start_time(),
            base.period_hours(),
            base.feature_names().to_vec(),
            base.samples().to_vec(),
            ended_in_failure,
        )
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn atm_id(&self) -> &str {
        self.inner.atm_id()
    }

    #[getter]
    fn cycle_index(&self) -> u32 {
        self.inner.cycle_index()
    }

    #[getter]
    fn samples(&self) -> Vec<Vec<f64>> {
        self.inner.samples().to_vec()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names().to_vec()
    }

    #[getter]
    fn ended_in_failure(&self) -> bool {
        self.inner.ended_in_failure()
    }

    #[getter]
    fn period_hours(&self) -> f64 {
        self.inner.period_hours()
    }

    #[getter]
    fn start_time(&self) -> String {
        self.inner.start_time().to_rfc3339()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "LifeCycle(atm_id={:?}, cycle_index={}, len={}, features={})",
            self.inner.atm_id(),
            self.inner.cycle_index(),
            self.inner.len(),
            self.inner.feature_names().len()
        )
    }
}

/// Z-normalize a univariate series (population standard deviation).
#[pyfunction]
fn znormalize(values: Vec<f64>) -> PyResult<Vec<f64>> {
    maintseg::znormalize(&values).map_err(err)
}

/// Exclusive end indices of the growing windows replayed for a cycle of `n` samples.
#[pyfunction]
fn prefix_ends(n: usize, step: usize) -> Vec<usize> {
    maintseg::series::prefix_ends(n, step)
}

/// PELT segmentation; returns `(breakpoints, total_cost)`.
#[pyfunction]
#[pyo3(signature = (samples, penalty, cost = "l2", min_size = 2))]
fn pelt(samples: Vec<Vec<f64>>, penalty: f64, cost: &str, min_size: usize) -> PyResult<(Vec<usize>, f64)> {
    let c = self::cost(cost)?;
    maintseg::pelt(&signal(samples)?, &c, penalty, min_size).map(seg_tuple).map_err(err)
}

/// Binary segmentation; returns `(breakpoints, total_cost)`.
#[pyfunction]
#[pyo3(signature = (samples, penalty, cost = "l2", min_size = 2))]
fn binseg(samples: Vec<Vec<f64>>, penalty: f64, cost: &str, min_size: usize) -> PyResult<(Vec<usize>, f64)> {
    let c = self::cost(cost)?;
    maintseg::binseg(&signal(samples)?, &c, penalty, min_size).map(seg_tuple).map_err(err)
}

/// Bottom-up segmentation; returns `(breakpoints, total_cost)`.
#[pyfunction]
#[pyo3(signature = (samples, penalty, cost = "l2", min_size = 2))]
fn bottomup(samples: Vec<Vec<f64>>, penalty: f64, cost: &str, min_size: usize) -> PyResult<(Vec<usize>, f64)> {
    let c = self::cost(cost)?;
    maintseg::bottomup(&signal(samples)?, &c, penalty, min_size).map(seg_tuple).map_err(err)
}

/// Kernel change-point detection with an RBF kernel.
///
/// `gamma=None` picks the bandwidth with the median heuristic.
#[pyfunction]
#[pyo3(signature = (samples, penalty, gamma = None, min_size = 2))]
fn kcpd(samples: Vec<Vec<f64>>, penalty: f64, gamma: Option<f64>, min_size: usize) -> PyResult<(Vec<usize>, f64)> {
    let bw = gamma.map_or(Bandwidth::Median, Bandwidth::Fixed);
    maintseg::kcpd(&signal(samples)?, bw, penalty, min_size).map(seg_tuple).map_err(err)
}

/// Self-join matrix profile; missing neighbors come back as `inf` / `None`.
#[pyfunction]
fn matrix_profile(series: Vec<f64>, m: usize) -> PyResult<(Vec<f64>, Vec<Option<usize>>)> {
    let mp = maintseg::matrix_profile(&series, m).map_err(err)?;
    let index = mp.index.into_iter().map(|j| (j != usize::MAX).then_some(j)).collect();
    Ok((mp.profile, index))
}

/// Corrected arc curve from a matrix-profile index (`None` entries are ignored).
#[pyfunction]
fn fluss_cac(index: Vec<Option<usize>>, m: usize) -> Vec<f64> {
    let index: Vec<usize> = index.into_iter().map(|j| j.unwrap_or(usize::MAX)).collect();
    maintseg::fluss_cac(&index, m)
}

/// Score an alert at `a` samples into a cycle of `n` samples (pp and rd in samples).
#[pyfunction]
#[pyo3(signature = (a, n, pp, rd, s = 0.2))]
fn e_score(a: Option<f64>, n: f64, pp: f64, rd: f64, s: f64) -> PyResult<f64> {
    maintseg::e_score(a, n, pp, rd, s).map_err(err)
}

/// Verdict (`"TP"`, `"FP"`, `"FN"`) for an alert time; all arguments in samples.
#[pyfunction]
#[pyo3(signature = (a, n, pp, rd))]
fn classify(a: Option<f64>, n: f64, pp: f64, rd: f64) -> &'static str {
    maintseg::classify(a, n, pp, rd).as_str()
}

/// Canonical form of a detector id; raises on malformed or invalid ids.
#[pyfunction]
fn parse_config(id: &str) -> PyResult<String> {
    Ok(config(id)?.id())
}

/// Run a detector on one window; returns `{change_point, breakpoints, score}`.
#[pyfunction]
fn detect<'py>(py: Python<'py>, samples: Vec<Vec<f64>>, config_id: &str) -> PyResult<Bound<'py, PyDict>> {
    let d = maintseg::detect(&signal(samples)?, &config(config_id)?).map_err(err)?;
    let out = PyDict::new_bound(py);
    out.set_item("change_point", d.change_point)?;
    out.set_item("breakpoints", d.breakpoints)?;
    out.set_item("score", d.score)?;
    Ok(out)
}

fn timing(name: &str) -> PyResult<AlertTiming> {
    name.parse().map_err(err)
}

/// Replay a cycle in steps of `step` samples; returns the first alert as a dict, or `None`.
#[pyfunction]
#[pyo3(signature = (cycle, config_id, step = 7, alert_at = "window-end"))]
fn run_streaming<'py>(
    py: Python<'py>,
    cycle: &PyLifeCycle,
    config_id: &str,
    step: usize,
    alert_at: &str,
) -> PyResult<Option<Bound<'py, PyDict>>> {
    let alert = maintseg::run_streaming(&cycle.inner, &config(config_id)?, step, timing(alert_at)?).map_err(err)?;
    alert
        .map(|a| {
            let out = PyDict::new_bound(py);
            out.set_item("step_end_index", a.step_end_index)?;
            out.set_item("change_point_index", a.change_point_index)?;
            out.set_item("a", a.a)?;
            Ok(out)
        })
        .transpose()
}

fn record_dict<'py>(py: Python<'py>, r: &EvaluationRecord) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new_bound(py);
    out.set_item("atm_id", &r.atm_id)?;
    out.set_item("cycle_index", r.cycle_index)?;
    out.set_item("config_id", &r.config_id)?;
    out.set_item("verdict", r.verdict.as_str())?;
    out.set_item("a", r.alert.map(|a| a.a))?;
    out.set_item("n", r.n)?;
    out.set_item("e_score", r.e_score)?;
    Ok(out)
}

/// Evaluate every (cycle, configuration) pair in parallel.
///
/// Business parameters are in days; `step` is in samples. Returns one dict
/// per pair, sorted by ATM, cycle and configuration id.
#[pyfunction]
#[pyo3(signature = (cycles, config_ids, rd = 1.0, pp = 14.0, s = 0.2, step = 7, alert_at = "window-end", workers = 0))]
#[allow(clippy::too_many_arguments)]
fn sweep<'py>(
    py: Python<'py>,
    cycles: Vec<PyLifeCycle>,
    config_ids: Vec<String>,
    rd: f64,
    pp: f64,
    s: f64,
    step: usize,
    alert_at: &str,
    workers: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let configs = config_ids.iter().map(|id| config(id)).collect::<PyResult<Vec<_>>>()?;
    let cycles: Vec<LifeCycle> = cycles.into_iter().map(|c| c.inner).collect();
    let options = SweepOptions {
        params: BusinessParams::new(rd, pp, BusinessParams::default().ii, s).map_err(err)?,
        step,
        timing: timing(alert_at)?,
        workers,
    };
    let outcome = py
        .allow_threads(|| run_sweep(&cycles, &configs, &options, Vec::new(), &|_| {}))
        .map_err(err)?;
    if let Some(f) = outcome.failures.first() {
        return Err(PyValueError::new_err(format!(
            "{} pair(s) failed, first {}/{} {}: {}",
            outcome.failures.len(),
            f.atm_id,
            f.cycle_index,
            f.config_id,
            f.reason
        )));
    }
    outcome.records.iter().map(|r| record_dict(py, r)).collect()
}

/// Synthetic corpus with a planted change `change_offset_days` before each failure.
#[pyfunction]
#[pyo3(signature = (seed, n_cycles = 50, change_offset_days = Some(10.0)))]
fn synth_generate(seed: u64, n_cycles: usize, change_offset_days: Option<f64>) -> PyResult<Vec<PyLifeCycle>> {
    let spec = maintseg::synth::SynthSpec { n_cycles, change_offset_days, ..Default::default() };
    let cycles = maintseg::synth::generate(&spec, seed).map_err(err)?;
    Ok(cycles.into_iter().map(|inner| PyLifeCycle { inner }).collect())
}

#[pymodule]
#[pyo3(name = "maintseg")]
fn maintseg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", maintseg::VERSION)?;
    m.add_class::<PyLifeCycle>()?;
    m.add_function(wrap_pyfunction!(znormalize, m)?)?;
    m.add_function(wrap_pyfunction!(prefix_ends, m)?)?;
    m.add_function(wrap_pyfunction!(pelt, m)?)?;
    m.add_function(wrap_pyfunction!(binseg, m)?)?;
    m.add_function(wrap_pyfunction!(bottomup, m)?)?;
    m.add_function(wrap_pyfunction!(kcpd, m)?)?;
    m.add_function(wrap_pyfunction!(matrix_profile, m)?)?;
    m.add_function(wrap_pyfunction!(fluss_cac, m)?)?;
    m.add_function(wrap_pyfunction!(e_score, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(parse_config, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(run_streaming, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(synth_generate, m)?)?;
    Ok(())
}
