//! Python bindings: detector parameters and clocks, single-detector event
//! streams, characterization, GHZ pattern analytics, the rate formula, the
//! gate-chain extraction and the scenario runner.

use std::collections::BTreeMap;
use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use swgsim::characterization::{self, CharacterizationSetup};
use swgsim::coincidence::{self, Eq1Params, PatternCounts};
use swgsim::config::{ExperimentConfig, Scenario};
use swgsim::detector::{self as det, table, Arrival, Cause, DetectorId};
use swgsim::gatechain::{self, GateChainParams};
use swgsim::polarization;
use swgsim::rng::StreamKey;
use swgsim::runner::{self, RunOptions};
use swgsim::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyRuntimeError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "GateClock", from_py_object)]
#[derive(Clone)]
struct PyGateClock(det::GateClock);

#[pymethods]
impl PyGateClock {
    #[new]
    #[pyo3(signature = (input_freq_hz, multiplier=1, delay_phase=0.0))]
    fn new(input_freq_hz: f64, multiplier: u32, delay_phase: f64) -> PyResult<Self> {
        let c = det::GateClock {
            input_freq_hz,
            multiplier,
            delay_phase,
        };
        c.validate().map_err(err)?;
        Ok(PyGateClock(c))
    }

    /// 76 MHz sync doubled to 152 MHz gates.
    #[staticmethod]
    fn swg() -> Self {
        PyGateClock(det::GateClock::swg())
    }

    #[staticmethod]
    fn spcm() -> Self {
        PyGateClock(det::GateClock::spcm())
    }

    #[getter]
    fn gate_freq_hz(&self) -> f64 {
        self.0.gate_freq_hz()
    }

    #[getter]
    fn multiplier(&self) -> u32 {
        self.0.multiplier
    }

    #[getter]
    fn delay_phase(&self) -> f64 {
        self.0.delay_phase
    }

    fn __repr__(&self) -> String {
        format!(
            "GateClock(input_freq_hz={}, multiplier={}, delay_phase={})",
            self.0.input_freq_hz, self.0.multiplier, self.0.delay_phase
        )
    }
}

#[pyclass(name = "DetectorParams", from_py_object)]
#[derive(Clone)]
struct PyDetectorParams(det::DetectorParams);

#[pymethods]
impl PyDetectorParams {
    #[new]
    #[pyo3(signature = (label, pde, dcr_cps=0.0, p_ap=0.0, ap_decay_gates=2.0, dead_gates=0))]
    fn new(label: String, pde: f64, dcr_cps: f64, p_ap: f64, ap_decay_gates: f64, dead_gates: u32) -> Self {
        PyDetectorParams(det::DetectorParams {
            label,
            pde,
            dcr_cps,
            p_ap,
            ap_decay_gates,
            dead_gates,
            jitter_sigma: None,
        })
    }

    /// A bundled table row: `kind` is "spcm" or "swg", `row` is 1..=6.
    #[staticmethod]
    fn from_table(kind: &str, row: usize) -> PyResult<(Self, PyGateClock)> {
        let k = table::DetectorKind::parse(kind).ok_or_else(|| PyValueError::new_err(format!("unknown kind {kind:?}")))?;
        let p = table::params(k, row).ok_or_else(|| PyValueError::new_err(format!("no table row {row}")))?;
        Ok((PyDetectorParams(p), PyGateClock(k.clock())))
    }

    #[getter]
    fn label(&self) -> String {
        self.0.label.clone()
    }

    #[getter]
    fn pde(&self) -> f64 {
        self.0.pde
    }

    #[getter]
    fn dcr_cps(&self) -> f64 {
        self.0.dcr_cps
    }

    #[getter]
    fn p_ap(&self) -> f64 {
        self.0.p_ap
    }

    #[getter]
    fn ap_decay_gates(&self) -> f64 {
        self.0.ap_decay_gates
    }

    #[getter]
    fn dead_gates(&self) -> u32 {
        self.0.dead_gates
    }

    fn dark_prob_per_gate(&self, clock: &PyGateClock) -> PyResult<f64> {
        det::dark_prob_per_gate(&self.0, &clock.0).map_err(err)
    }

    fn click_probability(&self, photons: u32, clock: &PyGateClock) -> PyResult<f64> {
        det::click_probability(photons, &self.0, &clock.0).map_err(err)
    }

    fn __repr__(&self) -> String {
        let p = &self.0;
        format!(
            "DetectorParams(label={:?}, pde={}, dcr_cps={}, p_ap={}, ap_decay_gates={}, dead_gates={})",
            p.label, p.pde, p.dcr_cps, p.p_ap, p.ap_decay_gates, p.dead_gates
        )
    }
}

/// Names of the twelve bundled parameter sets.
#[pyfunction]
fn detector_names() -> Vec<String> {
    table::named_sets().into_iter().map(|(_, p)| p.label).collect()
}

/// Waveplate Jones matrices as nested lists of complex numbers.
#[pyfunction]
fn hwp_matrix(theta: f64) -> Vec<Vec<Complex64>> {
    rows(&polarization::hwp_matrix(theta))
}

#[pyfunction]
fn qwp_matrix(theta: f64) -> Vec<Vec<Complex64>> {
    rows(&polarization::qwp_matrix(theta))
}

fn rows(m: &polarization::JonesMatrix) -> Vec<Vec<Complex64>> {
    (0..2).map(|r| (0..2).map(|c| m.get(r, c)).collect()).collect()
}

/// Runs one detector over `n_gates` gates. `arrivals` lists
/// `(gate, photons)` in increasing gate order. Returns `(gate, cause)`.
#[pyfunction]
#[pyo3(signature = (params, clock, arrivals, n_gates, seed))]
fn simulate_detector(
    params: &PyDetectorParams,
    clock: &PyGateClock,
    arrivals: Vec<(u64, u32)>,
    n_gates: u64,
    seed: u64,
) -> PyResult<Vec<(u64, &'static str)>> {
    let arrivals: Vec<Arrival> = arrivals.into_iter().map(|(gate, photons)| Arrival { gate, photons }).collect();
    let s = det::run_stream(DetectorId::new(1), &arrivals, &params.0, &clock.0, n_gates, StreamKey::root(seed))
        .map_err(err)?;
    Ok(s.events
        .iter()
        .map(|e| {
            let cause = match e.cause {
                Cause::Photon => "photon",
                Cause::Dark => "dark",
                Cause::Afterpulse => "afterpulse",
            };
            (e.gate, cause)
        })
        .collect())
}

/// Recovers PDE, DCR and afterpulse probability from simulated runs.
#[pyfunction]
#[pyo3(signature = (params, clock, seed, n_pulses=10_000_000, trigger_freq_hz=7.6e6, mean_photons=0.1, dark_run_gates=None))]
fn characterize<'py>(
    py: Python<'py>,
    params: &PyDetectorParams,
    clock: &PyGateClock,
    seed: u64,
    n_pulses: u64,
    trigger_freq_hz: f64,
    mean_photons: f64,
    dark_run_gates: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let setup = CharacterizationSetup {
        trigger_freq_hz,
        mean_photons,
        n_pulses,
        dark_run_gates,
    };
    let (p, c) = (params.0.clone(), clock.0);
    let r = py
        .detach(move || characterization::characterize(&p, &c, &setup, StreamKey::root(seed)))
        .map_err(err)?;
    let d = PyDict::new(py);
    for (k, e) in [("pde", r.pde), ("dcr_cps", r.dcr_cps), ("dcr_raw_cps", r.dcr_raw_cps), ("p_ap", r.p_ap)] {
        d.set_item(k, e.value)?;
        d.set_item(format!("{k}_se"), e.stderr)?;
    }
    d.set_item("p_ap_clipped", r.p_ap_clipped)?;
    d.set_item("max_z", r.max_z(&params.0))?;
    d.set_item("histogram", r.histogram.clicks)?;
    Ok(d)
}

/// Pattern probabilities of the fused GHZ state for a given coherence,
/// conditioned on photons 1 and 4 reading `+`.
#[pyfunction]
fn ghz_pattern_probabilities(coherence: f64) -> PyResult<BTreeMap<String, f64>> {
    let p = coincidence::analytic_pattern_probabilities(coherence).map_err(err)?;
    Ok(p.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}

/// Visibility and its standard error from pattern counts.
#[pyfunction]
fn visibility(counts: BTreeMap<String, u64>) -> PyResult<(f64, f64)> {
    let mut c = PatternCounts::new(0, 0.0);
    for (k, v) in counts {
        if !PatternCounts::PATTERNS.contains(&k.as_str()) {
            return Err(PyValueError::new_err(format!("unknown pattern {k:?}")));
        }
        c.counts.insert(k, v);
    }
    Ok((
        coincidence::visibility(&c).map_err(err)?,
        coincidence::visibility_stderr(&c).map_err(err)?,
    ))
}

/// `2n`-fold coincidence rate `f·μⁿ·η²ⁿ`.
#[pyfunction]
fn eq1_estimate(f: f64, mu: f64, n: u32, eta: f64) -> PyResult<f64> {
    let p = Eq1Params { f, mu, n, eta };
    p.validate().map_err(err)?;
    Ok(coincidence::eq1_estimate(&p))
}

/// Gate-chain extraction with default chain parameters.
#[pyfunction]
#[pyo3(signature = (n_gates=10_000, gates_per_avalanche=100, seed=1))]
fn run_extraction<'py>(py: Python<'py>, n_gates: u64, gates_per_avalanche: u64, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let r = py
        .detach(move || {
            gatechain::run_extraction(&GateChainParams::default(), n_gates, gates_per_avalanche, StreamKey::root(seed), false)
        })
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("injected", r.injected_s.len())?;
    d.set_item("matched", r.matched)?;
    d.set_item("missed", r.missed)?;
    d.set_item("false_clicks", r.false_clicks)?;
    d.set_item("rejection_db", r.rejection_db)?;
    d.set_item("filter_taps", r.filter_taps)?;
    Ok(d)
}

/// Runs a scenario from TOML text (defaults when empty). Returns the run
/// summary as a dict.
#[pyfunction]
#[pyo3(signature = (scenario, config="", seed=None, workers=None, out_dir=None, compare=None))]
fn run<'py>(
    py: Python<'py>,
    scenario: &str,
    config: &str,
    seed: Option<u64>,
    workers: Option<usize>,
    out_dir: Option<PathBuf>,
    compare: Option<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let scenario: Scenario = scenario.parse().map_err(err)?;
    let cfg = ExperimentConfig::from_toml(config).map_err(err)?;
    let opts = RunOptions {
        seed,
        out_dir,
        workers,
        compare,
    };
    let s = py.detach(move || runner::run(&cfg, scenario, &opts)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("scenario", s.scenario)?;
    d.set_item("config_hash", s.config_hash)?;
    d.set_item("seed", s.seed)?;
    d.set_item("workers", s.workers)?;
    d.set_item("elapsed_s", s.elapsed_s)?;
    d.set_item("metrics", s.metrics)?;
    d.set_item("artifacts", s.artifacts)?;
    d.set_item("notes", s.notes)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "swgsim")]
fn swgsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGateClock>()?;
    m.add_class::<PyDetectorParams>()?;
    m.add_function(wrap_pyfunction!(detector_names, m)?)?;
    m.add_function(wrap_pyfunction!(hwp_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(qwp_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_detector, m)?)?;
    m.add_function(wrap_pyfunction!(characterize, m)?)?;
    m.add_function(wrap_pyfunction!(ghz_pattern_probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(visibility, m)?)?;
    m.add_function(wrap_pyfunction!(eq1_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(run_extraction, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
