//! Python bindings: scenario files, the four harness commands, and a few
//! closed-form helpers.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use phaselink_core::config::{Grid, ScenarioConfig};
use phaselink_core::harness::{self, HarnessError};
use phaselink_core::optics::{self, AtmosphereParams, BeamParams};
use phaselink_core::protocol::{self, Basis};
use phaselink_core::rate::{self, DecoyObservables, MixRatio, SourceConfig};

create_exception!(phaselink, PhaselinkError, PyException, "Base class for phaselink errors.");
create_exception!(phaselink, ConfigError, PhaselinkError, "Malformed or inconsistent scenario.");
create_exception!(phaselink, RegimeError, PhaselinkError, "Link outside the weak-turbulence regime.");

fn to_py(e: HarnessError) -> PyErr {
    match e {
        HarnessError::Config(_) | HarnessError::Usage(_) => ConfigError::new_err(e.to_string()),
        e if e.is_regime_violation() => RegimeError::new_err(e.to_string()),
        e => PhaselinkError::new_err(e.to_string()),
    }
}

fn err<E: Into<HarnessError>>(e: E) -> PyErr {
    to_py(e.into())
}

/// A result table; every cell is the text written to CSV.
#[pyclass(name = "Table", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTable {
    #[pyo3(get)]
    name: String,
    #[pyo3(get)]
    header: Vec<String>,
    #[pyo3(get)]
    rows: Vec<Vec<String>>,
}

impl From<harness::Table> for PyTable {
    fn from(t: harness::Table) -> Self {
        Self {
            name: t.name,
            header: t.header,
            rows: t.rows,
        }
    }
}

#[pymethods]
impl PyTable {
    fn to_csv(&self) -> String {
        harness::Table {
            name: self.name.clone(),
            header: self.header.clone(),
            rows: self.rows.clone(),
        }
        .to_csv()
    }

    /// Cells of one column, by header name.
    fn column(&self, name: &str) -> PyResult<Vec<String>> {
        let i = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PyValueError::new_err(format!("no column {name:?}")))?;
        Ok(self.rows.iter().map(|r| r[i].clone()).collect())
    }

    fn __len__(&self) -> usize {
        self.rows.len()
    }

    fn __repr__(&self) -> String {
        format!("Table({:?}, {} rows)", self.name, self.rows.len())
    }
}

#[pyclass(name = "SessionReport", frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct PySessionReport {
    qber: f64,
    qber_se: f64,
    samples: u64,
    pulses: u64,
    frames: u64,
    frames_ok: u64,
    frames_lost: u64,
    frames_corrupt: u64,
    payload_mismatches: u64,
    q_mu_hat: f64,
    sim_time: f64,
    comm_rate: f64,
    key_gen_rate: f64,
    key_cons_rate: f64,
    p_rec_empirical: f64,
    p_rec_expected: f64,
    key_consumed: u64,
    key_recycled: u64,
    key_generated: u64,
    key_pool: u64,
    aborted: bool,
    abort_reason: Option<String>,
    table: PyTable,
}

impl PySessionReport {
    fn new(r: &protocol::SessionReport, t: harness::Table) -> Self {
        Self {
            qber: r.qber,
            qber_se: r.qber_se,
            samples: r.samples,
            pulses: r.pulses,
            frames: r.frames,
            frames_ok: r.frames_ok,
            frames_lost: r.frames_lost,
            frames_corrupt: r.frames_corrupt,
            payload_mismatches: r.payload_mismatches,
            q_mu_hat: r.q_mu_hat,
            sim_time: r.sim_time,
            comm_rate: r.comm_rate,
            key_gen_rate: r.key_gen_rate,
            key_cons_rate: r.key_cons_rate,
            p_rec_empirical: r.p_rec_empirical,
            p_rec_expected: r.p_rec_expected,
            key_consumed: r.ledger.consumed,
            key_recycled: r.ledger.recycled,
            key_generated: r.ledger.generated,
            key_pool: r.ledger.pool_bits,
            aborted: r.aborted,
            abort_reason: r.abort_reason.clone(),
            table: t.into(),
        }
    }
}

#[pymethods]
impl PySessionReport {
    fn __repr__(&self) -> String {
        format!(
            "SessionReport(frames_ok={}/{}, qber={:.5}, p_rec={:.6}, aborted={})",
            self.frames_ok,
            self.frames,
            self.qber,
            self.p_rec_empirical,
            if self.aborted { "True" } else { "False" }
        )
    }
}

/// A parsed scenario file.
#[pyclass(name = "Scenario", skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    cfg: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            cfg: ScenarioConfig::load(path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            cfg: ScenarioConfig::parse(text).map_err(err)?,
        })
    }

    #[getter]
    fn id(&self) -> String {
        self.cfg.id.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.cfg.seeds.master
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.cfg.seeds.master = seed;
    }

    #[getter]
    fn d_fs(&self) -> f64 {
        self.cfg.link.d_fs
    }

    #[setter]
    fn set_d_fs(&mut self, d: f64) {
        self.cfg.link.d_fs = d;
    }

    /// Total transmittance including detector efficiency.
    fn eta(&self) -> PyResult<f64> {
        let c = &self.cfg;
        optics::transmittance(&c.link, &c.atmosphere, &c.beam, c.detector.eta_b, c.detector.eta_d)
            .map(|b| b.eta_total)
            .map_err(err)
    }

    fn canonical(&self) -> String {
        self.cfg.to_canonical()
    }

    fn config_hash(&self) -> String {
        harness::config_hash(&self.cfg)
    }

    fn link_budget(&self) -> PyResult<PyTable> {
        harness::link_budget_table(&self.cfg).map(Into::into).map_err(to_py)
    }

    /// Key rate over `start:stop:step` metres; the scenario's sweep if omitted.
    #[pyo3(signature = (grid=None))]
    fn rate_sweep(&self, grid: Option<&str>) -> PyResult<PyTable> {
        let grid = grid
            .map(|g| g.parse::<Grid>().map_err(|e| ConfigError::new_err(format!("grid: {e}"))))
            .transpose()?;
        harness::rate_sweep_table(&self.cfg, grid).map(Into::into).map_err(to_py)
    }

    #[pyo3(signature = (pulses=None))]
    fn simulate(&self, py: Python<'_>, pulses: Option<u64>) -> PyResult<PyTable> {
        let n = pulses.unwrap_or(self.cfg.simulate_pulses);
        let cfg = self.cfg.clone();
        py.detach(move || harness::simulate_table(&cfg, n)).map(Into::into).map_err(to_py)
    }

    /// In-process session. An abort is reported through `aborted`, not raised.
    fn session(&self, py: Python<'_>) -> PyResult<PySessionReport> {
        let cfg = self.cfg.clone();
        match py.detach(move || harness::run_scenario_session(&cfg)) {
            Ok((r, t)) => Ok(PySessionReport::new(&r, t)),
            Err((HarnessError::Protocol(protocol::ProtocolError::Aborted { report, .. }), Some(t))) => {
                Ok(PySessionReport::new(&report, t))
            }
            Err((e, _)) => Err(to_py(e)),
        }
    }

    fn __repr__(&self) -> String {
        format!("Scenario({:?})", self.cfg.id)
    }
}

/// Distance at which the Rytov variance reaches one.
#[pyfunction]
#[pyo3(signature = (cn2, w0, gamma, wavelength, l0=0.001, alpha_fs=0.2))]
fn critical_distance(cn2: f64, w0: f64, gamma: f64, wavelength: f64, l0: f64, alpha_fs: f64) -> PyResult<f64> {
    let atm = AtmosphereParams { cn2, l0, alpha_fs };
    let beam = BeamParams { w0, gamma, wavelength };
    optics::critical_distance(&atm, &beam).map_err(err)
}

/// Fraction of consumed key bits returned to the pool at signal gain `q_mu`.
#[pyfunction]
fn recycling_fraction(q_mu: f64) -> f64 {
    rate::recycling_fraction(q_mu)
}

/// Vacuum + weak decoy estimate; returns `(q1, e1)`.
#[pyfunction]
fn decoy_estimate(q_mu: f64, e_mu: f64, q_nu: f64, e_nu: f64, y0: f64, mu: f64, nu: f64) -> PyResult<(f64, f64)> {
    let obs = DecoyObservables { q_mu, e_mu, q_nu, e_nu, y0 };
    // Only the intensities enter the estimate.
    let src = SourceConfig {
        mu,
        nu,
        vac: 0.0,
        mix_ratio: MixRatio::new(1, 1, 1),
        rep_rate: 1.0,
        q: 0.5,
        duty_cycle: 1.0,
    };
    let est = rate::decoy_estimate(&obs, &src).map_err(err)?;
    Ok((est.q1, est.e1))
}

/// Phase for a chip bit in basis "Z" or "X": `(quarter_turns, radians)`.
#[pyfunction]
fn encode_pulse(bit: u8, basis: &str) -> PyResult<(u8, f64)> {
    let basis = match basis {
        "Z" | "z" => Basis::Z,
        "X" | "x" => Basis::X,
        _ => return Err(PyValueError::new_err(format!("basis must be 'Z' or 'X', got {basis:?}"))),
    };
    if bit > 1 {
        return Err(PyValueError::new_err(format!("bit must be 0 or 1, got {bit}")));
    }
    let p = protocol::encode_pulse(bit, basis).phase;
    Ok((p.quarter_turns(), p.radians()))
}

#[pymodule]
fn phaselink(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("PhaselinkError", py.get_type::<PhaselinkError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("RegimeError", py.get_type::<RegimeError>())?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyTable>()?;
    m.add_class::<PySessionReport>()?;
    m.add_function(wrap_pyfunction!(critical_distance, m)?)?;
    m.add_function(wrap_pyfunction!(recycling_fraction, m)?)?;
    m.add_function(wrap_pyfunction!(decoy_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(encode_pulse, m)?)?;
    Ok(())
}
