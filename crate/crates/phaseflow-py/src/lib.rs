//! Python bindings: configurations, grids, materials, runs, snapshots and
//! the verification helpers behind the command-line tool.
//!
//! Structured reports cross the boundary as plain Python objects decoded
//! from their JSON form, so they match the files written by the CLI.

use std::path::PathBuf;

use num_complex::Complex64;
use phaseflow::config::{load_config, parse_config_with, ResolvedConfig};
use phaseflow::constitutive::{MaterialSystem, Side};
use phaseflow::driver::{simulate as run_simulation, RunOutcome};
use phaseflow::error::Error;
use phaseflow::grid::{Grid as CoreGrid, GridSpec, StripField};
use phaseflow::heat::HeatParams;
use phaseflow::io::Snapshot as CoreSnapshot;
use phaseflow::manufactured::{observed_orders, run_two_layer, StokesManufactured};
use phaseflow::plots::emit_plots;
use phaseflow::rhs::{phase_flux_eliminated, traction_split as core_traction_split};
use phaseflow::selfcheck::invariant_suite as core_invariant_suite;
use phaseflow::state::State;
use phaseflow::stokes::{resolvent_sweep as core_resolvent_sweep, sector_lambdas, Sector, StokesParams};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(phaseflow_py, PhaseflowError, PyException, "Base class of every phaseflow error.");
create_exception!(phaseflow_py, ConfigError, PhaseflowError, "Invalid or unparsable configuration.");
create_exception!(phaseflow_py, ModelError, PhaseflowError, "Closure validation or model mismatch.");
create_exception!(phaseflow_py, CompatibilityError, PhaseflowError, "Initial data violate a compatibility condition.");
create_exception!(phaseflow_py, GateError, PhaseflowError, "Smallness gate, contraction or solver failure.");
create_exception!(phaseflow_py, FormatError, PhaseflowError, "Malformed file or shape mismatch.");

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::ConfigParse { .. } | Error::Config(_) => ConfigError::new_err(msg),
        Error::Model(_) => ModelError::new_err(msg),
        Error::Compatibility(_) => CompatibilityError::new_err(msg),
        Error::Gate(_) | Error::Contraction(_) | Error::Solver(_) => GateError::new_err(msg),
        Error::Format(_) | Error::Shape(_) => FormatError::new_err(msg),
        Error::Io(_) => PhaseflowError::new_err(msg),
    }
}

/// Serializes `value` and decodes it with the `json` module.
fn to_object<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| FormatError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_side(side: &str) -> PyResult<Side> {
    match side {
        "plus" | "+" => Ok(Side::Plus),
        "minus" | "-" => Ok(Side::Minus),
        other => Err(ConfigError::new_err(format!("side must be 'plus' or 'minus', got '{other}'"))),
    }
}

fn rows(field: &StripField, n_tan: usize) -> Vec<Vec<f64>> {
    field.data.chunks(n_tan).map(<[f64]>::to_vec).collect()
}

/// Resolved run configuration (defaults, file and `key=value` overrides).
#[pyclass(name = "Config", module = "phaseflow_py", skip_from_py_object)]
#[derive(Clone)]
struct Config {
    inner: ResolvedConfig,
}

#[pymethods]
impl Config {
    /// Parses TOML `text` and applies `overrides` such as `"grid.m_nrm=32"`.
    #[new]
    #[pyo3(signature = (text = "", overrides = Vec::new()))]
    fn new(text: &str, overrides: Vec<String>) -> PyResult<Self> {
        let inner = parse_config_with(text, &overrides).map_err(to_py)?;
        inner.config.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Reads a TOML file (or only defaults with `path=None`).
    #[staticmethod]
    #[pyo3(signature = (path = None, overrides = Vec::new()))]
    fn load(path: Option<PathBuf>, overrides: Vec<String>) -> PyResult<Self> {
        let inner = load_config(path.as_deref(), &overrides).map_err(to_py)?;
        inner.config.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.config.epsilon
    }

    #[getter]
    fn n_steps(&self) -> usize {
        self.inner.config.n_steps()
    }

    /// Keys set by the file or by overrides.
    fn user_keys(&self) -> Vec<String> {
        self.inner.user_keys().into_iter().map(String::from).collect()
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.config.to_toml_string().map_err(to_py)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_object(py, &self.inner.config)
    }

    fn grid(&self) -> PyResult<Grid> {
        Ok(Grid { inner: self.inner.config.build_grid().map_err(to_py)? })
    }

    fn material(&self) -> PyResult<Material> {
        Ok(Material { inner: self.inner.config.build_material().map_err(to_py)? })
    }

    fn __repr__(&self) -> String {
        let c = &self.inner.config;
        format!(
            "Config(epsilon={}, dimension={}, m_tan={}, m_nrm={}, dt={}, t_final={})",
            c.epsilon, c.grid.dimension, c.grid.m_tan, c.grid.m_nrm, c.grid.dt, c.grid.t_final
        )
    }
}

/// Node-centered grid on the two half-strips.
#[pyclass(name = "Grid", module = "phaseflow_py", skip_from_py_object)]
#[derive(Clone)]
struct Grid {
    inner: CoreGrid,
}

#[pymethods]
impl Grid {
    #[new]
    #[pyo3(signature = (m_tan = 64, m_nrm = 64, l_nrm = 8.0, dt = 1e-3, t_final = 0.1, dimension = 2, l_tan = None))]
    fn new(m_tan: usize, m_nrm: usize, l_nrm: f64, dt: f64, t_final: f64, dimension: usize, l_tan: Option<f64>) -> PyResult<Self> {
        let defaults = GridSpec::default();
        let spec = GridSpec { dimension, l_tan: l_tan.unwrap_or(defaults.l_tan), m_tan, l_nrm, m_nrm, dt, t_final };
        Ok(Self { inner: CoreGrid::new(&spec).map_err(to_py)? })
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dim
    }
    #[getter]
    fn m_tan(&self) -> usize {
        self.inner.m_tan
    }
    #[getter]
    fn m_nrm(&self) -> usize {
        self.inner.m_nrm
    }
    #[getter]
    fn n_tan(&self) -> usize {
        self.inner.n_tan
    }
    #[getter]
    fn dx_tan(&self) -> f64 {
        self.inner.dx_tan
    }
    #[getter]
    fn dx_nrm(&self) -> f64 {
        self.inner.dx_nrm
    }
    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    /// Signed normal coordinates of the rows of `side`.
    fn normal_coordinates(&self, side: &str) -> PyResult<Vec<f64>> {
        let s = parse_side(side)?;
        Ok((0..self.inner.n_rows).map(|j| self.inner.x_nrm(s, j)).collect())
    }

    /// First tangential coordinate of each interface point.
    fn tangential_coordinates(&self) -> Vec<f64> {
        (0..self.inner.n_tan).map(|i| self.inner.tan_coords(i)[0]).collect()
    }

    fn __repr__(&self) -> String {
        format!("Grid(dimension={}, m_tan={}, m_nrm={}, dx_nrm={})", self.inner.dim, self.inner.m_tan, self.inner.m_nrm, self.inner.dx_nrm)
    }
}

/// Two-phase material system with its closures.
#[pyclass(name = "Material", module = "phaseflow_py", skip_from_py_object)]
#[derive(Clone)]
struct Material {
    inner: MaterialSystem,
}

#[pymethods]
impl Material {
    /// Built-in material for `dimension` 2 or 3.
    #[staticmethod]
    #[pyo3(signature = (dimension = 2))]
    fn default(dimension: usize) -> Self {
        Self { inner: MaterialSystem::default_for(dimension) }
    }

    #[getter]
    fn rho_star_plus(&self) -> f64 {
        self.inner.rho_star_plus
    }

    #[getter]
    fn theta_star(&self) -> f64 {
        self.inner.theta_star
    }

    fn density_gap(&self) -> f64 {
        self.inner.density_gap()
    }

    /// Residual of the equilibrium condition between the reference states.
    fn equilibrium_residual(&self) -> f64 {
        self.inner.equilibrium_residual()
    }

    /// Closure checks on the default sampling box: `(name, passed, worst)`.
    fn validate(&self) -> PyResult<Vec<(String, bool, f64)>> {
        let report = self.inner.validate(&self.inner.default_box()).map_err(to_py)?;
        Ok(report.checks.iter().map(|c| (c.name.clone(), c.passed, c.worst)).collect())
    }
}

/// One stored level: the state, and the lower density and `dh/dt` when present.
#[pyclass(name = "Snapshot", module = "phaseflow_py")]
struct Snapshot {
    inner: CoreSnapshot,
}

impl Snapshot {
    fn n_tan(&self) -> usize {
        self.inner.m_tan.pow(self.inner.dim as u32 - 1)
    }

    fn state(&self) -> &State {
        &self.inner.state
    }
}

#[pymethods]
impl Snapshot {
    /// Reads a binary `.bps` snapshot.
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: CoreSnapshot::read_binary(&path).map_err(to_py)? })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_binary(&path).map_err(to_py)
    }

    #[getter]
    fn t(&self) -> f64 {
        self.state().t
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.inner.dim, self.inner.m_tan, self.inner.m_nrm)
    }

    #[getter]
    fn h(&self) -> Vec<f64> {
        self.state().h.data.clone()
    }

    /// Field by name as rows (row 0 is the interface): `rho_plus`, `theta_plus`,
    /// `theta_minus`, `pi_minus`, `rho_minus`, `u_plus_<i>`, `u_minus_<i>` (1-based).
    fn field(&self, name: &str) -> PyResult<Vec<Vec<f64>>> {
        let n = self.n_tan();
        let s = self.state();
        let component = |v: &[StripField], idx: &str| -> PyResult<Vec<Vec<f64>>> {
            let i: usize = idx.parse().map_err(|_| FormatError::new_err(format!("bad component in '{name}'")))?;
            v.get(i.wrapping_sub(1))
                .map(|f| rows(f, n))
                .ok_or_else(|| FormatError::new_err(format!("no component {i} in '{name}'")))
        };
        match name {
            "rho_plus" => Ok(rows(&s.rho_plus, n)),
            "theta_plus" => Ok(rows(&s.theta_plus, n)),
            "theta_minus" => Ok(rows(&s.theta_minus, n)),
            "pi_minus" => Ok(rows(&s.pi_minus, n)),
            "rho_minus" => {
                self.inner.rho_minus.as_ref().map(|f| rows(f, n)).ok_or_else(|| FormatError::new_err("snapshot has no rho_minus"))
            }
            _ => {
                if let Some(idx) = name.strip_prefix("u_plus_") {
                    component(&s.u_plus, idx)
                } else if let Some(idx) = name.strip_prefix("u_minus_") {
                    component(&s.u_minus, idx)
                } else {
                    Err(FormatError::new_err(format!("unknown field '{name}'")))
                }
            }
        }
    }
}

/// Outcome of [`simulate`]: summary, termination and per-step iteration counts.
#[pyclass(name = "RunResult", module = "phaseflow_py")]
struct RunResult {
    outcome: RunOutcome,
    grid: GridSpec,
}

#[pymethods]
impl RunResult {
    #[getter]
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_object(py, &self.outcome.summary)
    }

    #[getter]
    fn termination<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_object(py, &self.outcome.termination)
    }

    #[getter]
    fn completed(&self) -> bool {
        self.outcome.termination.exit_code == 0
    }

    #[getter]
    fn exit_code(&self) -> i32 {
        self.outcome.termination.exit_code
    }

    /// Picard iterations of each attempted step.
    fn iterations(&self) -> Vec<usize> {
        self.outcome.traces.iter().map(|t| t.iterations()).collect()
    }

    /// Contraction ratios of each step from the second iteration on.
    fn ratios(&self) -> Vec<Vec<f64>> {
        self.outcome.traces.iter().map(|t| t.records.iter().filter_map(|r| r.ratio).collect()).collect()
    }

    /// Diagnostics rows as a list of dicts (column name to value).
    fn diagnostics<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyAny>>> {
        self.outcome.diagnostics.iter().map(|d| to_object(py, d)).collect()
    }

    /// Last retained level as a snapshot.
    fn final_snapshot(&self) -> PyResult<Snapshot> {
        let level = self.outcome.levels.last().ok_or_else(|| PhaseflowError::new_err("run retained no level"))?;
        let grid = CoreGrid::new(&self.grid).map_err(to_py)?;
        Ok(Snapshot { inner: CoreSnapshot::new(&grid, &level.state, Some(&level.rho.minus), Some(&level.dhdt)) })
    }
}

/// Runs `config` to its final time, writing the run directory when `out` is given.
/// Gate and contraction failures end the run with a termination record instead of raising.
#[pyfunction]
#[pyo3(signature = (config, out = None))]
fn simulate(py: Python<'_>, config: &Config, out: Option<PathBuf>) -> PyResult<RunResult> {
    let resolved = config.inner.clone();
    let outcome = py.detach(|| run_simulation(&resolved, out.as_deref())).map_err(to_py)?;
    Ok(RunResult { outcome, grid: config.inner.config.grid.clone() })
}

/// Deterministic invariant suite for `material` as a list of dicts.
#[pyfunction]
#[pyo3(signature = (material = None))]
fn invariant_suite<'py>(py: Python<'py>, material: Option<&Material>) -> PyResult<Bound<'py, PyAny>> {
    let m = material.map_or_else(|| MaterialSystem::default_for(2), |m| m.inner.clone());
    let config = Config::new("", Vec::new())?;
    let checks = py.detach(|| core_invariant_suite(&m, config.inner.config.rhs_options())).map_err(to_py)?;
    to_object(py, &checks)
}

/// Manufactured Stokes errors at the given normal resolutions and the observed
/// orders between consecutive levels.
#[pyfunction]
#[pyo3(signature = (levels = vec![32, 64, 128], l_nrm = 4.0, lambda_re = 2.0, lambda_im = 0.5))]
fn stokes_manufactured<'py>(py: Python<'py>, levels: Vec<usize>, l_nrm: f64, lambda_re: f64, lambda_im: f64) -> PyResult<Bound<'py, PyAny>> {
    let p = StokesParams::from_material(&MaterialSystem::default_for(2));
    let ms = StokesManufactured::new(l_nrm, 1.0, Complex64::new(lambda_re, lambda_im));
    let errors = levels.iter().map(|&m| ms.errors(&p, m)).collect::<Result<Vec<_>, _>>().map_err(to_py)?;
    let orders = observed_orders(&errors);
    to_object(py, &serde_json::json!({ "errors": errors, "orders": orders }))
}

/// Two-layer heat mode on `grid` integrated to `t_final`.
#[pyfunction]
fn heat_two_layer<'py>(py: Python<'py>, grid: &Grid, t_final: f64) -> PyResult<Bound<'py, PyAny>> {
    let hp = HeatParams::from_material(&MaterialSystem::default_for(grid.inner.dim));
    let run = run_two_layer(&grid.inner, hp, t_final).map_err(to_py)?;
    to_object(py, &run)
}

/// Largest condition number and residual of the Stokes mode blocks over the
/// sector `|lambda| >= lambda0`, `|arg lambda| <= pi - epsilon`.
#[pyfunction]
#[pyo3(signature = (grid, lambda0 = 1.0, epsilon = 0.1, n_radii = 7, n_angles = 9))]
fn resolvent_sweep(grid: &Grid, lambda0: f64, epsilon: f64, n_radii: usize, n_angles: usize) -> PyResult<(f64, f64)> {
    let p = StokesParams::from_material(&MaterialSystem::default_for(grid.inner.dim));
    let lambdas = sector_lambdas(Sector { epsilon, lambda0 }, n_radii, n_angles);
    let rows = core_resolvent_sweep(&grid.inner, p, &lambdas).map_err(to_py)?;
    let cond = rows.iter().map(|r| r.condition).fold(0.0, f64::max);
    let res = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
    Ok((cond, res))
}

/// Splits the normal traction jump into the two one-sided tractions.
#[pyfunction]
fn traction_split(rho_minus: f64, rho_plus: f64, sigma: f64, g_n: f64, g_n1: f64, laplacian_h: f64) -> (f64, f64) {
    core_traction_split(rho_minus, rho_plus, sigma, g_n, g_n1, laplacian_h)
}

/// Phase flux from the normal velocity components and the area factor.
#[pyfunction]
fn phase_flux(u_minus_n: f64, u_plus_n: f64, area: f64, inverse_density_jump: f64) -> f64 {
    phase_flux_eliminated(u_minus_n, u_plus_n, area, inverse_density_jump)
}

/// Writes the SVG plots for a run or diagnose directory and returns their paths.
#[pyfunction]
fn plot(dir: PathBuf) -> PyResult<Vec<PathBuf>> {
    emit_plots(&dir).map_err(to_py)
}

#[pymodule]
fn phaseflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add_class::<Config>()?;
    m.add_class::<Grid>()?;
    m.add_class::<Material>()?;
    m.add_class::<Snapshot>()?;
    m.add_class::<RunResult>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(invariant_suite, m)?)?;
    m.add_function(wrap_pyfunction!(stokes_manufactured, m)?)?;
    m.add_function(wrap_pyfunction!(heat_two_layer, m)?)?;
    m.add_function(wrap_pyfunction!(resolvent_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(traction_split, m)?)?;
    m.add_function(wrap_pyfunction!(phase_flux, m)?)?;
    m.add_function(wrap_pyfunction!(plot, m)?)?;
    m.add("PhaseflowError", py.get_type::<PhaseflowError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("ModelError", py.get_type::<ModelError>())?;
    m.add("CompatibilityError", py.get_type::<CompatibilityError>())?;
    m.add("GateError", py.get_type::<GateError>())?;
    m.add("FormatError", py.get_type::<FormatError>())?;
    Ok(())
}
