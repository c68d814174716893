//! Run configuration: a TOML document with one table per concern.
//!
//! Every key has a default, so an empty file is a valid configuration (a
//! two-dimensional run from the rest state). Unknown keys are rejected.
//! Overrides of the form `section.key=value` are applied on top of the file
//! before deserialization, and the origin of every resolved leaf key is
//! recorded as either `default` or `user`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::constitutive::{MaterialSpec, MaterialSystem};
use crate::error::{Error, Result};
use crate::expr::CompiledExpr;
use crate::geometry::CurvatureForm;
use crate::grid::{Grid, GridSpec};
use crate::rhs::{HeatSource, InterfaceForm, JDenominator, RhsOptions, DEFAULT_DELTA_J};
use crate::transport::DEFAULT_EPS1;

/// Family of initial data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    /// Rest state; `epsilon` is ignored.
    Equilibrium,
    /// `h_0 = epsilon cos(2 pi mode x_1 / L)` with matched upper velocity.
    #[default]
    CompatibleBump,
    /// Perturbations given as expressions, scaled by `epsilon`.
    Expressions,
    /// A snapshot written by a previous run.
    File,
}

/// What to do when the initial data violate a compatibility condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompatPolicy {
    Reject,
    Warn,
}

/// Perturbation expressions in the physical coordinates `x1`, `x2` (3D only)
/// and `y` (normal). The interface height depends on `x1` (and `x2`) only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialExpressions {
    pub h: String,
    pub rho_plus: String,
    pub u_plus: Vec<String>,
    pub u_minus: Vec<String>,
    pub theta_plus: String,
    pub theta_minus: String,
    pub pi_minus: String,
}

impl Default for InitialExpressions {
    fn default() -> Self {
        let zero = || "0".to_string();
        Self {
            h: zero(),
            rho_plus: zero(),
            u_plus: vec![zero(), zero()],
            u_minus: vec![zero(), zero()],
            theta_plus: zero(),
            theta_minus: zero(),
            pi_minus: zero(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSpec {
    pub kind: InitialKind,
    /// Tangential wave number of the compatible bump.
    pub mode: u32,
    pub expressions: InitialExpressions,
    /// Snapshot path for `kind = "file"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    /// Defaults to `reject` for the analytically compatible families and `warn` otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compat_policy: Option<CompatPolicy>,
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self {
            kind: InitialKind::default(),
            mode: 1,
            expressions: InitialExpressions::default(),
            file: None,
            compat_policy: None,
        }
    }
}

impl InitialSpec {
    pub fn effective_policy(&self) -> CompatPolicy {
        self.compat_policy.unwrap_or(match self.kind {
            InitialKind::Equilibrium | InitialKind::CompatibleBump => CompatPolicy::Reject,
            InitialKind::Expressions | InitialKind::File => CompatPolicy::Warn,
        })
    }
}

/// Nonlinear iteration strategy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedPointMode {
    /// Picard iteration inside every time step.
    #[default]
    PerStep,
    /// Picard iteration on whole trajectories over `[0, t_final]`.
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    /// Relative successive-change tolerance of the Picard loop.
    pub tol_fp: f64,
    pub max_iter: usize,
    /// Consecutive non-contracting iterations that abort the step.
    pub divergence_window: usize,
    pub tol_compat: f64,
    pub delta_j: f64,
    pub eps1: f64,
    /// Runge-Kutta substeps per time step along characteristics.
    pub transport_substeps: usize,
    pub fixed_point: FixedPointMode,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            tol_fp: 1e-10,
            max_iter: 50,
            divergence_window: 3,
            tol_compat: 1e-8,
            delta_j: DEFAULT_DELTA_J,
            eps1: DEFAULT_EPS1,
            transport_substeps: 2,
            fixed_point: FixedPointMode::default(),
        }
    }
}

/// Model variants of the right-hand side.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Switches {
    pub curvature: CurvatureForm,
    pub interface_form: InterfaceForm,
    pub j_denominator: JDenominator,
    pub heat_source: HeatSource,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotFormat {
    #[default]
    Binary,
    Csv,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    /// Steps between snapshots; the first and last levels are always written.
    pub snapshot_every: usize,
    /// Steps between diagnostics rows.
    pub diagnostics_every: usize,
    pub snapshot_format: SnapshotFormat,
    /// Also write the per-term right-hand side of the last step.
    pub write_rhs: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { snapshot_every: 10, diagnostics_every: 1, snapshot_format: SnapshotFormat::default(), write_rhs: false }
    }
}

/// Fully resolved run configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Amplitude of the initial perturbation.
    pub epsilon: f64,
    pub grid: GridSpec,
    pub material: MaterialSpec,
    pub initial: InitialSpec,
    pub solver: SolverSpec,
    pub switches: Switches,
    pub output: OutputSpec,
}

/// Where a resolved key came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Default,
    User,
}

/// A configuration together with the origin of each leaf key.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedConfig {
    pub config: RunConfig,
    pub provenance: BTreeMap<String, Origin>,
}

impl ResolvedConfig {
    /// Keys set by the user, in sorted order.
    pub fn user_keys(&self) -> Vec<&str> {
        self.provenance.iter().filter(|(_, o)| **o == Origin::User).map(|(k, _)| k.as_str()).collect()
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.chars().rev().take_while(|c| *c != '\n').count() + 1;
    (line, column)
}

fn parse_table(text: &str) -> Result<Table> {
    text.parse::<Table>().map_err(|e| {
        let (line, column) = e.span().map(|s| line_column(text, s.start)).unwrap_or((0, 0));
        Error::ConfigParse { line, column, message: e.message().to_string() }
    })
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_override_value(raw: &str) -> Value {
    let raw = raw.trim();
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Applies `section.key=value` to a TOML tree.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').map(str::trim).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let mut node = table;
    for part in &path[..path.len() - 1] {
        let entry = node.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    node.insert(path[path.len() - 1].to_string(), parse_override_value(value));
    Ok(())
}

fn leaf_paths(prefix: &str, value: &Value, out: &mut Vec<String>) {
    match value {
        Value::Table(t) if !t.is_empty() => {
            for (k, v) in t {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaf_paths(&p, v, out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

fn covered_by(path: &str, user: &[String]) -> bool {
    user.iter().any(|u| path == u || path.starts_with(&format!("{u}.")) || u.starts_with(&format!("{path}.")))
}

/// Parses configuration text and applies overrides.
pub fn parse_config_with(text: &str, overrides: &[String]) -> Result<ResolvedConfig> {
    let mut table = parse_table(text)?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut user = Vec::new();
    leaf_paths("", &Value::Table(table.clone()), &mut user);
    user.retain(|p| !p.is_empty());
    let config: RunConfig = Value::Table(table).try_into().map_err(|e: toml::de::Error| {
        Error::Config(e.message().to_string())
    })?;
    config.validate()?;
    let resolved = Value::try_from(&config).map_err(|e| Error::Config(e.to_string()))?;
    let mut all = Vec::new();
    leaf_paths("", &resolved, &mut all);
    let provenance = all
        .into_iter()
        .map(|p| {
            let origin = if covered_by(&p, &user) { Origin::User } else { Origin::Default };
            (p, origin)
        })
        .collect();
    Ok(ResolvedConfig { config, provenance })
}

pub fn parse_config(text: &str) -> Result<ResolvedConfig> {
    parse_config_with(text, &[])
}

/// Reads a configuration file; a missing path means "all defaults".
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ResolvedConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    parse_config_with(&text, overrides)
}

impl RunConfig {
    /// Resolved configuration as TOML text; parsing it gives back `self`.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn rhs_options(&self) -> RhsOptions {
        RhsOptions {
            curvature: self.switches.curvature,
            interface_form: self.switches.interface_form,
            j_denominator: self.switches.j_denominator,
            heat_source: self.switches.heat_source,
            delta_j: self.solver.delta_j,
        }
    }

    pub fn build_grid(&self) -> Result<Grid> {
        Grid::new(&self.grid)
    }

    pub fn build_material(&self) -> Result<MaterialSystem> {
        MaterialSystem::from_spec(&self.material, self.grid.dimension)
    }

    /// Number of time steps needed to reach `t_final`.
    pub fn n_steps(&self) -> usize {
        (self.grid.t_final / self.grid.dt - 1e-9).ceil().max(0.0) as usize
    }

    /// Sign, range and consistency checks that do not need the solvers.
    pub fn validate(&self) -> Result<()> {
        let s = &self.solver;
        for (name, v) in [
            ("solver.tol_fp", s.tol_fp),
            ("solver.tol_compat", s.tol_compat),
            ("solver.delta_j", s.delta_j),
            ("solver.eps1", s.eps1),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("solver.max_iter", s.max_iter),
            ("solver.divergence_window", s.divergence_window),
            ("solver.transport_substeps", s.transport_substeps),
            ("output.snapshot_every", self.output.snapshot_every),
            ("output.diagnostics_every", self.output.diagnostics_every),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        if self.initial.mode == 0 {
            return Err(Error::Config("initial.mode must be at least 1".into()));
        }
        let grid = self.build_grid()?;
        self.build_material()?;
        if self.initial.kind == InitialKind::Expressions {
            let e = &self.initial.expressions;
            if e.u_plus.len() != grid.dim || e.u_minus.len() != grid.dim {
                return Err(Error::Config(format!("initial velocity expressions need {} components", grid.dim)));
            }
            let line_vars: &[&str] = if grid.dim == 2 { &["x1"] } else { &["x1", "x2"] };
            let vars: &[&str] = if grid.dim == 2 { &["x1", "y"] } else { &["x1", "x2", "y"] };
            CompiledExpr::new(&e.h, line_vars)?;
            for src in [&e.rho_plus, &e.theta_plus, &e.theta_minus, &e.pi_minus].into_iter().chain(&e.u_plus).chain(&e.u_minus) {
                CompiledExpr::new(src, vars)?;
            }
        }
        if self.initial.kind == InitialKind::File && self.initial.file.is_none() {
            return Err(Error::Config("initial.kind = \"file\" needs initial.file".into()));
        }
        Ok(())
    }
}
