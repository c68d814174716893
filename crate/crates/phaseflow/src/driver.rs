//! Nonlinear time stepping: Picard iteration of the two linear interface
//! problems with the nonlinear remainder evaluated at the previous iterate.
//!
//! One Picard map takes an iterate `X` to
//!
//! 1. `d_t h` from the kinematic row at `X`, then the extended geometry;
//! 2. the density at the new time level, transported along the extended
//!    upper velocity that is linear in time between the committed level and `X`;
//! 3. the right-hand side at `X` (with the new density) and backward rates;
//! 4. one implicit Euler step of the Stokes problem and of the heat problem.
//!
//! The committed level is only replaced once the iteration has converged and
//! every gate has passed.
//!
//! Each step starts from the linear extrapolation of the last two committed
//! levels (the pressure is carried, not extrapolated). Convergence compares
//! the largest per-field L2 increment with the deviation from rest; the
//! contraction ratio is measured in [`weighted_change`], where the evolving
//! fields enter through their difference quotients.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;

use crate::config::{
    CompatPolicy, FixedPointMode, InitialKind, ResolvedConfig, RunConfig, SnapshotFormat,
};
use crate::constitutive::{MaterialSystem, Side};
use crate::diagnostics::{conservation_budgets, DiagnosticsReport, Totals};
use crate::error::{Error, Result};
use crate::expr::CompiledExpr;
use crate::geometry::ExtendedHeight;
use crate::grid::{Grid, LineField, StripField};
use crate::heat::{HeatParams, HeatSolver};
use crate::io::{write_json, Snapshot};
use crate::rhs::{traction_split, CompatibilityReport, RhsAssembler, RhsBundle, RhsOptions};
use crate::state::{FieldNorms, Rates, State};
use crate::stokes::{StokesParams, StokesSolver, StokesState};
use crate::transport::{
    density_step, lions_extend, BiField, SampledVelocity, TransportGate, TransportLevel,
};

/// Absolute floor of the convergence test, for states at machine zero.
pub const CHANGE_FLOOR: f64 = 1e-14;

/// Composite increment with the evolving fields measured by their time
/// difference quotient and the pressure by itself: `max(|d rho|, |d u|,
/// |d theta|, |d h|) / dt` against `|d pi|`.
pub fn weighted_change(change: &FieldNorms, dt: f64) -> f64 {
    let evolving = [change.rho_plus, change.u_plus, change.u_minus, change.theta_plus, change.theta_minus, change.h]
        .into_iter()
        .fold(0.0, f64::max);
    (evolving / dt).max(change.pi_minus)
}

/// A committed time level with everything the next step needs.
#[derive(Clone, Debug)]
pub struct Level {
    pub state: State,
    /// Transported density on both strips (`state.rho_plus == rho.plus`).
    pub rho: BiField,
    /// Transport velocity sampled at this level.
    pub transport: TransportLevel,
    /// Interface velocity from the kinematic row at this level.
    pub dhdt: LineField,
    /// Starting iterate of the next step: the linear extrapolation through
    /// this level and the one before it, when there is one.
    pub predictor: Option<State>,
}

/// One Picard iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Largest per-field L2 change.
    pub change: f64,
    /// `change / max deviation of the new iterate`.
    pub relative_change: f64,
    /// Change in the time-weighted norm of [`weighted_change`].
    pub weighted_change: f64,
    /// `weighted_change / previous weighted_change`, from the second iteration on.
    pub ratio: Option<f64>,
    pub field_change: FieldNorms,
    /// `min (1 + H_N)` of the geometry used in this iteration.
    pub transform_gate: f64,
    pub flow_jacobian_min: f64,
    pub stokes_residual: f64,
    pub heat_residual: f64,
    pub rhs_max: f64,
}

/// Record of the Picard loop of one time step.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct IterationTrace {
    pub step: usize,
    pub t: f64,
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

impl IterationTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// Largest contraction ratio at iteration index `>= from` (1-based).
    pub fn max_ratio_from(&self, from: usize) -> f64 {
        self.records
            .iter()
            .filter(|r| r.iteration >= from)
            .filter_map(|r| r.ratio)
            .fold(0.0, f64::max)
    }
}

/// A failed step together with the iterations that led to it.
#[derive(Debug)]
pub struct StepFailure {
    pub error: Error,
    pub trace: IterationTrace,
}

impl From<StepFailure> for Error {
    fn from(f: StepFailure) -> Self {
        f.error
    }
}

/// Result of a successful step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub level: Level,
    pub gate: TransportGate,
    pub trace: IterationTrace,
    /// Right-hand side of the last Picard map.
    pub rhs: RhsBundle,
}

/// Initial level with its compatibility check.
#[derive(Clone, Debug)]
pub struct Initialized {
    pub level: Level,
    pub compatibility: CompatibilityReport,
    pub warnings: Vec<String>,
}

struct MapOutput {
    state: State,
    rho: BiField,
    gradient_sup: f64,
    flow_jacobian_min: f64,
    transform_gate: f64,
    stokes_residual: f64,
    heat_residual: f64,
    rhs: RhsBundle,
}

/// Solvers and data shared by every step of a run.
pub struct Driver {
    pub grid: Grid,
    pub material: MaterialSystem,
    pub config: RunConfig,
    pub options: RhsOptions,
    stokes: StokesSolver,
    heat: HeatSolver,
}

impl std::fmt::Debug for Driver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Driver").field("grid", &self.grid).field("options", &self.options).finish()
    }
}

impl Driver {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.build_grid()?;
        let material = config.build_material()?;
        let lambda = Complex64::new(1.0 / grid.dt, 0.0);
        let stokes = StokesSolver::new(&grid, StokesParams::from_material(&material), lambda)?;
        let heat = HeatSolver::new(&grid, HeatParams::from_material(&material), lambda)?;
        Ok(Self { grid, material, config: config.clone(), options: config.rhs_options(), stokes, heat })
    }

    fn assembler(&self) -> RhsAssembler<'_> {
        RhsAssembler::new(&self.grid, &self.material, self.options)
    }

    /// `d_t h` from the kinematic row at `state`: the linear part plus `G_h`.
    pub fn kinematic_rate(&self, state: &State) -> Result<LineField> {
        let g = &self.grid;
        let m = &self.material;
        let geometry = ExtendedHeight::new(g, &state.h, None)?;
        let interface = self.assembler().assemble_interface_rhs(state, &geometry)?;
        let n = g.dim;
        let (rm, rp) = (m.rho_star_minus, m.rho_star_plus);
        let um = g.trace(&state.u_minus[n - 1]);
        let up = g.trace(&state.u_plus[n - 1]);
        let linear = um.zip_map(&up, |a, b| (rm * a - rp * b) / (rm - rp));
        Ok(&linear + &interface.g_h)
    }

    /// Geometry of `state` with the kinematic interface velocity.
    pub fn geometry(&self, state: &State) -> Result<(ExtendedHeight, LineField)> {
        let dhdt = self.kinematic_rate(state)?;
        let geometry = ExtendedHeight::new(&self.grid, &state.h, Some(&dhdt))?;
        geometry.transform_gate()?;
        Ok((geometry, dhdt))
    }

    /// Completes a state to a level whose density extension is `rho`.
    pub fn level_from(&self, state: State, rho: BiField) -> Result<Level> {
        let (geometry, dhdt) = self.geometry(&state)?;
        let transport = TransportLevel::from_upper_velocity(&self.grid, &state.u_plus, &geometry);
        Ok(Level { state, rho, transport, dhdt, predictor: None })
    }

    /// Builds the initial level and checks the compatibility conditions.
    pub fn initialize(&self) -> Result<Initialized> {
        let cfg = &self.config;
        let (state, rho_minus) = match cfg.initial.kind {
            InitialKind::Equilibrium => (State::equilibrium(&self.grid, &self.material), None),
            InitialKind::CompatibleBump => (self.compatible_bump(cfg.epsilon, cfg.initial.mode)?, None),
            InitialKind::Expressions => (self.expression_state()?, None),
            InitialKind::File => {
                let path = cfg.initial.file.as_deref().ok_or_else(|| Error::Config("initial.file missing".into()))?;
                let snap = Snapshot::read_binary(Path::new(path))?;
                snap.check_grid(&self.grid)?;
                (snap.state, snap.rho_minus)
            }
        };
        state.validate(&self.grid)?;
        ExtendedHeight::new(&self.grid, &state.h, None)?.transform_gate()?;
        let compatibility = self.assembler().compatibility_residual(&state)?;
        let mut warnings = Vec::new();
        if let Some(bad) = compatibility.worst_violation(cfg.solver.tol_compat) {
            let msg = format!(
                "condition `{}` violated: sup residual {:.3e} > tol_compat {:.1e}",
                bad.name, bad.sup, cfg.solver.tol_compat
            );
            match cfg.initial.effective_policy() {
                CompatPolicy::Reject => return Err(Error::Compatibility(msg)),
                CompatPolicy::Warn => warnings.push(msg),
            }
        }
        let mut rho = lions_extend(&self.grid, &state.rho_plus);
        if let Some(r) = rho_minus {
            rho.minus = r;
        }
        let level = self.level_from(state, rho)?;
        Ok(Initialized { level, compatibility, warnings })
    }

    /// The compatible bump: `h_0 = eps cos(2 pi k x_1 / L)`, rest state below,
    /// reference density and temperature, and an upper velocity
    /// `(b phi, a phi)` whose interface strains match the stress conditions.
    ///
    /// `phi(z) = z exp(-z^2/2)` scaled so that its discrete normal derivative
    /// at the interface is 1; `phi(0) = 0` keeps the slip and the phase flux zero.
    pub fn compatible_bump(&self, epsilon: f64, mode: u32) -> Result<State> {
        let g = &self.grid;
        let m = &self.material;
        let n = g.dim;
        let mut state = State::equilibrium(g, m);
        if epsilon == 0.0 {
            return Ok(state);
        }
        let k = 2.0 * std::f64::consts::PI * f64::from(mode) / g.l_tan;
        state.h = g.sample_line(|x| epsilon * (k * x[0]).cos());
        let raw = g.sample(Side::Plus, |_, z| z * (-0.5 * z * z).exp());
        let slope = g.trace(&g.d_nrm(&raw)).data[0];
        let phi = raw.scale(1.0 / slope);
        let lap = g.line_laplacian(&state.h);
        let s = &m.starred;
        let mut amplitudes: Vec<LineField> = vec![g.line_zeros(); n];
        for _ in 0..100 {
            for (c, a) in state.u_plus.iter_mut().zip(&amplitudes) {
                *c = &g.broadcast(Side::Plus, a) * &phi;
            }
            let geometry = ExtendedHeight::new(g, &state.h, None)?;
            let ig = self.assembler().assemble_interface_rhs(&state, &geometry)?;
            let mut next: Vec<LineField> = ig.g_tangential.iter().map(|gi| gi.scale(-2.0 / s.mu_plus)).collect();
            next.push(LineField {
                data: (0..g.n_tan)
                    .map(|p| {
                        let (t_plus, _) = traction_split(
                            m.rho_star_minus,
                            m.rho_star_plus,
                            m.sigma,
                            ig.g_n.data[p],
                            ig.g_n1.data[p],
                            lap.data[p],
                        );
                        t_plus / s.lambda_plus
                    })
                    .collect(),
            });
            let change = next.iter().zip(&amplitudes).map(|(a, b)| (a - b).max_abs()).fold(0.0, f64::max);
            let scale = next.iter().map(LineField::max_abs).fold(0.0, f64::max);
            amplitudes = next;
            if change <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        for (c, a) in state.u_plus.iter_mut().zip(&amplitudes) {
            *c = &g.broadcast(Side::Plus, a) * &phi;
        }
        Ok(state)
    }

    /// Perturbations given by expressions in physical coordinates, composed
    /// with the extended initial height: `u(x', x_N) = U(x', x_N + H_0(x))`.
    pub fn expression_state(&self) -> Result<State> {
        let g = &self.grid;
        let m = &self.material;
        let e = &self.config.initial.expressions;
        let eps = self.config.epsilon;
        let n = g.dim;
        let line_vars: &[&str] = if n == 2 { &["x1"] } else { &["x1", "x2"] };
        let vars: &[&str] = if n == 2 { &["x1", "y"] } else { &["x1", "x2", "y"] };
        let hx = CompiledExpr::new(&e.h, line_vars)?;
        let h = g.sample_line(|x| eps * hx.eval(&x[..n - 1]));
        let geometry = ExtendedHeight::new(g, &h, None)?;
        let compose = |src: &str, side: Side, base: f64| -> Result<StripField> {
            let ex = CompiledExpr::new(src, vars)?;
            let shift = &geometry.side(side).h;
            let mut f = g.zeros(side);
            for j in 0..g.n_rows {
                for i in 0..g.n_tan {
                    let p = j * g.n_tan + i;
                    let x = g.tan_coords(i);
                    let y = g.x_nrm(side, j) + shift.data[p];
                    let args: Vec<f64> = x[..n - 1].iter().copied().chain([y]).collect();
                    f.data[p] = base + eps * ex.eval(&args);
                }
            }
            Ok(f)
        };
        Ok(State {
            rho_plus: compose(&e.rho_plus, Side::Plus, m.rho_star_plus)?,
            u_plus: e.u_plus.iter().map(|s| compose(s, Side::Plus, 0.0)).collect::<Result<_>>()?,
            u_minus: e.u_minus.iter().map(|s| compose(s, Side::Minus, 0.0)).collect::<Result<_>>()?,
            theta_plus: compose(&e.theta_plus, Side::Plus, m.theta_star)?,
            theta_minus: compose(&e.theta_minus, Side::Minus, m.theta_star)?,
            pi_minus: compose(&e.pi_minus, Side::Minus, 0.0)?,
            h,
            t: 0.0,
        })
    }

    /// One Picard map. Nonlinear terms and the density use `base` and
    /// `iterate`; the implicit Euler steps start from `linear_base`.
    fn picard_map(&self, base: &Level, linear_base: &State, iterate: &State, t1: f64) -> Result<MapOutput> {
        let g = &self.grid;
        let m = &self.material;
        let (geometry, _) = self.geometry(iterate)?;
        let transport = TransportLevel::from_upper_velocity(g, &iterate.u_plus, &geometry);
        let t0 = base.state.t;
        let field = SampledVelocity::new(g, t0, &base.transport, t1, &transport);
        let ds = density_step(g, &base.rho, &field, t0, t1, self.config.solver.transport_substeps)?;
        let mut eval = iterate.clone();
        eval.rho_plus = ds.rho.plus.clone();
        eval.t = t1;
        let rates = Rates::between(&base.state, &eval, t1 - t0);
        let rhs = self.assembler().assemble(&eval, &geometry, &rates)?;
        if !rhs.is_finite() {
            return Err(Error::Gate("right-hand side is not finite".into()));
        }
        let prev = StokesState {
            u_plus: linear_base.u_plus.clone(),
            u_minus: linear_base.u_minus.clone(),
            pi: linear_base.pi_minus.clone(),
            h: linear_base.h.clone(),
        };
        let (sol, stokes_report) = self.stokes.step(g, &prev, &rhs.stokes_fields(m))?;
        let ts = m.theta_star;
        let (tp, tm, heat_report) = self.heat.step(
            g,
            (&linear_base.theta_plus.map(|v| v - ts), &linear_base.theta_minus.map(|v| v - ts)),
            &rhs.body.f_theta_plus,
            &rhs.body.f_theta_minus,
            &rhs.interface.g_theta,
        )?;
        let state = State {
            rho_plus: ds.rho.plus.clone(),
            u_plus: sol.u_plus,
            u_minus: sol.u_minus,
            theta_plus: tp.map(|v| v + ts),
            theta_minus: tm.map(|v| v + ts),
            pi_minus: sol.pi,
            h: sol.h,
            t: t1,
        };
        state.validate(g)?;
        Ok(MapOutput {
            state,
            rho: ds.rho,
            gradient_sup: transport.gradient_sup(g),
            flow_jacobian_min: ds.jacobian_min,
            transform_gate: geometry.gate,
            stokes_residual: stokes_report.modes.max_residual(),
            heat_residual: heat_report.max_residual(),
            rhs,
        })
    }

    /// Convergence bookkeeping shared by both fixed-point variants. Returns
    /// `Ok(true)` once converged.
    fn record(
        &self,
        trace: &mut IterationTrace,
        change: FieldNorms,
        scale: f64,
        out: Option<&MapOutput>,
        non_contracting: &mut usize,
    ) -> Result<bool> {
        let solver = &self.config.solver;
        let c = change.max();
        let w = weighted_change(&change, self.grid.dt);
        let ratio = trace
            .records
            .last()
            .map(|r| if r.weighted_change > 0.0 { w / r.weighted_change } else if w > 0.0 { f64::INFINITY } else { 0.0 });
        let iteration = trace.records.len() + 1;
        trace.records.push(IterationRecord {
            iteration,
            change: c,
            relative_change: if scale > 0.0 { c / scale } else { c },
            weighted_change: w,
            ratio,
            field_change: change,
            transform_gate: out.map_or(f64::NAN, |o| o.transform_gate),
            flow_jacobian_min: out.map_or(f64::NAN, |o| o.flow_jacobian_min),
            stokes_residual: out.map_or(f64::NAN, |o| o.stokes_residual),
            heat_residual: out.map_or(f64::NAN, |o| o.heat_residual),
            rhs_max: out.map_or(f64::NAN, |o| o.rhs.max_abs()),
        });
        if !c.is_finite() {
            return Err(Error::Contraction(format!("non-finite change at iteration {iteration}")));
        }
        if c <= solver.tol_fp * scale + CHANGE_FLOOR {
            trace.converged = true;
            return Ok(true);
        }
        *non_contracting = if ratio.is_some_and(|r| r >= 1.0) { *non_contracting + 1 } else { 0 };
        if *non_contracting >= solver.divergence_window {
            return Err(Error::Contraction(format!(
                "change grew for {} consecutive iterations (last ratio {:.3})",
                non_contracting,
                ratio.unwrap_or(f64::NAN)
            )));
        }
        if iteration >= solver.max_iter {
            return Err(Error::Contraction(format!(
                "no convergence after {iteration} iterations (relative change {:.3e})",
                c / scale.max(f64::MIN_POSITIVE)
            )));
        }
        Ok(false)
    }

    /// Advances the committed level by one time step.
    pub fn advance(&self, level: &Level, gate: &TransportGate, step: usize) -> std::result::Result<StepOutcome, StepFailure> {
        let dt = self.grid.dt;
        let t1 = level.state.t + dt;
        let mut trace = IterationTrace { step, t: t1, records: Vec::new(), converged: false };
        let mut iterate = level.predictor.clone().unwrap_or_else(|| level.state.clone());
        iterate.t = t1;
        let mut non_contracting = 0;
        loop {
            let out = match self.picard_map(level, &level.state, &iterate, t1) {
                Ok(o) => o,
                Err(error) => return Err(StepFailure { error, trace }),
            };
            let result = out.state.distance(&iterate, &self.grid).and_then(|change| {
                let scale = out.state.deviation(&self.grid, &self.material)?.max();
                self.record(&mut trace, change, scale, Some(&out), &mut non_contracting)
            });
            match result {
                Ok(false) => iterate = out.state,
                Ok(true) => {
                    let committed = self.commit(out, &level.state, gate, dt);
                    return match committed {
                        Ok((level, gate, rhs)) => Ok(StepOutcome { level, gate, trace, rhs }),
                        Err(error) => Err(StepFailure { error, trace }),
                    };
                }
                Err(error) => return Err(StepFailure { error, trace }),
            }
        }
    }

    fn commit(&self, out: MapOutput, old: &State, gate: &TransportGate, dt: f64) -> Result<(Level, TransportGate, RhsBundle)> {
        let gate = gate.advance(out.gradient_sup, dt, out.flow_jacobian_min)?;
        let (geometry, dhdt) = self.geometry(&out.state)?;
        let transport = TransportLevel::from_upper_velocity(&self.grid, &out.state.u_plus, &geometry);
        // The pressure is not evolved, so the predictor keeps the newest one.
        let mut predictor = out.state.extrapolate(old);
        predictor.pi_minus = out.state.pi_minus.clone();
        let predictor = Some(predictor);
        Ok((Level { state: out.state, rho: out.rho, transport, dhdt, predictor }, gate, out.rhs))
    }

    /// Picard iteration on whole trajectories: the nonlinear terms of step
    /// `k` are evaluated on the previous trajectory, the linear steps are
    /// chained along the new one. Returns the levels `0..=n_steps` and one
    /// trace per global iteration (with `step` = 0 and `t` = final time).
    pub fn run_global(&self, initial: &Level, n_steps: usize) -> std::result::Result<(Vec<Level>, Vec<IterationTrace>), StepFailure> {
        let dt = self.grid.dt;
        let mut traj: Vec<Level> = (0..=n_steps)
            .map(|k| {
                let mut l = initial.clone();
                l.state.t = initial.state.t + k as f64 * dt;
                l
            })
            .collect();
        let t_end = traj[n_steps].state.t;
        let mut trace = IterationTrace { step: 0, t: t_end, records: Vec::new(), converged: false };
        let mut non_contracting = 0;
        loop {
            let mut next = vec![initial.clone()];
            let mut change = FieldNorms::default();
            let mut scale = 0.0f64;
            let mut last = None;
            for k in 0..n_steps {
                let t1 = traj[k + 1].state.t;
                let out = match self.picard_map(&traj[k], &next[k].state, &traj[k + 1].state, t1) {
                    Ok(o) => o,
                    Err(error) => return Err(StepFailure { error, trace }),
                };
                let d = match out.state.distance(&traj[k + 1].state, &self.grid) {
                    Ok(d) => d,
                    Err(error) => return Err(StepFailure { error, trace }),
                };
                let dev = match out.state.deviation(&self.grid, &self.material) {
                    Ok(d) => d.max(),
                    Err(error) => return Err(StepFailure { error, trace }),
                };
                change = elementwise_max(change, d);
                scale = scale.max(dev);
                let level = match self.geometry(&out.state) {
                    Ok((geometry, dhdt)) => Level {
                        transport: TransportLevel::from_upper_velocity(&self.grid, &out.state.u_plus, &geometry),
                        state: out.state.clone(),
                        rho: out.rho.clone(),
                        dhdt,
                        predictor: None,
                    },
                    Err(error) => return Err(StepFailure { error, trace }),
                };
                next.push(level);
                last = Some(out);
            }
            let done = match self.record(&mut trace, change, scale, last.as_ref(), &mut non_contracting) {
                Ok(d) => d,
                Err(error) => return Err(StepFailure { error, trace }),
            };
            traj = next;
            if done || n_steps == 0 {
                trace.converged = true;
                let mut gate = TransportGate::new(self.config.solver.eps1);
                for w in traj.windows(2) {
                    let g = w[1].transport.gradient_sup(&self.grid);
                    gate = match gate.advance(g, dt, 1.0) {
                        Ok(g) => g,
                        Err(error) => return Err(StepFailure { error, trace }),
                    };
                }
                return Ok((traj, vec![trace]));
            }
        }
    }

    /// Diagnostics of a committed level.
    pub fn diagnostics(&self, level: &Level) -> Result<DiagnosticsReport> {
        let geometry = ExtendedHeight::new(&self.grid, &level.state.h, Some(&level.dhdt))?;
        DiagnosticsReport::evaluate(
            &self.grid,
            &self.material,
            self.options.curvature,
            &level.state,
            &geometry,
            &level.dhdt,
            self.options.delta_j,
        )
    }
}

fn elementwise_max(a: FieldNorms, b: FieldNorms) -> FieldNorms {
    FieldNorms {
        rho_plus: a.rho_plus.max(b.rho_plus),
        u_plus: a.u_plus.max(b.u_plus),
        u_minus: a.u_minus.max(b.u_minus),
        theta_plus: a.theta_plus.max(b.theta_plus),
        theta_minus: a.theta_minus.max(b.theta_minus),
        pi_minus: a.pi_minus.max(b.pi_minus),
        h: a.h.max(b.h),
    }
}

// ---- whole runs -----------------------------------------------------------

/// How a run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Terminated,
}

/// `termination.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Termination {
    pub status: RunStatus,
    /// Error category (`gate`, `contraction`, `solver`, `compatibility`, ...).
    pub kind: Option<String>,
    pub reason: Option<String>,
    pub exit_code: i32,
    /// Last committed step and time.
    pub step: usize,
    pub t: f64,
}

/// `summary.json`: one documented record per run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub reason: Option<String>,
    pub exit_code: i32,
    pub dimension: usize,
    pub m_tan: usize,
    pub m_nrm: usize,
    pub dt: f64,
    pub epsilon: f64,
    pub n_steps: usize,
    pub steps_completed: usize,
    pub t_reached: f64,
    pub fixed_point: FixedPointMode,
    /// Largest Picard iteration count of any step.
    pub max_iterations: usize,
    pub total_iterations: usize,
    /// Largest contraction ratio from the second iteration on.
    pub max_ratio: f64,
    /// `max_t sup |h|`.
    pub h_sup_max: f64,
    /// Deviation of the last committed level from the rest state.
    pub final_deviation: FieldNorms,
    pub compatibility_max: f64,
    pub compatibility_warnings: Vec<String>,
    pub mass_drift_rate: Option<f64>,
    pub mass_drift_rate_raw: Option<f64>,
    pub viscous_production_min: f64,
    /// Largest case-32 residuals over the diagnosed levels after the initial one.
    pub max_stefan: f64,
    pub max_gibbs_thomson: f64,
    pub max_jump_residual: f64,
    pub max_stokes_residual: f64,
    pub max_heat_residual: f64,
}

/// Everything `simulate` produced, for callers that want more than the files.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub termination: Termination,
    pub traces: Vec<IterationTrace>,
    pub diagnostics: Vec<DiagnosticsReport>,
    /// Committed levels kept in memory (first and last always, others by cadence).
    pub levels: Vec<Level>,
}

fn kind_of(e: &Error) -> &'static str {
    match e {
        Error::ConfigParse { .. } | Error::Config(_) => "config",
        Error::Model(_) => "model",
        Error::Shape(_) => "shape",
        Error::Gate(_) => "gate",
        Error::Contraction(_) => "contraction",
        Error::Solver(_) => "solver",
        Error::Compatibility(_) => "compatibility",
        Error::Format(_) => "format",
        Error::Io(_) => "io",
    }
}

/// Text sinks of a run directory; all optional so runs can stay in memory.
struct Sinks<'a> {
    dir: Option<&'a Path>,
    iterations: String,
    steps: String,
    diagnostics: String,
}

impl<'a> Sinks<'a> {
    fn new(dir: Option<&'a Path>) -> Self {
        let mut iterations = String::from("step,t,iteration,change,relative_change,weighted_change,ratio");
        for n in FieldNorms::NAMES {
            let _ = write!(iterations, ",change_{n}");
        }
        iterations.push_str(",transform_gate,flow_jacobian_min,stokes_residual,heat_residual,rhs_max\n");
        Self {
            dir,
            iterations,
            steps: String::from("step,t,iterations,converged,max_ratio,gradient_integral,flow_jacobian_min\n"),
            diagnostics: String::new(),
        }
    }

    fn trace(&mut self, tr: &IterationTrace, gate: Option<&TransportGate>) {
        for r in &tr.records {
            let _ = write!(
                self.iterations,
                "{},{:.17e},{},{:.17e},{:.17e},{:.17e},{}",
                tr.step,
                tr.t,
                r.iteration,
                r.change,
                r.relative_change,
                r.weighted_change,
                r.ratio.map_or(String::new(), |v| format!("{v:.17e}"))
            );
            for v in r.field_change.values() {
                let _ = write!(self.iterations, ",{v:.17e}");
            }
            let _ = writeln!(
                self.iterations,
                ",{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                r.transform_gate, r.flow_jacobian_min, r.stokes_residual, r.heat_residual, r.rhs_max
            );
        }
        let (gi, jm) = gate.map_or((f64::NAN, f64::NAN), |g| (g.gradient_integral, g.jacobian_min));
        let _ = writeln!(
            self.steps,
            "{},{:.17e},{},{},{:.17e},{gi:.17e},{jm:.17e}",
            tr.step,
            tr.t,
            tr.iterations(),
            tr.converged,
            tr.max_ratio_from(2)
        );
    }

    fn diagnostics(&mut self, d: &DiagnosticsReport) {
        if self.diagnostics.is_empty() {
            self.diagnostics = d.csv_header();
            self.diagnostics.push('\n');
        }
        self.diagnostics.push_str(&d.csv_row());
        self.diagnostics.push('\n');
    }

    fn flush(&self) -> Result<()> {
        if let Some(dir) = self.dir {
            std::fs::write(dir.join("iterations.csv"), &self.iterations)?;
            std::fs::write(dir.join("steps.csv"), &self.steps)?;
            std::fs::write(dir.join("diagnostics.csv"), &self.diagnostics)?;
        }
        Ok(())
    }
}

fn write_snapshot(driver: &Driver, dir: Option<&Path>, step: usize, level: &Level) -> Result<()> {
    let Some(dir) = dir else { return Ok(()) };
    let snaps = dir.join("snapshots");
    std::fs::create_dir_all(&snaps)?;
    let snap = Snapshot::new(&driver.grid, &level.state, Some(&level.rho.minus), Some(&level.dhdt));
    let stem = format!("level_{step:05}");
    let fmt = driver.config.output.snapshot_format;
    if matches!(fmt, SnapshotFormat::Binary | SnapshotFormat::Both) {
        snap.write_binary(&snaps.join(format!("{stem}.bps")))?;
    }
    if matches!(fmt, SnapshotFormat::Csv | SnapshotFormat::Both) {
        snap.write_csv(&driver.grid, &snaps, &stem)?;
    }
    Ok(())
}

/// Runs a configuration to `t_final`. Gate, contraction and solver failures
/// (including those during initialization) end the run with a termination
/// record; other errors propagate. With `out = Some(dir)` the run directory
/// receives the resolved configuration, its provenance, snapshots, the
/// iteration trace, diagnostics, `termination.json` and `summary.json`.
pub fn simulate(resolved: &ResolvedConfig, out: Option<&Path>) -> Result<RunOutcome> {
    let config = &resolved.config;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let mut text = String::from("# resolved configuration; key origins are listed in provenance.json\n");
        text.push_str(&config.to_toml_string()?);
        std::fs::write(dir.join("config.toml"), text)?;
        write_json(&dir.join("provenance.json"), &resolved.provenance)?;
    }
    let driver = Driver::new(config)?;
    let n_steps = config.n_steps();
    let mut sinks = Sinks::new(out);
    let mut traces = Vec::new();
    let mut diagnostics: Vec<DiagnosticsReport> = Vec::new();
    let mut levels = Vec::new();
    let mut summary = RunSummary {
        status: RunStatus::Completed,
        reason: None,
        exit_code: 0,
        dimension: driver.grid.dim,
        m_tan: driver.grid.m_tan,
        m_nrm: driver.grid.m_nrm,
        dt: driver.grid.dt,
        epsilon: config.epsilon,
        n_steps,
        steps_completed: 0,
        t_reached: 0.0,
        fixed_point: config.solver.fixed_point,
        max_iterations: 0,
        total_iterations: 0,
        max_ratio: 0.0,
        h_sup_max: 0.0,
        final_deviation: FieldNorms::default(),
        compatibility_max: f64::NAN,
        compatibility_warnings: Vec::new(),
        mass_drift_rate: None,
        mass_drift_rate_raw: None,
        viscous_production_min: f64::INFINITY,
        max_stefan: 0.0,
        max_gibbs_thomson: 0.0,
        max_jump_residual: 0.0,
        max_stokes_residual: 0.0,
        max_heat_residual: 0.0,
    };
    let mut failure: Option<(Error, usize, f64)> = None;

    let observe = |level: &Level, step: usize, force: bool, diagnostics: &mut Vec<DiagnosticsReport>, sinks: &mut Sinks, summary: &mut RunSummary, levels: &mut Vec<Level>| -> Result<()> {
        summary.h_sup_max = summary.h_sup_max.max(level.state.h.max_abs());
        if force || step % config.output.diagnostics_every == 0 {
            let d = driver.diagnostics(level)?;
            sinks.diagnostics(&d);
            summary.viscous_production_min = summary.viscous_production_min.min(d.entropy.viscous_min);
            // The initial pressure is not initial data, so jump residuals
            // count from the first solved level on.
            if step > 0 {
                let get = |n: &str| d.jumps.get(n).map_or(0.0, |e| e.sup);
                summary.max_stefan = summary.max_stefan.max(get("stefan"));
                summary.max_gibbs_thomson = summary.max_gibbs_thomson.max(get("gibbs_thomson"));
                summary.max_jump_residual = summary.max_jump_residual.max(d.jumps.max_sup());
            }
            diagnostics.push(d);
        }
        if force || step % config.output.snapshot_every == 0 {
            write_snapshot(&driver, out, step, level)?;
            levels.push(level.clone());
        }
        Ok(())
    };

    let init = match driver.initialize() {
        Ok(i) => Some(i),
        Err(e) if matches!(e.exit_code(), 2) || matches!(e, Error::Compatibility(_)) => {
            failure = Some((e, 0, 0.0));
            None
        }
        Err(e) => return Err(e),
    };

    if let Some(init) = init {
        summary.compatibility_max = init.compatibility.max_sup();
        summary.compatibility_warnings = init.warnings.clone();
        if let Some(dir) = out {
            write_json(&dir.join("compatibility.json"), &init.compatibility)?;
        }
        let mut level = init.level;
        summary.t_reached = level.state.t;
        observe(&level, 0, true, &mut diagnostics, &mut sinks, &mut summary, &mut levels)?;
        match config.solver.fixed_point {
            FixedPointMode::PerStep => {
                let mut gate = TransportGate::new(config.solver.eps1);
                for step in 1..=n_steps {
                    match driver.advance(&level, &gate, step) {
                        Ok(o) => {
                            sinks.trace(&o.trace, Some(&o.gate));
                            summary.max_iterations = summary.max_iterations.max(o.trace.iterations());
                            summary.total_iterations += o.trace.iterations();
                            summary.max_ratio = summary.max_ratio.max(o.trace.max_ratio_from(2));
                            for r in &o.trace.records {
                                summary.max_stokes_residual = summary.max_stokes_residual.max(r.stokes_residual);
                                summary.max_heat_residual = summary.max_heat_residual.max(r.heat_residual);
                            }
                            traces.push(o.trace);
                            level = o.level;
                            gate = o.gate;
                            summary.steps_completed = step;
                            summary.t_reached = level.state.t;
                            if step == n_steps && config.output.write_rhs {
                                if let Some(dir) = out {
                                    o.rhs.write_csv(&driver.grid, dir)?;
                                }
                            }
                            observe(&level, step, step == n_steps, &mut diagnostics, &mut sinks, &mut summary, &mut levels)?;
                        }
                        Err(f) => {
                            sinks.trace(&f.trace, None);
                            traces.push(f.trace);
                            if f.error.exit_code() == 2 {
                                failure = Some((f.error, step - 1, level.state.t));
                                break;
                            }
                            sinks.flush()?;
                            return Err(f.error);
                        }
                    }
                }
                summary.final_deviation = level.state.deviation(&driver.grid, &driver.material)?;
            }
            FixedPointMode::Global => match driver.run_global(&level, n_steps) {
                Ok((traj, gtraces)) => {
                    for tr in &gtraces {
                        sinks.trace(tr, None);
                        summary.max_iterations = summary.max_iterations.max(tr.iterations());
                        summary.total_iterations += tr.iterations();
                        summary.max_ratio = summary.max_ratio.max(tr.max_ratio_from(2));
                    }
                    traces.extend(gtraces);
                    for (step, l) in traj.iter().enumerate().skip(1) {
                        observe(l, step, step == n_steps, &mut diagnostics, &mut sinks, &mut summary, &mut levels)?;
                    }
                    let last = traj.last().expect("at least the initial level");
                    summary.steps_completed = n_steps;
                    summary.t_reached = last.state.t;
                    summary.final_deviation = last.state.deviation(&driver.grid, &driver.material)?;
                }
                Err(f) => {
                    sinks.trace(&f.trace, None);
                    traces.push(f.trace);
                    if f.error.exit_code() != 2 {
                        sinks.flush()?;
                        return Err(f.error);
                    }
                    failure = Some((f.error, 0, level.state.t));
                }
            },
        }
    }

    if diagnostics.len() >= 2 {
        let totals: Vec<Totals> = diagnostics.iter().map(|d| d.totals.clone()).collect();
        let b = conservation_budgets(&totals)?;
        summary.mass_drift_rate = Some(b.mass_drift_rate);
        summary.mass_drift_rate_raw = Some(b.mass_drift_rate_raw);
        if let Some(dir) = out {
            write_json(&dir.join("budgets.json"), &b)?;
        }
    }
    let termination = match &failure {
        None => Termination {
            status: RunStatus::Completed,
            kind: None,
            reason: None,
            exit_code: 0,
            step: summary.steps_completed,
            t: summary.t_reached,
        },
        Some((e, step, t)) => {
            summary.status = RunStatus::Terminated;
            summary.reason = Some(e.to_string());
            summary.exit_code = e.exit_code();
            Termination {
                status: RunStatus::Terminated,
                kind: Some(kind_of(e).to_string()),
                reason: Some(e.to_string()),
                exit_code: e.exit_code(),
                step: *step,
                t: *t,
            }
        }
    };
    if !summary.viscous_production_min.is_finite() {
        summary.viscous_production_min = 0.0;
    }
    sinks.flush()?;
    if let Some(dir) = out {
        write_json(&dir.join("termination.json"), &termination)?;
        write_json(&dir.join("summary.json"), &summary)?;
    }
    Ok(RunOutcome { summary, termination, traces, diagnostics, levels })
}
