//! Nonlinear right-hand sides of the flattened problem.
//!
//! The linear operators act on the hat unknowns with the reference
//! coefficients; everything else is collected here. Every right-hand side is
//! stored as a list of named terms whose sum is the total, so that individual
//! contributions can be probed and exported.
//!
//! Conventions: `D(u) = (grad u + grad u^T)/2`, the pulled-back strain is
//! `D + V_D`, the upper stress is `mu D + (lambda - mu) div u I - P I` and
//! the lower one `mu D - pi I`; jumps are `[[f]] = f_- - f_+`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constitutive::{Closure, MaterialSystem, Side};
use crate::error::{Error, Result};
use crate::geometry::{normal_and_curvature, CurvatureForm, ExtendedHeight};
use crate::grid::{Grid, LineField, NormKind, StripField};
use crate::state::{Rates, State};
use crate::stokes::StokesFields;

/// Default margin for `|1/rho*_- - 1/rho_+|` and `|rho*_- - rho_+|` on the interface.
pub const DEFAULT_DELTA_J: f64 = 1e-6;

/// Integrability exponent of the trace-norm proxy in compatibility reports.
pub const TRACE_Q: f64 = 4.0;

/// Which form of the interface data `G_1 .. G_{N+1}` is used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InterfaceForm {
    /// Forms equivalent to the physical stress balance and Gibbs-Thomson law.
    #[default]
    Derived,
    /// The displayed formulas, read literally.
    Printed,
}

/// Denominator of the phase-flux elimination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JDenominator {
    /// `1/rho*_- - 1/rho_+` with the total upper density.
    #[default]
    Total,
    /// `1/rho*_- - 1/(rho_+ + rho*_+)`.
    Literal,
}

/// Pressure-work term of the upper heat equation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeatSource {
    /// `+P (1 - 1/rho) (div u + V_div)`.
    #[default]
    FTheta,
    /// `-(P/rho) (div u + V_div)`.
    Eq1,
}

/// Switches and margins of the assembly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RhsOptions {
    pub curvature: CurvatureForm,
    pub interface_form: InterfaceForm,
    pub j_denominator: JDenominator,
    pub heat_source: HeatSource,
    pub delta_j: f64,
}

impl Default for RhsOptions {
    fn default() -> Self {
        Self {
            curvature: CurvatureForm::default(),
            interface_form: InterfaceForm::default(),
            j_denominator: JDenominator::default(),
            heat_source: HeatSource::default(),
            delta_j: DEFAULT_DELTA_J,
        }
    }
}

// ---- pointwise formulas ---------------------------------------------------

/// `[[1/rho]]` on the interface for the selected denominator.
pub fn inverse_density_jump(rho_star_minus: f64, rho_star_plus: f64, rho_plus_trace: f64, form: JDenominator) -> f64 {
    match form {
        JDenominator::Total => 1.0 / rho_star_minus - 1.0 / rho_plus_trace,
        JDenominator::Literal => 1.0 / rho_star_minus - 1.0 / (rho_plus_trace + rho_star_plus),
    }
}

/// Elimination formula `j = (u_-N - u_+N) sqrt(1 + |grad'H|^2) / [[1/rho]]`.
pub fn phase_flux_eliminated(u_minus_n: f64, u_plus_n: f64, area: f64, inv_jump: f64) -> f64 {
    (u_minus_n - u_plus_n) * area / inv_jump
}

/// Physical-frame formula `j = [[u]] . n / [[1/rho]]`.
pub fn phase_flux_physical(u_minus: &[f64], u_plus: &[f64], normal: &[f64], inv_jump: f64) -> f64 {
    let jn: f64 = u_minus.iter().zip(u_plus).zip(normal).map(|((a, b), n)| (a - b) * n).sum();
    jn / inv_jump
}

/// Kinematic data at one interface point: the three displayed terms of `G_h`.
///
/// `slope_dot_minus = grad'H . u'_-` and `slope_dot_plus = grad'H . u'_+`.
pub fn kinematic_terms(
    rho_star_minus: f64,
    rho_star_plus: f64,
    rho_plus_trace: f64,
    u_minus_n: f64,
    u_plus_n: f64,
    slope_dot_minus: f64,
    slope_dot_plus: f64,
) -> [f64; 3] {
    let gap = rho_star_minus - rho_plus_trace;
    [
        (1.0 / gap - 1.0 / (rho_star_minus - rho_star_plus)) * (rho_star_minus * u_minus_n - rho_star_plus * u_plus_n),
        (rho_star_plus - rho_plus_trace) / gap * u_plus_n,
        -rho_star_minus / gap * slope_dot_minus + rho_plus_trace / gap * slope_dot_plus,
    ]
}

/// One-sided normal-stress data `(T_+, T_-)` equivalent to the pair
/// `T_- - T_+ = sigma Lap'H + G_N`, `T_-/rho*_- - T_+/rho*_+ = G_{N+1}`.
pub fn traction_split(rho_star_minus: f64, rho_star_plus: f64, sigma: f64, g_n: f64, g_n1: f64, lap_h: f64) -> (f64, f64) {
    let gap = rho_star_minus - rho_star_plus;
    let c = rho_star_minus * rho_star_plus / gap;
    let t_plus = rho_star_plus * sigma / gap * lap_h + c * (g_n / rho_star_minus - g_n1);
    let t_minus = rho_star_minus * sigma / gap * lap_h + c * (g_n / rho_star_plus - g_n1);
    (t_plus, t_minus)
}

// ---- per-phase fields -----------------------------------------------------

/// Coefficients and derivatives of one phase, evaluated on its strip.
struct Phase {
    side: Side,
    rho: StripField,
    rho_star: f64,
    mu: StripField,
    lambda: StripField,
    kappa: StripField,
    d: StripField,
    pressure: StripField,
    mu_star: f64,
    lambda_star: f64,
    kappa_star: f64,
    d_star: f64,
    /// `grad[i][a] = d_a u_i` in flattened coordinates.
    grad: Vec<Vec<StripField>>,
    strain: Vec<Vec<StripField>>,
    vd: Vec<Vec<StripField>>,
    div: StripField,
    v_div: StripField,
    theta_grad: Vec<StripField>,
    /// `K_0 .. K_N`.
    k: Vec<StripField>,
    /// `H_1 .. H_N`.
    dh: Vec<StripField>,
}

fn pointwise(side: Side, len: usize, f: impl Fn(usize) -> f64) -> StripField {
    StripField { side, data: (0..len).map(f).collect() }
}

fn line(len: usize, f: impl Fn(usize) -> f64) -> LineField {
    LineField { data: (0..len).map(f).collect() }
}

fn eval_plus(c: &Closure, rho: &StripField, theta: &StripField) -> StripField {
    rho.zip_map(theta, |r, t| c.eval(r, t))
}

fn eval_minus(c: &Closure, theta: &StripField) -> StripField {
    theta.map(|t| c.eval(0.0, t))
}

impl Phase {
    fn new(grid: &Grid, m: &MaterialSystem, geometry: &ExtendedHeight, state: &State, side: Side) -> Self {
        let n = grid.dim;
        let u = state.u(side);
        let theta = state.theta(side);
        let s = &m.starred;
        let (rho, rho_star, mu, lambda, kappa, d, pressure, mu_star, lambda_star, kappa_star, d_star) = match side {
            Side::Plus => (
                state.rho_plus.clone(),
                m.rho_star_plus,
                eval_plus(&m.mu_plus, &state.rho_plus, theta),
                eval_plus(&m.lambda_plus, &state.rho_plus, theta),
                eval_plus(&m.kappa_plus, &state.rho_plus, theta),
                eval_plus(&m.d_plus, &state.rho_plus, theta),
                eval_plus(&m.pressure_plus, &state.rho_plus, theta),
                s.mu_plus,
                s.lambda_plus,
                s.kappa_plus,
                s.d_plus,
            ),
            Side::Minus => (
                grid.constant(side, m.rho_star_minus),
                m.rho_star_minus,
                eval_minus(&m.mu_minus, theta),
                grid.zeros(side),
                eval_minus(&m.kappa_minus, theta),
                eval_minus(&m.d_minus, theta),
                grid.zeros(side),
                s.mu_minus,
                0.0,
                s.kappa_minus,
                s.d_minus,
            ),
        };
        let grad: Vec<Vec<StripField>> = u.iter().map(|c| grid.gradient(c)).collect();
        let strain: Vec<Vec<StripField>> = (0..n)
            .map(|i| (0..n).map(|a| (&grad[i][a] + &grad[a][i]).scale(0.5)).collect())
            .collect();
        let g = geometry.side(side);
        let vd: Vec<Vec<StripField>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|a| (&(g.k_axis(i) * &grad[a][n - 1]) + &(g.k_axis(a) * &grad[i][n - 1])).scale(-0.5))
                    .collect()
            })
            .collect();
        let mut div = grid.zeros(side);
        let mut v_div = grid.zeros(side);
        for a in 0..n {
            div.add_scaled(1.0, &grad[a][a]);
            v_div.add_scaled(-1.0, &(g.k_axis(a) * &grad[a][n - 1]));
        }
        Self {
            side,
            rho,
            rho_star,
            mu,
            lambda,
            kappa,
            d,
            pressure,
            mu_star,
            lambda_star,
            kappa_star,
            d_star,
            grad,
            strain,
            vd,
            div,
            v_div,
            theta_grad: grid.gradient(theta),
            k: g.k.clone(),
            dh: g.dh.clone(),
        }
    }

    fn len(&self) -> usize {
        self.rho.data.len()
    }

    fn dim(&self) -> usize {
        self.grad.len()
    }

    /// `D + V_D`.
    fn frak(&self, i: usize, a: usize) -> StripField {
        &self.strain[i][a] + &self.vd[i][a]
    }

    /// `K_0 d_N f - u . grad f + (u . K) d_N f` with `K = (K_1 .. K_N)`.
    fn convective(&self, grid: &Grid, u: &[StripField], f: &StripField) -> StripField {
        let n = self.dim();
        let df = grid.gradient(f);
        pointwise(self.side, self.len(), |p| {
            let dn = df[n - 1].data[p];
            let mut adv = 0.0;
            let mut uk = 0.0;
            for a in 0..n {
                adv += u[a].data[p] * df[a].data[p];
                uk += u[a].data[p] * self.k[a + 1].data[p];
            }
            self.k[0].data[p] * dn - adv + uk * dn
        })
    }

    /// Row-wise divergence `(sum_a d_a T_ia)_i`.
    fn tensor_div(&self, grid: &Grid, t: &[Vec<StripField>]) -> Vec<StripField> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut acc = grid.zeros(self.side);
                for a in 0..n {
                    acc.add_scaled(1.0, &grid.d(&t[i][a], a));
                }
                acc
            })
            .collect()
    }

    /// Row-wise `V_div`: `(-sum_a K_a d_N T_ia)_i`.
    fn tensor_v_div(&self, grid: &Grid, t: &[Vec<StripField>]) -> Vec<StripField> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut acc = grid.zeros(self.side);
                for a in 0..n {
                    acc.add_scaled(-1.0, &(&self.k[a + 1] * &grid.d_nrm(&t[i][a])));
                }
                acc
            })
            .collect()
    }

    /// Physical gradient `d_a f - K_a d_N f`.
    fn pullback_gradient(&self, f_grad: &[StripField]) -> Vec<StripField> {
        let n = self.dim();
        (0..n)
            .map(|a| pointwise(self.side, self.len(), |p| f_grad[a].data[p] - self.k[a + 1].data[p] * f_grad[n - 1].data[p]))
            .collect()
    }

    fn mu_tilde(&self) -> StripField {
        self.mu.map(|v| v - self.mu_star)
    }

    /// `2 mu |D + V_D|^2`.
    fn shear_dissipation(&self) -> StripField {
        let n = self.dim();
        let fr: Vec<Vec<StripField>> = (0..n).map(|i| (0..n).map(|a| self.frak(i, a)).collect()).collect();
        pointwise(self.side, self.len(), |p| {
            let mut s = 0.0;
            for row in &fr {
                for f in row {
                    s += f.data[p] * f.data[p];
                }
            }
            2.0 * self.mu.data[p] * s
        })
    }

    /// The three conduction terms of the heat right-hand side.
    fn conduction(&self, grid: &Grid) -> [StripField; 3] {
        let n = self.dim();
        let dn = &self.theta_grad[n - 1];
        let flux = self.pullback_gradient(&self.theta_grad);
        let d_tilde = self.d.map(|v| v - self.d_star);
        let mut star = grid.zeros(self.side);
        let mut tilde = grid.zeros(self.side);
        let mut chain = grid.zeros(self.side);
        for a in 0..n {
            star.add_scaled(-self.d_star, &grid.d(&(&self.k[a + 1] * dn), a));
            tilde.add_scaled(1.0, &grid.d(&(&d_tilde * &flux[a]), a));
            chain.add_scaled(-1.0, &(&self.k[a + 1] * &grid.d_nrm(&(&self.d * &flux[a]))));
        }
        [star, tilde, chain]
    }
}

/// `d_a d_b f` with the operators of the linear solvers.
fn second_derivative(grid: &Grid, f: &StripField, a: usize, b: usize) -> StripField {
    let nrm = grid.dim - 1;
    match (a == nrm, b == nrm) {
        (true, true) => grid.d_nrm2(f),
        (false, false) => grid.d_tan2(f, a, b),
        (true, false) => grid.d_tan(&grid.d_nrm(f), b),
        (false, true) => grid.d_tan(&grid.d_nrm(f), a),
    }
}

// ---- terms ----------------------------------------------------------------

/// Target of a right-hand-side term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    FPlus,
    FThetaPlus,
    FMinus,
    FThetaMinus,
    GTangential,
    GNormal,
    GGibbs,
    GTheta,
    GH,
}

impl Target {
    pub fn label(self) -> &'static str {
        match self {
            Target::FPlus => "F_plus",
            Target::FThetaPlus => "F_theta_plus",
            Target::FMinus => "F_minus",
            Target::FThetaMinus => "F_theta_minus",
            Target::GTangential => "G_tangential",
            Target::GNormal => "G_N",
            Target::GGibbs => "G_N1",
            Target::GTheta => "G_theta",
            Target::GH => "G_h",
        }
    }
}

/// Contribution of one displayed term to a strip right-hand side.
#[derive(Clone, Debug)]
pub struct StripTerm {
    pub target: Target,
    pub name: &'static str,
    /// One field per vector component (a single field for scalars).
    pub values: Vec<StripField>,
}

/// Contribution of one displayed term to an interface right-hand side.
#[derive(Clone, Debug)]
pub struct LineTerm {
    pub target: Target,
    pub name: &'static str,
    /// One line per component (tangential index for `G_i`).
    pub values: Vec<LineField>,
}

fn sum_strip_terms(grid: &Grid, side: Side, terms: &[StripTerm], target: Target, comps: usize) -> Vec<StripField> {
    let mut out = vec![grid.zeros(side); comps];
    for t in terms.iter().filter(|t| t.target == target) {
        for (o, v) in out.iter_mut().zip(&t.values) {
            o.add_scaled(1.0, v);
        }
    }
    out
}

fn sum_line_terms(grid: &Grid, terms: &[LineTerm], target: Target, comps: usize) -> Vec<LineField> {
    let mut out = vec![grid.line_zeros(); comps];
    for t in terms.iter().filter(|t| t.target == target) {
        for (o, v) in out.iter_mut().zip(&t.values) {
            *o = &*o + v;
        }
    }
    out
}

/// Right-hand sides of the bulk equations.
#[derive(Clone, Debug)]
pub struct BodyRhs {
    pub f_plus: Vec<StripField>,
    pub f_theta_plus: StripField,
    pub f_minus: Vec<StripField>,
    pub f_theta_minus: StripField,
    /// `f_-`: data of `div u_- = f_-`.
    pub f_div: StripField,
    /// `ff_-`: conservative form with `div ff_- = f_-`.
    pub ff_minus: Vec<StripField>,
    pub terms: Vec<StripTerm>,
}

/// Right-hand sides of the interface conditions.
#[derive(Clone, Debug)]
pub struct InterfaceRhs {
    /// `G_1 .. G_{N-1}`.
    pub g_tangential: Vec<LineField>,
    pub g_n: LineField,
    pub g_n1: LineField,
    /// `K_1 .. K_{N-1}`.
    pub k_slip: Vec<LineField>,
    pub g_theta: LineField,
    pub g_h: LineField,
    /// Phase flux from the elimination formula.
    pub j: LineField,
    /// `[[1/rho]]` used in `j`.
    pub inverse_density_jump: LineField,
    pub terms: Vec<LineTerm>,
}

/// Every nonlinear right-hand side at one iterate.
#[derive(Clone, Debug)]
pub struct RhsBundle {
    pub body: BodyRhs,
    pub interface: InterfaceRhs,
}

impl RhsBundle {
    pub fn is_finite(&self) -> bool {
        let b = &self.body;
        let i = &self.interface;
        b.f_plus.iter().chain(&b.f_minus).chain(&b.ff_minus).all(StripField::is_finite)
            && [&b.f_theta_plus, &b.f_theta_minus, &b.f_div].iter().all(|f| f.is_finite())
            && i.g_tangential.iter().chain(&i.k_slip).all(LineField::is_finite)
            && [&i.g_n, &i.g_n1, &i.g_theta, &i.g_h, &i.j].iter().all(|f| f.is_finite())
    }

    /// Largest absolute value over every component.
    pub fn max_abs(&self) -> f64 {
        let b = &self.body;
        let i = &self.interface;
        let strips = b
            .f_plus
            .iter()
            .chain(&b.f_minus)
            .chain(&b.ff_minus)
            .chain([&b.f_theta_plus, &b.f_theta_minus, &b.f_div])
            .map(StripField::max_abs);
        let lines = i
            .g_tangential
            .iter()
            .chain(&i.k_slip)
            .chain([&i.g_n, &i.g_n1, &i.g_theta, &i.g_h, &i.j])
            .map(LineField::max_abs);
        strips.chain(lines).fold(0.0, f64::max)
    }

    /// Data of the Stokes problem; the normal-stress rows receive the split tractions.
    pub fn stokes_fields(&self, m: &MaterialSystem) -> StokesFields {
        let i = &self.interface;
        let (rm, rp) = (m.rho_star_minus, m.rho_star_plus);
        let mut g = i.g_tangential.clone();
        // Rows carry T -/+ sigma_-/+ Lap'H, so split with zero curvature.
        let split: Vec<(f64, f64)> =
            i.g_n.data.iter().zip(&i.g_n1.data).map(|(&a, &b)| traction_split(rm, rp, 0.0, a, b, 0.0)).collect();
        g.push(LineField { data: split.iter().map(|s| s.1).collect() });
        g.push(LineField { data: split.iter().map(|s| s.0).collect() });
        StokesFields {
            f_plus: self.body.f_plus.clone(),
            f_minus: self.body.f_minus.clone(),
            f_div: self.body.f_div.clone(),
            g,
            h: i.k_slip.clone(),
            d: i.g_h.clone(),
        }
    }

    /// Writes per-term CSV files `rhs_plus.csv`, `rhs_minus.csv` and `rhs_interface.csv`.
    pub fn write_csv(&self, grid: &Grid, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for side in [Side::Plus, Side::Minus] {
            let terms: Vec<&StripTerm> =
                self.body.terms.iter().filter(|t| t.values.first().map(|v| v.side) == Some(side)).collect();
            let mut header = coordinate_header(grid);
            for t in &terms {
                for c in 0..t.values.len() {
                    write!(header, ",{}[{c}]:{}", t.target.label(), t.name).ok();
                }
            }
            let mut out = header + "\n";
            for j in 0..grid.n_rows {
                for i in 0..grid.n_tan {
                    let p = j * grid.n_tan + i;
                    out.push_str(&coordinate_cells(grid, i, grid.x_nrm(side, j)));
                    for t in &terms {
                        for v in &t.values {
                            write!(out, ",{:.17e}", v.data[p]).ok();
                        }
                    }
                    out.push('\n');
                }
            }
            std::fs::write(dir.join(format!("rhs_{}.csv", side_name(side))), out)?;
        }
        let mut out = coordinate_header(grid);
        for t in &self.interface.terms {
            for c in 0..t.values.len() {
                write!(out, ",{}[{c}]:{}", t.target.label(), t.name).ok();
            }
        }
        out.push_str(",j\n");
        for i in 0..grid.n_tan {
            out.push_str(&coordinate_cells(grid, i, 0.0));
            for t in &self.interface.terms {
                for v in &t.values {
                    write!(out, ",{:.17e}", v.data[i]).ok();
                }
            }
            writeln!(out, ",{:.17e}", self.interface.j.data[i]).ok();
        }
        std::fs::write(dir.join("rhs_interface.csv"), out)?;
        Ok(())
    }
}

fn side_name(side: Side) -> &'static str {
    match side {
        Side::Plus => "plus",
        Side::Minus => "minus",
    }
}

fn coordinate_header(grid: &Grid) -> String {
    let mut s = String::new();
    for a in 0..grid.n_tan_dirs() {
        write!(s, "x{},", a + 1).ok();
    }
    write!(s, "x{}", grid.dim).ok();
    s
}

fn coordinate_cells(grid: &Grid, i: usize, x_n: f64) -> String {
    let x = grid.tan_coords(i);
    let mut s = String::new();
    for c in x.iter().take(grid.n_tan_dirs()) {
        write!(s, "{c:.17e},").ok();
    }
    write!(s, "{x_n:.17e}").ok();
    s
}

// ---- assembly -------------------------------------------------------------

/// Evaluates the right-hand sides for a fixed material and set of switches.
#[derive(Clone, Copy, Debug)]
pub struct RhsAssembler<'a> {
    pub grid: &'a Grid,
    pub material: &'a MaterialSystem,
    pub options: RhsOptions,
}

impl<'a> RhsAssembler<'a> {
    pub fn new(grid: &'a Grid, material: &'a MaterialSystem, options: RhsOptions) -> Self {
        Self { grid, material, options }
    }

    fn phases(&self, state: &State, geometry: &ExtendedHeight) -> Result<(Phase, Phase)> {
        state.validate(self.grid)?;
        geometry.transform_gate()?;
        Ok((
            Phase::new(self.grid, self.material, geometry, state, Side::Plus),
            Phase::new(self.grid, self.material, geometry, state, Side::Minus),
        ))
    }

    /// Full bundle at one iterate; `rates` are the backward time differences.
    pub fn assemble(&self, state: &State, geometry: &ExtendedHeight, rates: &Rates) -> Result<RhsBundle> {
        let (plus, minus) = self.phases(state, geometry)?;
        Ok(RhsBundle {
            body: self.body(state, geometry, rates, &plus, &minus),
            interface: self.interface(state, geometry, &plus, &minus)?,
        })
    }

    /// `F_+`, `F_theta+`, `F_-`, `F_theta-`, `f_-` and `ff_-`.
    pub fn assemble_body_rhs(&self, state: &State, geometry: &ExtendedHeight, rates: &Rates) -> Result<BodyRhs> {
        let (plus, minus) = self.phases(state, geometry)?;
        Ok(self.body(state, geometry, rates, &plus, &minus))
    }

    /// `G_1 .. G_{N+1}`, `K_i`, `G_theta`, `G_h` and the phase flux.
    pub fn assemble_interface_rhs(&self, state: &State, geometry: &ExtendedHeight) -> Result<InterfaceRhs> {
        let (plus, minus) = self.phases(state, geometry)?;
        self.interface(state, geometry, &plus, &minus)
    }

    /// Phase flux on the interface from the elimination formula.
    pub fn phase_flux(&self, state: &State, geometry: &ExtendedHeight) -> Result<LineField> {
        Ok(self.assemble_interface_rhs(state, geometry)?.j)
    }

    fn body(&self, state: &State, geometry: &ExtendedHeight, rates: &Rates, plus: &Phase, minus: &Phase) -> BodyRhs {
        let grid = self.grid;
        let mut terms = self.momentum_plus(state, rates, plus);
        terms.extend(self.heat(state, rates, plus));
        terms.extend(self.momentum_minus(state, rates, minus));
        terms.extend(self.heat(state, rates, minus));
        let n = grid.dim;
        let div = geometry.divergence_transforms(grid, &state.u_minus);
        BodyRhs {
            f_plus: sum_strip_terms(grid, Side::Plus, &terms, Target::FPlus, n),
            f_theta_plus: sum_strip_terms(grid, Side::Plus, &terms, Target::FThetaPlus, 1).remove(0),
            f_minus: sum_strip_terms(grid, Side::Minus, &terms, Target::FMinus, n),
            f_theta_minus: sum_strip_terms(grid, Side::Minus, &terms, Target::FThetaMinus, 1).remove(0),
            f_div: div.f_minus,
            ff_minus: div.ff_minus,
            terms,
        }
    }

    fn momentum_plus(&self, state: &State, rates: &Rates, ph: &Phase) -> Vec<StripTerm> {
        let grid = self.grid;
        let n = grid.dim;
        let u = &state.u_plus;
        let term = |name, values| StripTerm { target: Target::FPlus, name, values };
        let rho_tilde = ph.rho.map(|r| r - ph.rho_star);
        let mu_tilde = ph.mu_tilde();
        let rho_dt = (0..n).map(|i| -&(&rho_tilde * &rates.u_plus[i])).collect();
        let convective = (0..n).map(|i| &ph.rho * &ph.convective(grid, u, &u[i])).collect();
        let tilde_strain: Vec<Vec<StripField>> = (0..n)
            .map(|i| (0..n).map(|a| &(&mu_tilde * &ph.strain[i][a]) + &(&ph.mu * &ph.vd[i][a])).collect())
            .collect();
        let full_strain: Vec<Vec<StripField>> =
            (0..n).map(|i| (0..n).map(|a| &ph.mu * &ph.frak(i, a)).collect()).collect();
        let lm_tilde = pointwise(Side::Plus, ph.len(), |p| {
            (ph.lambda.data[p] - ph.lambda_star) - (ph.mu.data[p] - ph.mu_star)
        });
        let lm_hat = &ph.lambda - &ph.mu;
        let bulk = &(&lm_tilde * &ph.div) + &(&lm_hat * &ph.v_div);
        let bulk_full = &lm_hat * &(&ph.div + &ph.v_div);
        let bulk_full_dn = grid.d_nrm(&bulk_full);
        let p_grad = ph.pullback_gradient(&grid.gradient(&ph.pressure));
        vec![
            term("rho_tilde_dt", rho_dt),
            term("convective", convective),
            term("div_tilde_strain", ph.tensor_div(grid, &tilde_strain)),
            term("vdiv_strain", ph.tensor_v_div(grid, &full_strain)),
            term("grad_bulk", (0..n).map(|i| grid.d(&bulk, i)).collect()),
            term("vdiv_bulk", (0..n).map(|i| -&(&ph.k[i + 1] * &bulk_full_dn)).collect()),
            term("pressure", p_grad.iter().map(|g| -g).collect()),
        ]
    }

    fn momentum_minus(&self, state: &State, rates: &Rates, ph: &Phase) -> Vec<StripTerm> {
        let grid = self.grid;
        let n = grid.dim;
        let u = &state.u_minus;
        let term = |name, values| StripTerm { target: Target::FMinus, name, values };
        // (I + Q_1) v = v + H_i v_N.
        let lift = |v: Vec<StripField>| -> Vec<StripField> {
            (0..n).map(|i| &v[i] + &(&ph.dh[i] * &v[n - 1])).collect()
        };
        // Linear operator rho* d_t u - mu* Div D(u) in its normal component only.
        let div_d_last = {
            let i = n - 1;
            let mut lap = grid.zeros(Side::Minus);
            let mut grad_div = grid.zeros(Side::Minus);
            for a in 0..n {
                lap.add_scaled(1.0, &second_derivative(grid, &u[i], a, a));
                grad_div.add_scaled(1.0, &second_derivative(grid, &u[a], i, a));
            }
            (&lap + &grad_div).scale(0.5)
        };
        let linear_last = &rates.u_minus[n - 1].scale(ph.rho_star) - &div_d_last.scale(ph.mu_star);
        let q1_linear = (0..n).map(|i| -&(&ph.dh[i] * &linear_last)).collect();
        let mu_tilde = ph.mu_tilde();
        let convective = (0..n).map(|i| ph.convective(grid, u, &u[i]).scale(ph.rho_star)).collect();
        let tilde_strain: Vec<Vec<StripField>> = (0..n)
            .map(|i| (0..n).map(|a| &(&mu_tilde * &ph.strain[i][a]) + &(&ph.mu * &ph.vd[i][a])).collect())
            .collect();
        let full_strain: Vec<Vec<StripField>> =
            (0..n).map(|i| (0..n).map(|a| &ph.mu * &ph.frak(i, a)).collect()).collect();
        vec![
            term("q1_linear", q1_linear),
            term("convective", lift(convective)),
            term("div_tilde_strain", lift(ph.tensor_div(grid, &tilde_strain))),
            term("vdiv_strain", lift(ph.tensor_v_div(grid, &full_strain))),
        ]
    }

    fn heat(&self, state: &State, rates: &Rates, ph: &Phase) -> Vec<StripTerm> {
        let grid = self.grid;
        let side = ph.side;
        let theta = state.theta(side);
        let u = state.u(side);
        let target = if side == Side::Plus { Target::FThetaPlus } else { Target::FThetaMinus };
        let term = |name, v: StripField| StripTerm { target, name, values: vec![v] };
        let dt = rates.theta(side);
        let (capacity_dt, capacity) = match side {
            Side::Plus => (
                pointwise(side, ph.len(), |p| {
                    -(ph.rho.data[p] * ph.kappa.data[p] - ph.rho_star * ph.kappa_star) * dt.data[p]
                }),
                &ph.rho * &ph.kappa,
            ),
            Side::Minus => (
                pointwise(side, ph.len(), |p| -ph.rho_star * (ph.kappa.data[p] - ph.kappa_star) * dt.data[p]),
                ph.kappa.scale(ph.rho_star),
            ),
        };
        let [star, tilde, chain] = ph.conduction(grid);
        let mut out = vec![
            term("capacity_dt", capacity_dt),
            term("convective", &capacity * &ph.convective(grid, u, theta)),
            term("conduction_star", star),
            term("conduction_tilde", tilde),
            term("conduction_chain", chain),
        ];
        match side {
            Side::Plus => {
                let full_div = &ph.div + &ph.v_div;
                let mut diss = ph.shear_dissipation();
                diss.add_scaled(1.0, &(&(&ph.lambda - &ph.mu) * &(&full_div * &full_div)));
                out.push(term("dissipation", diss));
                let work = match self.options.heat_source {
                    HeatSource::FTheta => pointwise(side, ph.len(), |p| {
                        ph.pressure.data[p] * (1.0 - 1.0 / ph.rho.data[p]) * full_div.data[p]
                    }),
                    HeatSource::Eq1 => {
                        pointwise(side, ph.len(), |p| -ph.pressure.data[p] / ph.rho.data[p] * full_div.data[p])
                    }
                };
                out.push(term("pressure_work", work));
            }
            Side::Minus => out.push(term("dissipation", ph.shear_dissipation())),
        }
        out
    }

    fn interface(&self, state: &State, geometry: &ExtendedHeight, plus: &Phase, minus: &Phase) -> Result<InterfaceRhs> {
        let grid = self.grid;
        let m = self.material;
        let n = grid.dim;
        let t = n - 1;
        let len = grid.n_tan;
        let opts = self.options;
        let tr = |f: &StripField| grid.trace(f);
        let gh: Vec<LineField> = geometry.grad_h(grid);
        let hess: Vec<Vec<LineField>> =
            (0..t).map(|a| (0..t).map(|b| grid.line_d_tan2(&state.h, a, b)).collect()).collect();
        let lap_h = grid.line_laplacian(&state.h);
        let w = geometry.area_factor(grid);
        let (_, curvature) = normal_and_curvature(grid, &state.h, opts.curvature);

        let sides = [minus, plus];
        // Traces per side: index 0 is the lower phase.
        let mu: Vec<LineField> = sides.iter().map(|p| tr(&p.mu)).collect();
        let mu_t: Vec<LineField> = sides.iter().map(|p| tr(&p.mu_tilde())).collect();
        let frak: Vec<Vec<Vec<LineField>>> =
            sides.iter().map(|p| (0..n).map(|i| (0..n).map(|a| tr(&p.frak(i, a))).collect()).collect()).collect();
        let strain: Vec<Vec<Vec<LineField>>> =
            sides.iter().map(|p| (0..n).map(|i| (0..n).map(|a| tr(&p.strain[i][a])).collect()).collect()).collect();
        let vd: Vec<Vec<Vec<LineField>>> =
            sides.iter().map(|p| (0..n).map(|i| (0..n).map(|a| tr(&p.vd[i][a])).collect()).collect()).collect();
        let k: Vec<Vec<LineField>> = sides.iter().map(|p| p.k.iter().map(tr).collect()).collect();
        let u: Vec<Vec<LineField>> = [&state.u_minus, &state.u_plus].iter().map(|v| v.iter().map(tr).collect()).collect();
        let theta: Vec<LineField> = [&state.theta_minus, &state.theta_plus].iter().map(|f| tr(f)).collect();
        let theta_grad: Vec<Vec<LineField>> = sides.iter().map(|p| p.theta_grad.iter().map(tr).collect()).collect();
        let d_hat: Vec<LineField> = sides.iter().map(|p| tr(&p.d)).collect();
        let d_star = [minus.d_star, plus.d_star];
        let div_p = tr(&plus.div);
        let vdiv_p = tr(&plus.v_div);
        let lam_p = tr(&plus.lambda);
        let p_hat = tr(&plus.pressure);
        let rho_p = tr(&plus.rho);
        let (rm, rp) = (m.rho_star_minus, m.rho_star_plus);
        let p_star = m.starred.pressure;
        let (lam_star, mu_star_p, mu_star_m) = (m.starred.lambda_plus, m.starred.mu_plus, m.starred.mu_minus);

        let inv_jump = line(len, |p| inverse_density_jump(rm, rp, rho_p.data[p], opts.j_denominator));
        for p in 0..len {
            let margin = inv_jump.data[p].abs().min((rm - rho_p.data[p]).abs());
            if !(margin >= opts.delta_j) {
                return Err(Error::Gate(format!(
                    "phase-flux denominator margin {margin:.3e} < {:.1e} at interface point {p}",
                    opts.delta_j
                )));
            }
        }
        let du_n = line(len, |p| u[0][t].data[p] - u[1][t].data[p]);
        let j = line(len, |p| phase_flux_eliminated(u[0][t].data[p], u[1][t].data[p], w.data[p], inv_jump.data[p]));
        // j^2 [[1/rho]] = du_n^2 W^2 / [[1/rho]].
        let j2_jump = line(len, |p| du_n.data[p].powi(2) * w.data[p].powi(2) / inv_jump.data[p]);
        let slope = |p: usize| -> f64 { gh.iter().map(|g| g.data[p] * g.data[p]).sum() };
        // [[mu_hat (D + V_D)_{ia}]].
        let jump_frak = |i: usize, a: usize, p: usize| {
            mu[0].data[p] * frak[0][i][a].data[p] - mu[1].data[p] * frak[1][i][a].data[p]
        };
        let jump_tilde = |i: usize, a: usize, p: usize| {
            let s = |x: usize| mu_t[x].data[p] * strain[x][i][a].data[p] + mu[x].data[p] * vd[x][i][a].data[p];
            s(0) - s(1)
        };

        let mut terms = Vec::new();
        let printed = opts.interface_form == InterfaceForm::Printed;

        // Tangential stress.
        {
            let target = Target::GTangential;
            let tilde = (0..t).map(|i| line(len, |p| -jump_tilde(i, n - 1, p))).collect();
            let tangential = (0..t)
                .map(|i| line(len, |p| (0..t).map(|b| gh[b].data[p] * jump_frak(i, b, p)).sum()))
                .collect();
            let (normal_shear, normal_strain): (Vec<LineField>, Vec<LineField>) = if printed {
                (
                    (0..t)
                        .map(|i| {
                            line(len, |p| -gh[i].data[p] * (0..t).map(|b| gh[b].data[p] * jump_frak(i, b, p)).sum::<f64>())
                        })
                        .collect(),
                    (0..t).map(|i| line(len, |p| gh[i].data[p] * jump_frak(n - 1, n - 1, p))).collect(),
                )
            } else {
                (
                    (0..t)
                        .map(|i| {
                            line(len, |p| gh[i].data[p] * (0..t).map(|b| gh[b].data[p] * jump_frak(n - 1, b, p)).sum::<f64>())
                        })
                        .collect(),
                    (0..t).map(|i| line(len, |p| -gh[i].data[p] * jump_frak(n - 1, n - 1, p))).collect(),
                )
            };
            terms.push(LineTerm { target, name: "tilde_shear", values: tilde });
            terms.push(LineTerm { target, name: "tangential_strain", values: tangential });
            terms.push(LineTerm { target, name: "normal_shear", values: normal_shear });
            terms.push(LineTerm { target, name: "normal_strain", values: normal_strain });
        }

        // Normal stress.
        {
            let target = Target::GNormal;
            let sign_plus = if printed { -1.0 } else { 1.0 };
            let tilde_normal = line(len, |p| {
                let s = |x: usize| mu_t[x].data[p] * strain[x][n - 1][n - 1].data[p] + mu[x].data[p] * vd[x][n - 1][n - 1].data[p];
                -s(0) + sign_plus * s(1)
            });
            let bulk = line(len, |p| {
                let lm_tilde = (lam_p.data[p] - lam_star) - (mu[1].data[p] - mu_star_p);
                lm_tilde * div_p.data[p] + (lam_p.data[p] - mu[1].data[p]) * vdiv_p.data[p]
            });
            let pressure = line(len, |p| -(p_hat.data[p] - p_star));
            let shear = line(len, |p| (0..t).map(|b| gh[b].data[p] * jump_frak(n - 1, b, p)).sum());
            let curv = if printed {
                line(len, |p| {
                    let wp = w.data[p];
                    let mut s = 0.0;
                    for a in 0..t {
                        for b in 0..t {
                            s += gh[a].data[p] * hess[a][b].data[p];
                        }
                    }
                    m.sigma * ((1.0 - 1.0 / wp) * lap_h.data[p] - s / wp.powi(3))
                })
            } else {
                line(len, |p| m.sigma * (curvature.data[p] - lap_h.data[p]))
            };
            for (name, v) in [
                ("tilde_normal", tilde_normal),
                ("bulk", bulk),
                ("pressure", pressure),
                ("shear", shear),
                ("curvature", curv),
                ("phase_flux", j2_jump.clone()),
            ] {
                terms.push(LineTerm { target, name, values: vec![v] });
            }
        }

        // Gibbs-Thomson.
        {
            let target = Target::GGibbs;
            let psi_jump = line(len, |p| {
                m.psi_minus.eval(0.0, theta[0].data[p]) - m.psi_plus.eval(rho_p.data[p], theta[1].data[p])
            });
            // A = sum_kl H_k H_l mu F_kl - 2 sum_k H_k mu F_kN + mu F_NN, F = D + V_D.
            let a_side = |x: usize, p: usize| {
                let f = &frak[x];
                let mut s = f[n - 1][n - 1].data[p];
                for a in 0..t {
                    s -= 2.0 * gh[a].data[p] * f[a][n - 1].data[p];
                    for b in 0..t {
                        s += gh[a].data[p] * gh[b].data[p] * f[a][b].data[p];
                    }
                }
                mu[x].data[p] * s
            };
            let kinetic_factor = |p: usize| 0.5 * (1.0 / rm + 1.0 / rho_p.data[p]) / inv_jump.data[p];
            let upper_traction = |p: usize| {
                mu_star_p * strain[1][n - 1][n - 1].data[p] + (lam_star - mu_star_p) * div_p.data[p]
            };
            let named: Vec<(&'static str, LineField)> = if printed {
                let jump_frak_rho = |a: usize, b: usize, p: usize| {
                    mu[0].data[p] * frak[0][a][b].data[p] / rm - mu[1].data[p] * frak[1][a][b].data[p] / rho_p.data[p]
                };
                vec![
                    (
                        "pressure",
                        line(len, |p| {
                            -(p_hat.data[p] - p_star) / rm - (1.0 / rho_p.data[p] - 1.0 / rp) * p_hat.data[p]
                        }),
                    ),
                    (
                        "free_energy",
                        line(len, |p| {
                            (m.psi_minus.eval(0.0, theta[0].data[p]) - m.psi_minus.eval(0.0, m.theta_star))
                                - (m.psi_plus.eval(rho_p.data[p], theta[1].data[p]) - m.psi_plus.eval(rp, m.theta_star))
                        }),
                    ),
                    ("free_energy_slope", line(len, |p| psi_jump.data[p] * slope(p))),
                    ("kinetic", line(len, |p| kinetic_factor(p) * du_n.data[p].powi(2) * w.data[p].powi(4))),
                    (
                        "tilde_normal",
                        line(len, |p| {
                            -(mu_t[0].data[p] * strain[0][n - 1][n - 1].data[p] / rm
                                - (mu_t[1].data[p] * strain[1][n - 1][n - 1].data[p]
                                    + ((lam_p.data[p] - lam_star) - mu_t[1].data[p]) * div_p.data[p])
                                    / rp)
                        }),
                    ),
                    (
                        "density_viscous",
                        line(len, |p| {
                            (1.0 / rho_p.data[p] - 1.0 / rp)
                                * (mu[1].data[p] * frak[1][n - 1][n - 1].data[p]
                                    + (lam_p.data[p] - mu[1].data[p]) * (div_p.data[p] + vdiv_p.data[p]))
                        }),
                    ),
                    (
                        "tangential_strain",
                        line(len, |p| {
                            let mut s = 0.0;
                            for a in 0..t {
                                for b in 0..t {
                                    s -= jump_frak_rho(a, b, p) * gh[a].data[p] * gh[b].data[p];
                                }
                            }
                            s
                        }),
                    ),
                    (
                        "shear",
                        line(len, |p| 2.0 * (0..t).map(|a| jump_frak_rho(a, n - 1, p) * gh[a].data[p]).sum::<f64>()),
                    ),
                    (
                        "slope_block",
                        line(len, |p| {
                            let wp = w.data[p];
                            let mut s = 0.0;
                            for a in 0..t {
                                for b in 0..t {
                                    s += gh[a].data[p] * hess[a][b].data[p];
                                }
                            }
                            let curv = m.sigma * (lap_h.data[p] / wp - s / wp.powi(3));
                            let shear: f64 = (0..t).map(|a| jump_frak(a, n - 1, p) * gh[a].data[p]).sum();
                            -slope(p) * (curv + j2_jump.data[p] + shear - jump_frak(n - 1, n - 1, p))
                        }),
                    ),
                ]
            } else {
                vec![
                    ("viscous_minus", line(len, |p| mu_star_m * strain[0][n - 1][n - 1].data[p] / rm)),
                    ("pressure", line(len, |p| p_star / rm - p_hat.data[p] / rho_p.data[p])),
                    (
                        "bulk",
                        line(len, |p| {
                            (lam_p.data[p] - mu[1].data[p]) * (div_p.data[p] + vdiv_p.data[p]) / rho_p.data[p]
                        }),
                    ),
                    ("free_energy", psi_jump.clone()),
                    (
                        "normal_strain",
                        line(len, |p| -(a_side(0, p) / rm - a_side(1, p) / rho_p.data[p]) / w.data[p].powi(2)),
                    ),
                    (
                        "kinetic",
                        line(len, |p| {
                            let jj = j.data[p];
                            0.5 * jj * jj * (1.0 / (rm * rm) - 1.0 / rho_p.data[p].powi(2))
                        }),
                    ),
                    ("upper_traction", line(len, |p| -upper_traction(p) / rp)),
                ]
            };
            for (name, v) in named {
                terms.push(LineTerm { target, name, values: vec![v] });
            }
        }

        // Stefan law.
        {
            let target = Target::GTheta;
            let eta_theta = line(len, |p| {
                theta[0].data[p] * m.eta_minus.eval(0.0, theta[0].data[p])
                    - theta[1].data[p] * m.eta_plus.eval(rho_p.data[p], theta[1].data[p])
            });
            let latent = line(len, |p| w.data[p].powi(2) * du_n.data[p] / inv_jump.data[p] * eta_theta.data[p]);
            // K . (-grad'H, 1) per side.
            let k_dot = |x: usize, p: usize| k[x][n].data[p] - (0..t).map(|a| k[x][a + 1].data[p] * gh[a].data[p]).sum::<f64>();
            let tilde = line(len, |p| {
                let flux = |x: usize| {
                    let dt = d_hat[x].data[p] - d_star[x];
                    let dn = theta_grad[x][n - 1].data[p];
                    let mut s = dt * (dn - k[x][n].data[p] * dn);
                    for a in 0..t {
                        s -= gh[a].data[p] * dt * (theta_grad[x][a].data[p] - k[x][a + 1].data[p] * dn);
                    }
                    s
                };
                -(flux(0) - flux(1))
            });
            let tangential = line(len, |p| {
                (0..t)
                    .map(|a| (d_star[0] * theta_grad[0][a].data[p] - d_star[1] * theta_grad[1][a].data[p]) * gh[a].data[p])
                    .sum()
            });
            let normal = line(len, |p| {
                d_star[0] * theta_grad[0][n - 1].data[p] * k_dot(0, p) - d_star[1] * theta_grad[1][n - 1].data[p] * k_dot(1, p)
            });
            for (name, v) in [("latent", latent), ("tilde_flux", tilde), ("tangential_flux", tangential), ("normal_flux", normal)] {
                terms.push(LineTerm { target, name, values: vec![v] });
            }
        }

        // Kinematic condition.
        {
            let target = Target::GH;
            let parts: Vec<[f64; 3]> = (0..len)
                .map(|p| {
                    let dot = |x: usize| (0..t).map(|a| gh[a].data[p] * u[x][a].data[p]).sum::<f64>();
                    kinematic_terms(rm, rp, rho_p.data[p], u[0][t].data[p], u[1][t].data[p], dot(0), dot(1))
                })
                .collect();
            for (c, name) in ["density_ratio", "upper_flux", "tangential"].into_iter().enumerate() {
                terms.push(LineTerm { target, name, values: vec![line(len, |p| parts[p][c])] });
            }
        }

        let k_slip = (0..t).map(|i| line(len, |p| -gh[i].data[p] * du_n.data[p])).collect();
        Ok(InterfaceRhs {
            g_tangential: sum_line_terms(grid, &terms, Target::GTangential, t),
            g_n: sum_line_terms(grid, &terms, Target::GNormal, 1).remove(0),
            g_n1: sum_line_terms(grid, &terms, Target::GGibbs, 1).remove(0),
            k_slip,
            g_theta: sum_line_terms(grid, &terms, Target::GTheta, 1).remove(0),
            g_h: sum_line_terms(grid, &terms, Target::GH, 1).remove(0),
            j,
            inverse_density_jump: inv_jump,
            terms,
        })
    }

    /// Residuals of the six compatibility conditions for initial data.
    pub fn compatibility_residual(&self, state: &State) -> Result<CompatibilityReport> {
        let grid = self.grid;
        let m = self.material;
        let n = grid.dim;
        let t = n - 1;
        let geometry = ExtendedHeight::new(grid, &state.h, None)?;
        let ig = self.assemble_interface_rhs(state, &geometry)?;
        let tr = |f: &StripField| grid.trace(f);
        let dn_tr = |f: &StripField| grid.trace(&grid.d_nrm(f));
        let div = geometry.divergence_transforms(grid, &state.u_minus);
        let mut entries = Vec::new();
        let mut push_strip = |name: String, f: StripField| -> Result<()> {
            entries.push(CompatibilityEntry {
                name,
                sup: f.max_abs(),
                trace_norm: grid.norm(&f, NormKind::Lq(2.0))?,
            });
            Ok(())
        };
        push_strip("divergence".into(), &div.div_hat - &div.f_minus)?;
        let mut div_ff = grid.zeros(Side::Minus);
        for (a, c) in div.ff_minus.iter().enumerate() {
            div_ff.add_scaled(1.0, &grid.d(c, a));
        }
        push_strip("divergence_conservative".into(), &div.div_hat - &div_ff)?;

        let mut lines: Vec<(String, LineField)> = Vec::new();
        let strain_in = |u: &[StripField], i: usize| -> LineField {
            (&dn_tr(&u[i]) + &tr(&grid.d_tan(&u[n - 1], i))).scale(0.5)
        };
        for i in 0..t {
            let lhs = &strain_in(&state.u_minus, i).scale(m.starred.mu_minus)
                - &strain_in(&state.u_plus, i).scale(m.starred.mu_plus);
            lines.push((format!("tangential_stress_{}", i + 1), &lhs - &ig.g_tangential[i]));
        }
        for i in 0..t {
            let lhs = &tr(&state.u_minus[i]) - &tr(&state.u_plus[i]);
            lines.push((format!("slip_{}", i + 1), &lhs - &ig.k_slip[i]));
        }
        lines.push(("temperature".into(), &tr(&state.theta_minus) - &tr(&state.theta_plus)));
        let flux = &dn_tr(&state.theta_minus).scale(m.starred.d_minus) - &dn_tr(&state.theta_plus).scale(m.starred.d_plus);
        lines.push(("heat_flux".into(), &flux - &ig.g_theta));
        let mut div_p = dn_tr(&state.u_plus[n - 1]);
        for a in 0..t {
            div_p = &div_p + &tr(&grid.d_tan(&state.u_plus[a], a));
        }
        let t_plus = &dn_tr(&state.u_plus[n - 1]).scale(m.starred.mu_plus)
            + &div_p.scale(m.starred.lambda_plus - m.starred.mu_plus);
        let lap = grid.line_laplacian(&state.h);
        let target = LineField {
            data: (0..grid.n_tan)
                .map(|p| {
                    traction_split(m.rho_star_minus, m.rho_star_plus, m.sigma, ig.g_n.data[p], ig.g_n1.data[p], lap.data[p]).0
                })
                .collect(),
        };
        lines.push(("normal_stress".into(), &t_plus - &target));
        for (name, f) in lines {
            entries.push(CompatibilityEntry {
                name,
                sup: f.max_abs(),
                trace_norm: grid.line_norm(&f, NormKind::Fractional { s: 1.0 - 1.0 / TRACE_Q, q: TRACE_Q })?,
            });
        }
        Ok(CompatibilityReport { entries })
    }
}

/// Residual of one compatibility condition.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompatibilityEntry {
    pub name: String,
    pub sup: f64,
    /// Trace-space proxy norm for interface conditions, L2 for the divergence.
    pub trace_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompatibilityReport {
    pub entries: Vec<CompatibilityEntry>,
}

impl CompatibilityReport {
    pub fn max_sup(&self) -> f64 {
        self.entries.iter().map(|e| e.sup).fold(0.0, f64::max)
    }

    pub fn get(&self, name: &str) -> Option<&CompatibilityEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// The first condition whose sup residual exceeds `tol`.
    pub fn worst_violation(&self, tol: f64) -> Option<&CompatibilityEntry> {
        self.entries
            .iter()
            .filter(|e| !(e.sup <= tol))
            .max_by(|a, b| a.sup.partial_cmp(&b.sup).unwrap_or(std::cmp::Ordering::Equal))
    }
}


#[cfg(test)]
mod tests;
