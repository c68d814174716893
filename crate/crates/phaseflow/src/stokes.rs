//! Stokes-type interface problem, discretized per tangential mode.
//!
//! Unknown layout of one mode: `[H, block_0, ..., block_M]` where block `j`
//! holds `u_+(j)` (N components), `u_-(j)` (N components) and the lower
//! pressure at the half node `j + 1/2`. The last pressure slot is a dummy
//! unknown fixed to zero. Rows are placed in the slot of the unknown they
//! mostly determine:
//!
//! * `H`: kinematic condition;
//! * block 0: tangential stress and upper normal stress (upper slots), slip
//!   and lower normal stress (lower slots), divergence at `1/2`;
//! * interior blocks: momentum on both sides and divergence at `j + 1/2`;
//! * block M: homogeneous Dirichlet velocity.
//!
//! The upper stress is `mu D + (lambda - mu) div u I` and the lower one
//! `mu D`, with `D = (grad u + grad u^T) / 2`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::banded::{BandLu, BandMatrix};
use crate::constitutive::{MaterialSystem, Side};
use crate::error::{Error, Result};
use crate::grid::{Grid, LineField, SpectralField, StripField};
use crate::modal::{factor_checked, ModeReport, SolveReport};

type C = Complex64;
const ZERO: C = C::new(0.0, 0.0);

/// Frozen coefficients of the Stokes problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StokesParams {
    pub rho_plus: f64,
    pub rho_minus: f64,
    pub mu_plus: f64,
    pub mu_minus: f64,
    /// Second viscosity of the upper phase.
    pub lambda_plus: f64,
    pub sigma: f64,
}

impl StokesParams {
    pub fn from_material(m: &MaterialSystem) -> Self {
        Self {
            rho_plus: m.rho_star_plus,
            rho_minus: m.rho_star_minus,
            mu_plus: m.starred.mu_plus,
            mu_minus: m.starred.mu_minus,
            lambda_plus: m.starred.lambda_plus,
            sigma: m.sigma,
        }
    }

    pub fn density_gap(&self) -> f64 {
        self.rho_minus - self.rho_plus
    }

    pub fn rho(&self, side: Side) -> f64 {
        match side {
            Side::Plus => self.rho_plus,
            Side::Minus => self.rho_minus,
        }
    }

    /// Surface tension share `rho_side sigma / (rho_- - rho_+)`.
    pub fn sigma_side(&self, side: Side) -> f64 {
        self.rho(side) * self.sigma / self.density_gap()
    }
}

/// Equation family of a matrix row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum StokesRow {
    Kinematic,
    TangentialStress,
    NormalStressMinus,
    NormalStressPlus,
    Slip,
    Divergence,
    MomentumPlus,
    MomentumMinus,
    Boundary,
}

impl StokesRow {
    pub const ALL: [StokesRow; 9] = [
        StokesRow::Kinematic,
        StokesRow::TangentialStress,
        StokesRow::NormalStressMinus,
        StokesRow::NormalStressPlus,
        StokesRow::Slip,
        StokesRow::Divergence,
        StokesRow::MomentumPlus,
        StokesRow::MomentumMinus,
        StokesRow::Boundary,
    ];

    fn index(self) -> usize {
        Self::ALL.iter().position(|&r| r == self).unwrap_or(0)
    }

    pub fn label(self) -> &'static str {
        match self {
            StokesRow::Kinematic => "kinematic",
            StokesRow::TangentialStress => "tangential_stress",
            StokesRow::NormalStressMinus => "normal_stress_minus",
            StokesRow::NormalStressPlus => "normal_stress_plus",
            StokesRow::Slip => "slip",
            StokesRow::Divergence => "divergence",
            StokesRow::MomentumPlus => "momentum_plus",
            StokesRow::MomentumMinus => "momentum_minus",
            StokesRow::Boundary => "boundary",
        }
    }
}

/// Largest relative residual of each equation family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct EquationResiduals {
    pub values: [f64; 9],
}

impl EquationResiduals {
    pub fn get(&self, row: StokesRow) -> f64 {
        self.values[row.index()]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    fn absorb(&mut self, other: &EquationResiduals) {
        for (a, b) in self.values.iter_mut().zip(other.values) {
            *a = a.max(b);
        }
    }
}

/// Data of one mode: right-hand sides of every equation.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeData {
    pub f_plus: Vec<Vec<C>>,
    pub f_minus: Vec<Vec<C>>,
    pub f_div: Vec<C>,
    /// `g_1 .. g_{N+1}`.
    pub g: Vec<C>,
    /// `h_1 .. h_{N-1}`.
    pub h: Vec<C>,
    pub d: C,
}

impl ModeData {
    pub fn zeros(dim: usize, n_rows: usize) -> Self {
        Self {
            f_plus: vec![vec![ZERO; n_rows]; dim],
            f_minus: vec![vec![ZERO; n_rows]; dim],
            f_div: vec![ZERO; n_rows],
            g: vec![ZERO; dim + 1],
            h: vec![ZERO; dim - 1],
            d: ZERO,
        }
    }
}

/// Solution of one mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSolution {
    pub u_plus: Vec<Vec<C>>,
    pub u_minus: Vec<Vec<C>>,
    /// Pressure at half nodes `j + 1/2`, `j = 0..M`.
    pub pi_half: Vec<C>,
    /// Pressure interpolated to the nodes.
    pub pi: Vec<C>,
    pub h: C,
}

#[derive(Clone, Copy, Debug)]
struct Layout {
    dim: usize,
    m: usize,
}

impl Layout {
    fn block(&self) -> usize {
        2 * self.dim + 1
    }

    fn len(&self) -> usize {
        1 + (self.m + 1) * self.block()
    }

    fn u(&self, side: Side, j: usize, c: usize) -> usize {
        1 + j * self.block() + if side == Side::Plus { 0 } else { self.dim } + c
    }

    fn p(&self, j: usize) -> usize {
        1 + j * self.block() + 2 * self.dim
    }
}

/// Factored Stokes system of one tangential mode.
#[derive(Clone, Debug)]
pub struct ModeBlockSystem {
    layout: Layout,
    params: StokesParams,
    dx: f64,
    pub wave: [f64; 2],
    pub lambda: C,
    lu: BandLu,
    rows: Vec<StokesRow>,
    pub condition: f64,
}

struct Assembly {
    entries: Vec<(usize, usize, C)>,
    rows: Vec<StokesRow>,
}

impl Assembly {
    fn put(&mut self, r: usize, c: usize, v: C) {
        if v != ZERO {
            self.entries.push((r, c, v));
        }
    }

    fn tag(&mut self, r: usize, kind: StokesRow) {
        self.rows[r] = kind;
    }
}

fn re(v: f64) -> C {
    C::new(v, 0.0)
}

/// Builds the matrix and row tags of one mode.
fn assemble_matrix(
    params: &StokesParams,
    dim: usize,
    m: usize,
    dx: f64,
    wave: [f64; 2],
    wave_odd: [f64; 2],
    lambda: C,
) -> (BandMatrix, Vec<StokesRow>, Layout) {
    let lay = Layout { dim, m };
    let n = lay.len();
    let t = dim - 1;
    let mut a = Assembly { entries: Vec::with_capacity(30 * n), rows: vec![StokesRow::Boundary; n] };
    let ik = |i: usize| C::new(0.0, wave_odd[i]);
    let kk = |i: usize, l: usize| if i == l { -wave[i] * wave[i] } else { -wave_odd[i] * wave_odd[l] };
    let k2: f64 = (0..t).map(|i| wave[i] * wave[i]).sum();
    let dx2 = dx * dx;

    for side in [Side::Plus, Side::Minus] {
        let sg = side.sign();
        let rho = params.rho(side);
        let (a_lap, a_grad) = match side {
            Side::Plus => (0.5 * params.mu_plus, params.lambda_plus - 0.5 * params.mu_plus),
            Side::Minus => (0.5 * params.mu_minus, 0.5 * params.mu_minus),
        };
        let kind = if side == Side::Plus { StokesRow::MomentumPlus } else { StokesRow::MomentumMinus };
        for j in 1..m {
            for i in 0..dim {
                let r = lay.u(side, j, i);
                a.tag(r, kind);
                a.put(r, lay.u(side, j, i), lambda * rho + re(a_lap * (k2 + 2.0 / dx2)));
                a.put(r, lay.u(side, j - 1, i), re(-a_lap / dx2));
                a.put(r, lay.u(side, j + 1, i), re(-a_lap / dx2));
                if i < t {
                    for l in 0..t {
                        a.put(r, lay.u(side, j, l), re(-a_grad * kk(i, l)));
                    }
                    let c = -a_grad * ik(i) * sg / (2.0 * dx);
                    a.put(r, lay.u(side, j + 1, t), c);
                    a.put(r, lay.u(side, j - 1, t), -c);
                    if side == Side::Minus {
                        a.put(r, lay.p(j - 1), 0.5 * ik(i));
                        a.put(r, lay.p(j), 0.5 * ik(i));
                    }
                } else {
                    for l in 0..t {
                        let c = -a_grad * ik(l) * sg / (2.0 * dx);
                        a.put(r, lay.u(side, j + 1, l), c);
                        a.put(r, lay.u(side, j - 1, l), -c);
                    }
                    a.put(r, lay.u(side, j, t), re(2.0 * a_grad / dx2));
                    a.put(r, lay.u(side, j + 1, t), re(-a_grad / dx2));
                    a.put(r, lay.u(side, j - 1, t), re(-a_grad / dx2));
                    if side == Side::Minus {
                        a.put(r, lay.p(j), re(sg / dx));
                        a.put(r, lay.p(j - 1), re(-sg / dx));
                    }
                }
            }
        }
        for i in 0..dim {
            let r = lay.u(side, m, i);
            a.tag(r, StokesRow::Boundary);
            a.put(r, r, re(1.0));
        }
    }

    // Divergence at half nodes of the lower strip.
    let sg = Side::Minus.sign();
    for j in 0..m {
        let r = lay.p(j);
        a.tag(r, StokesRow::Divergence);
        for l in 0..t {
            a.put(r, lay.u(Side::Minus, j, l), 0.5 * ik(l));
            a.put(r, lay.u(Side::Minus, j + 1, l), 0.5 * ik(l));
        }
        a.put(r, lay.u(Side::Minus, j + 1, t), re(sg / dx));
        a.put(r, lay.u(Side::Minus, j, t), re(-sg / dx));
    }
    a.tag(lay.p(m), StokesRow::Boundary);
    a.put(lay.p(m), lay.p(m), re(1.0));

    // One-sided normal derivative at the interface node.
    let dn = |side: Side, c: usize, scale: C| -> [(usize, C); 3] {
        let s = side.sign() / (2.0 * dx);
        [
            (lay.u(side, 0, c), scale * (-3.0 * s)),
            (lay.u(side, 1, c), scale * (4.0 * s)),
            (lay.u(side, 2, c), scale * (-s)),
        ]
    };
    for i in 0..t {
        let r = lay.u(Side::Plus, 0, i);
        a.tag(r, StokesRow::TangentialStress);
        for (side, mu) in [(Side::Minus, params.mu_minus), (Side::Plus, -params.mu_plus)] {
            for (c, v) in dn(side, i, re(0.5 * mu)) {
                a.put(r, c, v);
            }
            a.put(r, lay.u(side, 0, t), 0.5 * mu * ik(i));
        }
        let r = lay.u(Side::Minus, 0, i);
        a.tag(r, StokesRow::Slip);
        a.put(r, lay.u(Side::Minus, 0, i), re(1.0));
        a.put(r, lay.u(Side::Plus, 0, i), re(-1.0));
    }
    let r = lay.u(Side::Plus, 0, t);
    a.tag(r, StokesRow::NormalStressPlus);
    for (c, v) in dn(Side::Plus, t, re(params.lambda_plus)) {
        a.put(r, c, v);
    }
    for l in 0..t {
        a.put(r, lay.u(Side::Plus, 0, l), (params.lambda_plus - params.mu_plus) * ik(l));
    }
    a.put(r, 0, re(params.sigma_side(Side::Plus) * k2));

    let r = lay.u(Side::Minus, 0, t);
    a.tag(r, StokesRow::NormalStressMinus);
    for (c, v) in dn(Side::Minus, t, re(params.mu_minus)) {
        a.put(r, c, v);
    }
    a.put(r, lay.p(0), re(-1.5));
    a.put(r, lay.p(1), re(0.5));
    a.put(r, 0, re(params.sigma_side(Side::Minus) * k2));

    a.tag(0, StokesRow::Kinematic);
    let gap = params.density_gap();
    a.put(0, 0, lambda);
    a.put(0, lay.u(Side::Minus, 0, t), re(-params.rho_minus / gap));
    a.put(0, lay.u(Side::Plus, 0, t), re(params.rho_plus / gap));

    (BandMatrix::from_entries(n, &a.entries), a.rows, lay)
}

impl ModeBlockSystem {
    /// Assembles and factors the block of wave vector `wave` at `lambda`.
    pub fn assemble(
        params: &StokesParams,
        dim: usize,
        m: usize,
        dx: f64,
        wave: [f64; 2],
        wave_odd: [f64; 2],
        lambda: C,
    ) -> Result<Self> {
        if params.density_gap() == 0.0 {
            return Err(Error::Model("reference densities of the two phases coincide".into()));
        }
        if m < 3 {
            return Err(Error::Config(format!("need at least 3 normal cells, got {m}")));
        }
        let (matrix, rows, layout) = assemble_matrix(params, dim, m, dx, wave, wave_odd, lambda);
        let (lu, condition) = factor_checked(&matrix, wave, lambda)?;
        Ok(Self { layout, params: *params, dx, wave, lambda, lu, rows, condition })
    }

    pub fn params(&self) -> &StokesParams {
        &self.params
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn rhs(&self, data: &ModeData) -> Vec<C> {
        let lay = self.layout;
        let (dim, m, t) = (lay.dim, lay.m, lay.dim - 1);
        let mut b = vec![ZERO; lay.len()];
        for j in 1..m {
            for i in 0..dim {
                b[lay.u(Side::Plus, j, i)] = data.f_plus[i][j];
                b[lay.u(Side::Minus, j, i)] = data.f_minus[i][j];
            }
        }
        for j in 0..m {
            b[lay.p(j)] = 0.5 * (data.f_div[j] + data.f_div[j + 1]);
        }
        for i in 0..t {
            b[lay.u(Side::Plus, 0, i)] = data.g[i];
            b[lay.u(Side::Minus, 0, i)] = data.h[i];
        }
        b[lay.u(Side::Minus, 0, t)] = data.g[t];
        b[lay.u(Side::Plus, 0, t)] = data.g[t + 1];
        b[0] = data.d;
        b
    }

    /// Solves one mode and returns the relative residual of each equation family.
    pub fn solve(&self, data: &ModeData) -> (ModeSolution, f64, EquationResiduals) {
        let b = self.rhs(data);
        let x = self.lu.solve(&b);
        let residual = self.lu.relative_residual(&x, &b);
        let ax = self.lu.matrix().matvec(&x);
        let scale = {
            let xn = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let bn = b.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let s = self.lu.matrix().norm_inf() * xn + bn;
            if s == 0.0 { 1.0 } else { s }
        };
        let mut eq = EquationResiduals::default();
        for (r, kind) in self.rows.iter().enumerate() {
            let v = (ax[r] - b[r]).norm() / scale;
            let slot = &mut eq.values[kind.index()];
            *slot = slot.max(v);
        }
        (self.unpack(&x), residual, eq)
    }

    fn unpack(&self, x: &[C]) -> ModeSolution {
        let lay = self.layout;
        let (dim, m) = (lay.dim, lay.m);
        let comp = |side: Side| -> Vec<Vec<C>> {
            (0..dim).map(|i| (0..=m).map(|j| x[lay.u(side, j, i)]).collect()).collect()
        };
        let pi_half: Vec<C> = (0..m).map(|j| x[lay.p(j)]).collect();
        let mut pi = vec![ZERO; m + 1];
        pi[0] = 1.5 * pi_half[0] - 0.5 * pi_half[1];
        for j in 1..m {
            pi[j] = 0.5 * (pi_half[j - 1] + pi_half[j]);
        }
        pi[m] = pi_half[m - 1];
        ModeSolution { u_plus: comp(Side::Plus), u_minus: comp(Side::Minus), pi_half, pi, h: x[0] }
    }
}

/// Stokes data in mode space for the whole grid.
#[derive(Clone, Debug, PartialEq)]
pub struct StokesData {
    pub f_plus: Vec<SpectralField>,
    pub f_minus: Vec<SpectralField>,
    pub f_div: SpectralField,
    pub g: Vec<Vec<C>>,
    pub h: Vec<Vec<C>>,
    pub d: Vec<C>,
}

impl StokesData {
    pub fn zeros(grid: &Grid) -> Self {
        let field = || SpectralField::zeros(grid.n_tan, grid.n_rows);
        let line = || vec![ZERO; grid.n_tan];
        Self {
            f_plus: (0..grid.dim).map(|_| field()).collect(),
            f_minus: (0..grid.dim).map(|_| field()).collect(),
            f_div: field(),
            g: (0..=grid.dim).map(|_| line()).collect(),
            h: (0..grid.dim - 1).map(|_| line()).collect(),
            d: line(),
        }
    }

    fn mode(&self, k: usize) -> ModeData {
        ModeData {
            f_plus: self.f_plus.iter().map(|f| f.mode(k).to_vec()).collect(),
            f_minus: self.f_minus.iter().map(|f| f.mode(k).to_vec()).collect(),
            f_div: self.f_div.mode(k).to_vec(),
            g: self.g.iter().map(|g| g[k]).collect(),
            h: self.h.iter().map(|h| h[k]).collect(),
            d: self.d[k],
        }
    }
}

/// Stokes data in physical space.
#[derive(Clone, Debug)]
pub struct StokesFields {
    pub f_plus: Vec<StripField>,
    pub f_minus: Vec<StripField>,
    pub f_div: StripField,
    pub g: Vec<LineField>,
    pub h: Vec<LineField>,
    pub d: LineField,
}

impl StokesFields {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            f_plus: grid.vector_zeros(Side::Plus),
            f_minus: grid.vector_zeros(Side::Minus),
            f_div: grid.zeros(Side::Minus),
            g: (0..=grid.dim).map(|_| grid.line_zeros()).collect(),
            h: (0..grid.dim - 1).map(|_| grid.line_zeros()).collect(),
            d: grid.line_zeros(),
        }
    }

    pub fn to_modes(&self, grid: &Grid) -> Result<StokesData> {
        let fields = |v: &[StripField]| v.iter().map(|f| grid.to_modes(f)).collect::<Result<Vec<_>>>();
        let lines = |v: &[LineField]| v.iter().map(|f| grid.line_to_modes(f)).collect::<Vec<_>>();
        if self.f_plus.len() != grid.dim || self.f_minus.len() != grid.dim || self.g.len() != grid.dim + 1
            || self.h.len() != grid.dim - 1
        {
            return Err(Error::Shape("Stokes data has the wrong number of components".into()));
        }
        Ok(StokesData {
            f_plus: fields(&self.f_plus)?,
            f_minus: fields(&self.f_minus)?,
            f_div: grid.to_modes(&self.f_div)?,
            g: lines(&self.g),
            h: lines(&self.h),
            d: grid.line_to_modes(&self.d),
        })
    }
}

/// Mode-space Stokes solution.
#[derive(Clone, Debug)]
pub struct StokesModes {
    pub u_plus: Vec<SpectralField>,
    pub u_minus: Vec<SpectralField>,
    pub pi: SpectralField,
    pub h: Vec<C>,
}

/// Physical-space Stokes solution.
#[derive(Clone, Debug)]
pub struct StokesState {
    pub u_plus: Vec<StripField>,
    pub u_minus: Vec<StripField>,
    pub pi: StripField,
    pub h: LineField,
}

impl StokesState {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            u_plus: grid.vector_zeros(Side::Plus),
            u_minus: grid.vector_zeros(Side::Minus),
            pi: grid.zeros(Side::Minus),
            h: grid.line_zeros(),
        }
    }
}

/// Solver holding one factored block per mode at fixed `lambda`.
#[derive(Clone, Debug)]
pub struct StokesSolver {
    params: StokesParams,
    lambda: C,
    dim: usize,
    n_rows: usize,
    systems: Vec<ModeBlockSystem>,
}

/// Residual diagnostics of one batched Stokes solve.
#[derive(Clone, Debug, Default, Serialize)]
pub struct StokesReport {
    pub modes: SolveReport,
    pub equations: EquationResiduals,
}

impl StokesSolver {
    pub fn new(grid: &Grid, params: StokesParams, lambda: C) -> Result<Self> {
        let systems = (0..grid.n_tan)
            .into_par_iter()
            .map(|k| {
                ModeBlockSystem::assemble(&params, grid.dim, grid.m_nrm, grid.dx_nrm, grid.wave(k), grid.wave_odd(k), lambda)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { params, lambda, dim: grid.dim, n_rows: grid.n_rows, systems })
    }

    pub fn lambda(&self) -> C {
        self.lambda
    }

    pub fn params(&self) -> &StokesParams {
        &self.params
    }

    pub fn max_condition(&self) -> f64 {
        self.systems.iter().map(|s| s.condition).fold(0.0, f64::max)
    }

    pub fn solve_modes(&self, data: &StokesData) -> Result<(StokesModes, StokesReport)> {
        let n_modes = self.systems.len();
        let ok = data.f_plus.len() == self.dim
            && data.f_minus.len() == self.dim
            && data.g.len() == self.dim + 1
            && data.h.len() == self.dim - 1
            && data.f_plus.iter().chain(&data.f_minus).chain([&data.f_div]).all(|f| f.n_modes == n_modes && f.n_rows == self.n_rows)
            && data.g.iter().chain(&data.h).chain([&data.d]).all(|l| l.len() == n_modes);
        if !ok {
            return Err(Error::Shape("Stokes data does not match the solver grid".into()));
        }
        let solved: Vec<_> = (0..n_modes).into_par_iter().map(|k| self.systems[k].solve(&data.mode(k))).collect();
        let field = || SpectralField::zeros(n_modes, self.n_rows);
        let mut out = StokesModes {
            u_plus: (0..self.dim).map(|_| field()).collect(),
            u_minus: (0..self.dim).map(|_| field()).collect(),
            pi: field(),
            h: vec![ZERO; n_modes],
        };
        let mut report = StokesReport::default();
        for (k, (sol, residual, eq)) in solved.into_iter().enumerate() {
            for i in 0..self.dim {
                out.u_plus[i].mode_mut(k).copy_from_slice(&sol.u_plus[i]);
                out.u_minus[i].mode_mut(k).copy_from_slice(&sol.u_minus[i]);
            }
            out.pi.mode_mut(k).copy_from_slice(&sol.pi);
            out.h[k] = sol.h;
            let s = &self.systems[k];
            report.modes.modes.push(ModeReport { mode: k, wave: s.wave, condition: s.condition, residual });
            report.equations.absorb(&eq);
        }
        Ok((out, report))
    }

    /// Resolvent solve for real physical-space data (real part of the result).
    pub fn solve(&self, grid: &Grid, data: &StokesFields) -> Result<(StokesState, StokesReport)> {
        let (modes, report) = self.solve_modes(&data.to_modes(grid)?)?;
        let back = |v: &[SpectralField], side: Side| v.iter().map(|f| grid.from_modes(f, side)).collect::<Result<Vec<_>>>();
        Ok((
            StokesState {
                u_plus: back(&modes.u_plus, Side::Plus)?,
                u_minus: back(&modes.u_minus, Side::Minus)?,
                pi: grid.from_modes(&modes.pi, Side::Minus)?,
                h: grid.line_from_modes(&modes.h),
            },
            report,
        ))
    }

    /// One implicit Euler step from `state`; the solver must use `lambda = 1/dt`.
    pub fn step(&self, grid: &Grid, state: &StokesState, data: &StokesFields) -> Result<(StokesState, StokesReport)> {
        let lambda = self.lambda.re;
        let mut shifted = data.clone();
        for i in 0..grid.dim {
            shifted.f_plus[i].add_scaled(self.params.rho_plus * lambda, &state.u_plus[i]);
            shifted.f_minus[i].add_scaled(self.params.rho_minus * lambda, &state.u_minus[i]);
        }
        shifted.d = &shifted.d + &state.h.scale(lambda);
        self.solve(grid, &shifted)
    }
}

/// Admissible resolvent parameters `|arg lambda| <= pi - epsilon`, `|lambda| >= lambda0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sector {
    pub epsilon: f64,
    pub lambda0: f64,
}

impl Sector {
    pub fn contains(&self, lambda: C) -> bool {
        lambda.norm() >= self.lambda0 && lambda.arg().abs() <= std::f64::consts::PI - self.epsilon
    }
}

/// Grid of sector points: `n_radii` geometric radii in `[lambda0, 10^3 lambda0]`
/// times `n_angles` arguments evenly spread over `[-(pi - epsilon), pi - epsilon]`.
pub fn sector_lambdas(sector: Sector, n_radii: usize, n_angles: usize) -> Vec<C> {
    let amax = std::f64::consts::PI - sector.epsilon;
    let mut out = Vec::with_capacity(n_radii * n_angles);
    for r in 0..n_radii {
        let frac = if n_radii > 1 { r as f64 / (n_radii - 1) as f64 } else { 0.0 };
        let radius = sector.lambda0 * 10f64.powf(3.0 * frac);
        for a in 0..n_angles {
            let arg = if n_angles > 1 { -amax + 2.0 * amax * a as f64 / (n_angles - 1) as f64 } else { 0.0 };
            out.push(C::from_polar(radius, arg));
        }
    }
    out
}

/// Resolvent solve with a sector check on `lambda`.
pub fn solve_stokes_resolvent(
    grid: &Grid,
    params: StokesParams,
    sector: Sector,
    lambda: C,
    data: &StokesData,
) -> Result<(StokesModes, StokesReport)> {
    if !sector.contains(lambda) {
        return Err(Error::Config(format!(
            "lambda = {lambda} lies outside the sector (epsilon = {}, lambda0 = {})",
            sector.epsilon, sector.lambda0
        )));
    }
    StokesSolver::new(grid, params, lambda)?.solve_modes(data)
}

/// One row of a resolvent sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub lambda_re: f64,
    pub lambda_im: f64,
    pub mode: usize,
    pub wave: [f64; 2],
    pub condition: f64,
    pub residual: f64,
}

/// Condition numbers and residuals of every mode block for each `lambda`.
///
/// Unlike [`StokesSolver::new`], badly conditioned blocks are reported rather
/// than rejected; singular blocks are still errors.
pub fn resolvent_sweep(grid: &Grid, params: StokesParams, lambdas: &[C]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &lambda in lambdas {
        let part = (0..grid.n_tan)
            .into_par_iter()
            .map(|k| {
                let (matrix, _, _) =
                    assemble_matrix(&params, grid.dim, grid.m_nrm, grid.dx_nrm, grid.wave(k), grid.wave_odd(k), lambda);
                let lu = BandLu::factor(&matrix)
                    .map_err(|e| Error::Solver(format!("mode {k}, lambda = {lambda}: {e}")))?;
                let b = vec![C::new(1.0, 0.0); matrix.n];
                let x = lu.solve(&b);
                Ok(SweepRow {
                    lambda_re: lambda.re,
                    lambda_im: lambda.im,
                    mode: k,
                    wave: grid.wave(k),
                    condition: lu.condition_estimate(),
                    residual: lu.relative_residual(&x, &b),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.extend(part);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::manufactured::{observed_orders, StokesManufactured};
    use proptest::prelude::*;

    fn params() -> StokesParams {
        StokesParams::from_material(&MaterialSystem::default_for(2))
    }

    fn grid(dim: usize, m_tan: usize, m_nrm: usize, l_nrm: f64, dt: f64) -> Grid {
        Grid::new(&GridSpec { dimension: dim, m_tan, m_nrm, l_nrm, dt, ..GridSpec::default() }).unwrap()
    }

    #[test]
    fn manufactured_solution_converges_at_second_order() {
        let p = params();
        let ms = StokesManufactured::new(4.0, 1.0, C::new(2.0, 0.5));
        let e: Vec<_> = [32, 64, 128].iter().map(|&m| ms.errors(&p, m).unwrap()).collect();
        for r in &e {
            assert!(r.residual < 1e-12 && r.equations < 1e-12, "{r:?}");
        }
        for orders in observed_orders(&e) {
            for (order, name) in orders.iter().zip(["u", "pi", "H"]) {
                assert!((1.7..=2.3).contains(order), "{name}: order {order}");
            }
        }
    }

    #[test]
    fn zero_data_gives_zero() {
        let g = grid(2, 8, 16, 4.0, 1e-2);
        let s = StokesSolver::new(&g, params(), C::new(1.0 / g.dt, 0.0)).unwrap();
        let mut state = StokesState::zeros(&g);
        for _ in 0..3 {
            let (next, report) = s.step(&g, &state, &StokesFields::zeros(&g)).unwrap();
            report.modes.certify().unwrap();
            state = next;
        }
        assert_eq!(state.u_plus[0].max_abs() + state.u_minus[1].max_abs() + state.h.max_abs(), 0.0);
    }

    #[test]
    fn sector_sweep_has_bounded_conditioning() {
        let g = grid(2, 16, 32, 4.0, 1e-2);
        let eps = 0.1;
        let lambdas: Vec<C> =
            [0.0, std::f64::consts::PI - eps, -(std::f64::consts::PI - eps)].iter().map(|&phi| C::from_polar(1.0, phi)).collect();
        let rows = resolvent_sweep(&g, params(), &lambdas).unwrap();
        assert_eq!(rows.len(), 3 * g.n_tan);
        for r in rows {
            assert!(r.condition.is_finite() && r.condition < 1e12, "{r:?}");
            assert!(r.residual < 1e-10);
        }
    }

    #[test]
    fn sector_lambdas_cover_the_boundary() {
        let s = Sector { epsilon: 0.1, lambda0: 2.0 };
        let l = sector_lambdas(s, 4, 5);
        assert_eq!(l.len(), 20);
        assert!(l.iter().all(|z| z.norm() >= 2.0 * (1.0 - 1e-12) && z.arg().abs() <= std::f64::consts::PI - 0.1 + 1e-12));
        assert!((l[0].arg() + std::f64::consts::PI - 0.1).abs() < 1e-12);
        assert!((l[19].norm() - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn sector_membership() {
        let s = Sector { epsilon: 0.1, lambda0: 1.0 };
        assert!(s.contains(C::new(2.0, 0.0)));
        assert!(!s.contains(C::new(0.5, 0.0)));
        assert!(!s.contains(C::new(-2.0, 0.01)));
        let g = grid(2, 8, 16, 4.0, 1e-2);
        assert!(solve_stokes_resolvent(&g, params(), s, C::new(-2.0, 0.0), &StokesData::zeros(&g)).is_err());
    }

    #[test]
    fn single_mode_energy_decays() {
        let g = grid(2, 16, 48, 8.0, 1e-2);
        let s = StokesSolver::new(&g, params(), C::new(1.0 / g.dt, 0.0)).unwrap();
        let mut state = StokesState::zeros(&g);
        state.u_plus[0] = g.sample(Side::Plus, |x, z| (-z).exp() * x[0].cos());
        let energy = |st: &StokesState| -> f64 {
            st.u_plus.iter().chain(&st.u_minus).map(|f| g.norm(f, crate::grid::NormKind::Lq(2.0)).unwrap().powi(2)).sum::<f64>().sqrt()
        };
        let mut last = energy(&state);
        for step in 0..50 {
            let (next, report) = s.step(&g, &state, &StokesFields::zeros(&g)).unwrap();
            report.modes.certify().unwrap();
            state = next;
            let e = energy(&state);
            assert!(e < last, "step {step}: {e} >= {last}");
            last = e;
        }
    }

    fn forced_run(dt: f64, t_final: f64) -> StokesState {
        let g = grid(2, 8, 32, 4.0, dt);
        let s = StokesSolver::new(&g, params(), C::new(1.0 / dt, 0.0)).unwrap();
        let mut data = StokesFields::zeros(&g);
        let bump = |z: f64| z * z * (-z * z).exp();
        data.f_plus[0] = g.sample(Side::Plus, |x, z| bump(z) * x[0].sin());
        data.f_minus[1] = g.sample(Side::Minus, |x, z| bump(z) * x[0].cos());
        let mut state = StokesState::zeros(&g);
        for _ in 0..(t_final / dt).round() as usize {
            state = s.step(&g, &state, &data).unwrap().0;
        }
        state
    }

    #[test]
    fn time_step_is_first_order() {
        let t = 0.2;
        let runs: Vec<StokesState> = [0.02, 0.01, 0.005].iter().map(|&dt| forced_run(dt, t)).collect();
        let diff = |a: &StokesState, b: &StokesState| {
            a.u_plus.iter().zip(&b.u_plus).chain(a.u_minus.iter().zip(&b.u_minus)).map(|(x, y)| (x - y).max_abs()).fold(0.0, f64::max)
        };
        let order = (diff(&runs[0], &runs[1]) / diff(&runs[1], &runs[2])).log2();
        assert!((0.8..=1.2).contains(&order), "order {order}");
    }

    #[test]
    fn time_step_equals_shifted_resolvent() {
        let g = grid(3, 8, 16, 4.0, 1e-2);
        let p = params();
        let lam = 1.0 / g.dt;
        let s = StokesSolver::new(&g, p, C::new(lam, 0.0)).unwrap();
        let mut state = StokesState::zeros(&g);
        state.u_plus[1] = g.sample(Side::Plus, |x, z| (-z).exp() * (x[0] + x[1]).sin());
        state.u_minus[2] = g.sample(Side::Minus, |x, z| z * z.exp() * x[1].cos());
        state.h = g.sample_line(|x| 0.1 * x[0].cos());
        let mut data = StokesFields::zeros(&g);
        data.g[3] = g.sample_line(|x| (x[0] - x[1]).sin());
        let (stepped, _) = s.step(&g, &state, &data).unwrap();
        let mut direct = data.clone();
        for i in 0..3 {
            direct.f_plus[i] = state.u_plus[i].scale(p.rho_plus * lam);
            direct.f_minus[i] = state.u_minus[i].scale(p.rho_minus * lam);
        }
        direct.d = state.h.scale(lam);
        let (resolved, _) = s.solve(&g, &direct).unwrap();
        for i in 0..3 {
            assert!((&stepped.u_plus[i] - &resolved.u_plus[i]).max_abs() < 1e-12);
            assert!((&stepped.u_minus[i] - &resolved.u_minus[i]).max_abs() < 1e-12);
        }
        assert!((&stepped.h - &resolved.h).max_abs() < 1e-12);
    }

    #[test]
    fn three_dimensional_interface_rows_hold() {
        let g = grid(3, 8, 16, 4.0, 1e-2);
        let s = StokesSolver::new(&g, params(), C::new(3.0, 0.0)).unwrap();
        let mut data = StokesFields::zeros(&g);
        data.g[0] = g.sample_line(|x| x[1].sin());
        data.h[1] = g.sample_line(|x| (x[0] + x[1]).cos());
        data.d = g.sample_line(|x| 0.2 * x[0].sin());
        let (state, report) = s.solve(&g, &data).unwrap();
        report.modes.certify().unwrap();
        assert!(report.equations.max() < 1e-12);
        let slip = &(&g.trace(&state.u_minus[1]) - &g.trace(&state.u_plus[1])) - &data.h[1];
        assert!(slip.max_abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn solve_is_linear(a in -2.0..2.0f64, shift in 0.0..6.0f64) {
            let g = grid(2, 8, 16, 4.0, 1e-2);
            let s = StokesSolver::new(&g, params(), C::new(4.0, 1.0)).unwrap();
            let mut d1 = StokesFields::zeros(&g);
            d1.f_plus[1] = g.sample(Side::Plus, |x, z| (x[0] + shift).sin() * (-z).exp());
            d1.g[1] = g.sample_line(|x| (x[0] - shift).cos());
            let mut d2 = StokesFields::zeros(&g);
            d2.f_div = g.sample(Side::Minus, |x, z| x[0].cos() * z * z.exp());
            d2.d = g.sample_line(|x| (2.0 * x[0]).sin());
            let mut d = d2.clone();
            d.f_plus[1] = d1.f_plus[1].scale(a);
            d.g[1] = d1.g[1].scale(a);
            let (s1, _) = s.solve(&g, &d1).unwrap();
            let (s2, _) = s.solve(&g, &d2).unwrap();
            let (s3, _) = s.solve(&g, &d).unwrap();
            for i in 0..2 {
                prop_assert!((&s3.u_plus[i] - &(&s1.u_plus[i].scale(a) + &s2.u_plus[i])).max_abs() < 1e-10);
            }
            prop_assert!((&s3.pi - &(&s1.pi.scale(a) + &s2.pi)).max_abs() < 1e-9);
        }
    }
}
