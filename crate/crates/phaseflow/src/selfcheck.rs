//! Invariant suite run by `check-model --seed-check`.
//!
//! Every check is deterministic and sized to finish in seconds; the inputs
//! that would be random in a property test are fixed low-discrepancy samples.

use num_complex::Complex64;
use serde::Serialize;

use crate::constitutive::{MaterialSystem, Side};
use crate::diagnostics::DiagnosticsReport;
use crate::error::Result;
use crate::geometry::ExtendedHeight;
use crate::grid::{Grid, GridSpec};
use crate::heat::HeatParams;
use crate::manufactured::{observed_orders, run_two_layer, StokesManufactured};
use crate::rhs::{phase_flux_eliminated, phase_flux_physical, traction_split, RhsAssembler, RhsOptions};
use crate::state::{Rates, State};
use crate::stokes::StokesParams;
use crate::transport::lions_extend;

/// Outcome of one invariant: `passed` iff `value <= tolerance`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckOutcome {
    pub fn new(name: &str, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, tolerance, passed: value <= tolerance }
    }
}

/// Weyl sequence in `[lo, hi)`: deterministic, well spread samples.
pub fn weyl_samples(n: usize, salt: f64, lo: f64, hi: f64) -> impl Iterator<Item = f64> {
    const ALPHA: f64 = 0.618_033_988_749_894_9;
    (0..n).map(move |k| lo + (hi - lo) * ((k as f64 + 1.0) * ALPHA + salt).fract())
}

/// Largest relative defect of `traction_split` against the pair it encodes.
pub fn traction_split_defect(samples: usize) -> f64 {
    let mut worst = 0.0f64;
    let xs: Vec<Vec<f64>> = (0..6).map(|s| weyl_samples(samples, 0.1 * s as f64, -1.0, 1.0).collect()).collect();
    for k in 0..samples {
        let rm = 1.0 + 2.0 * (xs[0][k] + 1.0);
        let rp = 0.1 + 0.4 * (xs[1][k] + 1.0);
        let sigma = xs[2][k].abs();
        let (g_n, g_n1, lap) = (xs[3][k], xs[4][k], 3.0 * xs[5][k]);
        let (tp, tm) = traction_split(rm, rp, sigma, g_n, g_n1, lap);
        let scale = 1.0 + (sigma * lap).abs() + g_n.abs() + g_n1.abs() + tp.abs() + tm.abs();
        let r1 = (tm - tp) - (sigma * lap + g_n);
        let r2 = (tm / rm - tp / rp) - g_n1;
        worst = worst.max(r1.abs() / scale).max(r2.abs() / scale);
    }
    worst
}

/// Largest relative gap between the eliminated and the physical phase-flux
/// formulas on velocity jumps parallel to the normal (no tangential slip).
pub fn phase_flux_dual_defect(samples: usize) -> f64 {
    let mut worst = 0.0f64;
    let xs: Vec<Vec<f64>> = (0..6).map(|s| weyl_samples(samples, 0.13 * s as f64, -1.0, 1.0).collect()).collect();
    for k in 0..samples {
        let slope = 2.0 * xs[0][k];
        let area = (1.0 + slope * slope).sqrt();
        let normal = [-slope / area, 1.0 / area];
        let s = xs[1][k];
        let u_plus = [xs[2][k], xs[3][k]];
        let u_minus = [u_plus[0] + s * normal[0], u_plus[1] + s * normal[1]];
        let inv_jump = 0.5 + xs[4][k].abs();
        let a = phase_flux_eliminated(u_minus[1], u_plus[1], area, inv_jump);
        let b = phase_flux_physical(&u_minus, &u_plus, &normal, inv_jump);
        worst = worst.max((a - b).abs() / (1.0 + a.abs()));
    }
    worst
}

/// Mismatch of the one-sided second-order normal derivatives of the Lions
/// extension of `f` across `x_N = 0`, maximized over the tangential nodes.
pub fn lions_derivative_mismatch(grid: &Grid, f: impl Fn([f64; 2], f64) -> f64) -> f64 {
    let ext = lions_extend(grid, &grid.sample(Side::Plus, f));
    let (n, dx) = (grid.n_tan, grid.dx_nrm);
    (0..n)
        .map(|i| {
            let up = |j: usize| ext.plus.at(n, j, i);
            let dn = |j: usize| ext.minus.at(n, j, i);
            let d_plus = (-3.0 * up(0) + 4.0 * up(1) - up(2)) / (2.0 * dx);
            let d_minus = (3.0 * dn(0) - 4.0 * dn(1) + dn(2)) / (2.0 * dx);
            (d_plus - d_minus).abs()
        })
        .fold(0.0, f64::max)
}

/// Largest entry of `Q Q^{-1} - I` over both strips for `h = eps cos(x_1)`.
pub fn q_inverse_defect(grid: &Grid, eps: f64) -> Result<f64> {
    let h = grid.sample_line(|x| eps * (2.0 * std::f64::consts::PI * x[0] / grid.l_tan).cos());
    let e = ExtendedHeight::new(grid, &h, None)?;
    let n = grid.dim;
    let mut worst = 0.0f64;
    for s in [Side::Plus, Side::Minus] {
        for idx in 0..grid.strip_len() {
            let (q, qi) = (e.q(s, idx), e.q_inv(s, idx));
            for i in 0..n {
                for j in 0..n {
                    let p: f64 = (0..n).map(|l| q.a[i][l] * qi.a[l][j]).sum();
                    worst = worst.max((p - if i == j { 1.0 } else { 0.0 }).abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Equilibrium annihilation on `grid`: the full right-hand side, the
/// compatibility residuals and the case-32 jump residuals.
pub fn equilibrium_defects(grid: &Grid, m: &MaterialSystem, options: RhsOptions) -> Result<[f64; 3]> {
    let s = State::equilibrium(grid, m);
    let geo = ExtendedHeight::flat(grid);
    let asm = RhsAssembler::new(grid, m, options);
    let rhs = asm.assemble(&s, &geo, &Rates::zeros(grid))?;
    let compat = asm.compatibility_residual(&s)?;
    let diag = DiagnosticsReport::evaluate(grid, m, options.curvature, &s, &geo, &grid.line_zeros(), options.delta_j)?;
    Ok([rhs.max_abs(), compat.max_sup(), diag.jumps.max_sup()])
}

/// Runs the suite for `material` (whose dimension sets the grids).
pub fn invariant_suite(material: &MaterialSystem, options: RhsOptions) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let dim = material.dim;
    let small = Grid::new(&GridSpec { dimension: dim, m_tan: 16, m_nrm: 16, l_nrm: 4.0, ..GridSpec::default() })?;

    let validation = material.validate(&material.default_box())?;
    out.push(CheckOutcome::new(
        "closure_validation_failures",
        validation.checks.iter().filter(|c| !c.passed).count() as f64,
        0.0,
    ));
    out.push(CheckOutcome::new("equilibrium_condition", material.equilibrium_residual(), 1e-12));
    let [rhs, compat, jumps] = equilibrium_defects(&small, material, options)?;
    out.push(CheckOutcome::new("equilibrium_rhs", rhs, 1e-12));
    out.push(CheckOutcome::new("equilibrium_compatibility", compat, 1e-12));
    out.push(CheckOutcome::new("equilibrium_jumps", jumps, 1e-12));
    out.push(CheckOutcome::new("q_times_q_inverse", q_inverse_defect(&small, 0.1)?, 1e-13));
    out.push(CheckOutcome::new("traction_split_round_trip", traction_split_defect(256), 1e-13));
    out.push(CheckOutcome::new("phase_flux_dual_formula", phase_flux_dual_defect(256), 1e-12));

    let smooth = |x: [f64; 2], z: f64| (1.0 + 0.3 * x[0].cos()) * (0.7 * z).sin() + z * z;
    let coarse = lions_derivative_mismatch(&small, smooth);
    let fine = Grid::new(&GridSpec { dimension: dim, m_tan: 16, m_nrm: 32, l_nrm: 4.0, ..GridSpec::default() })?;
    let finer = lions_derivative_mismatch(&fine, smooth);
    // Second-order one-sided differences: the mismatch must shrink by about 4.
    out.push(CheckOutcome::new("lions_c1_mismatch_ratio_inverse", finer / coarse.max(f64::MIN_POSITIVE), 0.35));

    if material.density_gap() != 0.0 {
        let p = StokesParams::from_material(material);
        let ms = StokesManufactured::new(4.0, 1.0, Complex64::new(2.0, 0.5));
        let errs = [32, 64, 128].iter().map(|&m| ms.errors(&p, m)).collect::<Result<Vec<_>>>()?;
        let residual = errs.iter().map(|e| e.residual).fold(0.0, f64::max);
        out.push(CheckOutcome::new("stokes_manufactured_residual", residual, 1e-10));
        let worst_order_gap = observed_orders(&errs).iter().flatten().map(|o| (o - 2.0).abs()).fold(0.0, f64::max);
        out.push(CheckOutcome::new("stokes_manufactured_order_gap", worst_order_gap, 0.3));
    }

    let heat_grid = Grid::new(&GridSpec { dimension: 2, m_tan: 8, m_nrm: 64, l_nrm: 8.0, ..GridSpec::default() })?;
    let run = run_two_layer(&heat_grid, HeatParams::from_material(material), 0.1)?;
    out.push(CheckOutcome::new("heat_two_layer_relative_error", run.relative_error, 0.01));
    out.push(CheckOutcome::new("heat_solve_residual", run.max_residual, 1e-10));
    Ok(out)
}
