//! Heat-type interface problem, solved one tangential mode at a time.
//!
//! Per mode the unknowns are interleaved as `[theta_+(j), theta_-(j)]` for
//! `j = 0..=M`. Row 0 enforces temperature continuity, row 1 is the flux
//! balance over the two half cells adjacent to the interface, interior rows
//! are the usual three-point stencil and the outer rows are homogeneous
//! Dirichlet conditions.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::banded::{BandLu, BandMatrix};
use crate::constitutive::{MaterialSystem, Side};
use crate::error::{Error, Result};
use crate::grid::{Grid, LineField, SpectralField, StripField};
use crate::modal::{factor_checked, ModeReport, SolveReport};

/// Frozen coefficients of the heat problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeatParams {
    /// `rho_* kappa_*` on the upper side.
    pub capacity_plus: f64,
    pub capacity_minus: f64,
    pub d_plus: f64,
    pub d_minus: f64,
}

impl HeatParams {
    pub fn from_material(m: &MaterialSystem) -> Self {
        let s = &m.starred;
        Self {
            capacity_plus: m.rho_star_plus * s.kappa_plus,
            capacity_minus: m.rho_star_minus * s.kappa_minus,
            d_plus: s.d_plus,
            d_minus: s.d_minus,
        }
    }

    pub fn capacity(&self, side: Side) -> f64 {
        match side {
            Side::Plus => self.capacity_plus,
            Side::Minus => self.capacity_minus,
        }
    }

    pub fn conductivity(&self, side: Side) -> f64 {
        match side {
            Side::Plus => self.d_plus,
            Side::Minus => self.d_minus,
        }
    }
}

/// Factored heat system of one mode.
#[derive(Clone, Debug)]
pub struct HeatModeSystem {
    params: HeatParams,
    m: usize,
    dx: f64,
    lambda: Complex64,
    lu: BandLu,
    pub condition: f64,
}

#[inline]
fn idx(side: Side, j: usize) -> usize {
    2 * j + if side == Side::Plus { 0 } else { 1 }
}

impl HeatModeSystem {
    pub fn assemble(params: HeatParams, m: usize, dx: f64, k_sq: f64, lambda: Complex64, wave: [f64; 2]) -> Result<Self> {
        let n = 2 * (m + 1);
        let one = Complex64::new(1.0, 0.0);
        let mut e: Vec<(usize, usize, Complex64)> = Vec::with_capacity(6 * n);
        e.push((0, idx(Side::Minus, 0), one));
        e.push((0, idx(Side::Plus, 0), -one));
        for side in [Side::Plus, Side::Minus] {
            let (c, d) = (params.capacity(side), params.conductivity(side));
            let diag = lambda * c + d * k_sq;
            e.push((1, idx(side, 0), 0.5 * dx * diag + d / dx));
            e.push((1, idx(side, 1), Complex64::new(-d / dx, 0.0)));
            let off = Complex64::new(-d / (dx * dx), 0.0);
            for j in 1..m {
                let r = idx(side, j);
                e.push((r, r, diag + 2.0 * d / (dx * dx)));
                e.push((r, idx(side, j - 1), off));
                e.push((r, idx(side, j + 1), off));
            }
            e.push((idx(side, m), idx(side, m), one));
        }
        let matrix = BandMatrix::from_entries(n, &e);
        let (lu, condition) = factor_checked(&matrix, wave, lambda)?;
        Ok(Self { params, m, dx, lambda, lu, condition })
    }

    pub fn lambda(&self) -> Complex64 {
        self.lambda
    }

    /// Right-hand side for sources `f` on both sides and flux jump `g`.
    pub fn rhs(&self, f_plus: &[Complex64], f_minus: &[Complex64], g: Complex64) -> Vec<Complex64> {
        let m = self.m;
        let mut b = vec![Complex64::new(0.0, 0.0); 2 * (m + 1)];
        b[1] = 0.5 * self.dx * (f_plus[0] + f_minus[0]) + g;
        for j in 1..m {
            b[idx(Side::Plus, j)] = f_plus[j];
            b[idx(Side::Minus, j)] = f_minus[j];
        }
        b
    }

    /// Solves and returns `(theta_+, theta_-, relative residual)`.
    pub fn solve(&self, f_plus: &[Complex64], f_minus: &[Complex64], g: Complex64) -> (Vec<Complex64>, Vec<Complex64>, f64) {
        let b = self.rhs(f_plus, f_minus, g);
        let x = self.lu.solve(&b);
        let residual = self.lu.relative_residual(&x, &b);
        let plus = (0..=self.m).map(|j| x[idx(Side::Plus, j)]).collect();
        let minus = (0..=self.m).map(|j| x[idx(Side::Minus, j)]).collect();
        (plus, minus, residual)
    }

    pub fn params(&self) -> HeatParams {
        self.params
    }
}

/// Heat solver with one factorization per distinct `|k|^2` at fixed `lambda`.
#[derive(Clone, Debug)]
pub struct HeatSolver {
    params: HeatParams,
    lambda: Complex64,
    systems: Vec<Arc<HeatModeSystem>>,
    waves: Vec<[f64; 2]>,
    n_rows: usize,
}

impl HeatSolver {
    pub fn new(grid: &Grid, params: HeatParams, lambda: Complex64) -> Result<Self> {
        let mut keys: HashMap<u64, usize> = HashMap::new();
        let mut distinct: Vec<(f64, [f64; 2])> = Vec::new();
        let mut which = Vec::with_capacity(grid.n_tan);
        for k in 0..grid.n_tan {
            let k_sq = grid.wave_sq(k);
            let slot = *keys.entry(k_sq.to_bits()).or_insert_with(|| {
                distinct.push((k_sq, grid.wave(k)));
                distinct.len() - 1
            });
            which.push(slot);
        }
        let built: Vec<Arc<HeatModeSystem>> = distinct
            .par_iter()
            .map(|&(k_sq, wave)| {
                HeatModeSystem::assemble(params, grid.m_nrm, grid.dx_nrm, k_sq, lambda, wave).map(Arc::new)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            params,
            lambda,
            systems: which.iter().map(|&s| built[s].clone()).collect(),
            waves: (0..grid.n_tan).map(|k| grid.wave(k)).collect(),
            n_rows: grid.n_rows,
        })
    }

    pub fn lambda(&self) -> Complex64 {
        self.lambda
    }

    pub fn params(&self) -> HeatParams {
        self.params
    }

    /// Resolvent solve in mode space.
    pub fn solve_modes(
        &self,
        f_plus: &SpectralField,
        f_minus: &SpectralField,
        g: &[Complex64],
    ) -> Result<(SpectralField, SpectralField, SolveReport)> {
        let n_modes = self.systems.len();
        for s in [f_plus, f_minus] {
            if s.n_modes != n_modes || s.n_rows != self.n_rows {
                return Err(Error::Shape(format!(
                    "heat data is {}x{}, solver expects {}x{}",
                    s.n_modes, s.n_rows, n_modes, self.n_rows
                )));
            }
        }
        if g.len() != n_modes {
            return Err(Error::Shape(format!("flux data has {} modes, expected {n_modes}", g.len())));
        }
        let solved: Vec<_> = (0..n_modes)
            .into_par_iter()
            .map(|k| self.systems[k].solve(f_plus.mode(k), f_minus.mode(k), g[k]))
            .collect();
        let mut plus = SpectralField::zeros(n_modes, self.n_rows);
        let mut minus = SpectralField::zeros(n_modes, self.n_rows);
        let mut report = SolveReport::default();
        for (k, (p, m, residual)) in solved.into_iter().enumerate() {
            plus.mode_mut(k).copy_from_slice(&p);
            minus.mode_mut(k).copy_from_slice(&m);
            report.modes.push(ModeReport { mode: k, wave: self.waves[k], condition: self.systems[k].condition, residual });
        }
        Ok((plus, minus, report))
    }

    /// Resolvent solve for physical-space data.
    pub fn solve(
        &self,
        grid: &Grid,
        f_plus: &StripField,
        f_minus: &StripField,
        g: &LineField,
    ) -> Result<(StripField, StripField, SolveReport)> {
        let (p, m, report) =
            self.solve_modes(&grid.to_modes(f_plus)?, &grid.to_modes(f_minus)?, &grid.line_to_modes(g))?;
        Ok((grid.from_modes(&p, Side::Plus)?, grid.from_modes(&m, Side::Minus)?, report))
    }

    /// Relative residual of the discrete flux-jump row (the finite-volume
    /// balance of the two half cells at the interface), evaluated in physical
    /// space for a real `lambda`.
    pub fn flux_row_residual(
        &self,
        grid: &Grid,
        theta: (&StripField, &StripField),
        f: (&StripField, &StripField),
        g: &LineField,
    ) -> f64 {
        let (n, dx, lambda) = (grid.n_tan, grid.dx_nrm, self.lambda.re);
        let mut lhs = grid.line_zeros();
        let mut scale = g.max_abs();
        for (side, th) in [(Side::Plus, theta.0), (Side::Minus, theta.1)] {
            let (c, d) = (self.params.capacity(side), self.params.conductivity(side));
            let t0 = grid.trace(th);
            let lap = grid.line_laplacian(&t0);
            let t1 = th.row(n, 1);
            for i in 0..n {
                let bulk = 0.5 * dx * (lambda * c * t0.data[i] - d * lap.data[i]);
                let flux = d / dx * (t0.data[i] - t1[i]);
                lhs.data[i] += bulk + flux;
                scale = scale.max(bulk.abs()).max(flux.abs());
            }
        }
        let (f0p, f0m) = (grid.trace(f.0), grid.trace(f.1));
        let mut worst = 0.0f64;
        for i in 0..n {
            let rhs = 0.5 * dx * (f0p.data[i] + f0m.data[i]) + g.data[i];
            worst = worst.max((lhs.data[i] - rhs).abs());
        }
        if scale > 0.0 {
            worst / scale
        } else {
            worst
        }
    }

    /// One implicit Euler step; the solver must have been built with `lambda = 1/dt`.
    pub fn step(
        &self,
        grid: &Grid,
        theta: (&StripField, &StripField),
        f_plus: &StripField,
        f_minus: &StripField,
        g: &LineField,
    ) -> Result<(StripField, StripField, SolveReport)> {
        let lambda = self.lambda.re;
        let mut fp = f_plus.clone();
        fp.add_scaled(self.params.capacity_plus * lambda, theta.0);
        let mut fm = f_minus.clone();
        fm.add_scaled(self.params.capacity_minus * lambda, theta.1);
        self.solve(grid, &fp, &fm, g)
    }
}
