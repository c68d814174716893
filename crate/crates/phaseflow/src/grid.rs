//! Discrete fields on the two reference half-strips and the interface line.
//!
//! Each strip carries `m_nrm + 1` node rows at `x_N = sign * j * dx_nrm`
//! (`j = 0` is the interface row, duplicated on both strips). Tangential
//! directions are periodic with `m_tan` points per direction; a row holds
//! `n_tan = m_tan^(N-1)` values with `x_1` varying fastest.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::constitutive::Side;
use crate::error::{Error, Result};

/// Serializable grid description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub dimension: usize,
    pub l_tan: f64,
    pub m_tan: usize,
    pub l_nrm: f64,
    pub m_nrm: usize,
    pub dt: f64,
    pub t_final: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            dimension: 2,
            l_tan: 2.0 * PI,
            m_tan: 64,
            l_nrm: 8.0,
            m_nrm: 64,
            dt: 1e-3,
            t_final: 0.1,
        }
    }
}

/// Grid geometry, wave numbers and FFT plans.
#[derive(Clone)]
pub struct Grid {
    pub dim: usize,
    pub l_tan: f64,
    pub m_tan: usize,
    pub l_nrm: f64,
    pub m_nrm: usize,
    pub dt: f64,
    pub t_final: f64,
    /// Points on the interface line.
    pub n_tan: usize,
    /// Node rows per strip.
    pub n_rows: usize,
    pub dx_tan: f64,
    pub dx_nrm: f64,
    /// Wave vector of each tangential mode (unused components are zero).
    wave: Vec<[f64; 2]>,
    /// First-derivative wave vector: Nyquist components set to zero.
    wave_odd: Vec<[f64; 2]>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.dim)
            .field("l_tan", &self.l_tan)
            .field("m_tan", &self.m_tan)
            .field("l_nrm", &self.l_nrm)
            .field("m_nrm", &self.m_nrm)
            .field("dt", &self.dt)
            .field("t_final", &self.t_final)
            .finish()
    }
}

impl Grid {
    pub fn new(spec: &GridSpec) -> Result<Self> {
        if !(2..=3).contains(&spec.dimension) {
            return Err(Error::Config(format!("dimension must be 2 or 3, got {}", spec.dimension)));
        }
        if spec.m_tan < 8 || !spec.m_tan.is_power_of_two() {
            return Err(Error::Config(format!("m_tan must be a power of two >= 8, got {}", spec.m_tan)));
        }
        if spec.m_nrm < 8 {
            return Err(Error::Config(format!("m_nrm must be >= 8, got {}", spec.m_nrm)));
        }
        for (name, v) in [("l_tan", spec.l_tan), ("l_nrm", spec.l_nrm), ("dt", spec.dt)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(spec.t_final.is_finite() && spec.t_final >= 0.0) {
            return Err(Error::Config(format!("t_final must be non-negative, got {}", spec.t_final)));
        }
        let m = spec.m_tan;
        let n_tan = m.pow(spec.dimension as u32 - 1);
        let signed = |i: usize| if i <= m / 2 { i as f64 } else { i as f64 - m as f64 };
        let k0 = 2.0 * PI / spec.l_tan;
        let mut wave = Vec::with_capacity(n_tan);
        let mut wave_odd = Vec::with_capacity(n_tan);
        for idx in 0..n_tan {
            let (i1, i2) = (idx % m, idx / m);
            let mut k = [k0 * signed(i1), 0.0];
            let mut ko = [if i1 == m / 2 { 0.0 } else { k[0] }, 0.0];
            if spec.dimension == 3 {
                k[1] = k0 * signed(i2);
                ko[1] = if i2 == m / 2 { 0.0 } else { k[1] };
            }
            wave.push(k);
            wave_odd.push(ko);
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            dim: spec.dimension,
            l_tan: spec.l_tan,
            m_tan: m,
            l_nrm: spec.l_nrm,
            m_nrm: spec.m_nrm,
            dt: spec.dt,
            t_final: spec.t_final,
            n_tan,
            n_rows: spec.m_nrm + 1,
            dx_tan: spec.l_tan / m as f64,
            dx_nrm: spec.l_nrm / spec.m_nrm as f64,
            wave,
            wave_odd,
            fwd: planner.plan_fft_forward(m),
            inv: planner.plan_fft_inverse(m),
        })
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            dimension: self.dim,
            l_tan: self.l_tan,
            m_tan: self.m_tan,
            l_nrm: self.l_nrm,
            m_nrm: self.m_nrm,
            dt: self.dt,
            t_final: self.t_final,
        }
    }

    /// Number of tangential directions.
    pub fn n_tan_dirs(&self) -> usize {
        self.dim - 1
    }

    pub fn strip_len(&self) -> usize {
        self.n_tan * self.n_rows
    }

    /// Tangential coordinates of line point `i`.
    pub fn tan_coords(&self, i: usize) -> [f64; 2] {
        let m = self.m_tan;
        let x1 = (i % m) as f64 * self.dx_tan;
        let x2 = if self.dim == 3 { (i / m) as f64 * self.dx_tan } else { 0.0 };
        [x1, x2]
    }

    /// Signed normal coordinate of row `j` on `side`.
    pub fn x_nrm(&self, side: Side, j: usize) -> f64 {
        side.sign() * j as f64 * self.dx_nrm
    }

    /// Wave vector of mode `k`.
    pub fn wave(&self, k: usize) -> [f64; 2] {
        self.wave[k]
    }

    /// Wave vector used for first derivatives (Nyquist components removed).
    pub fn wave_odd(&self, k: usize) -> [f64; 2] {
        self.wave_odd[k]
    }

    /// `|k|^2` of mode `k`.
    pub fn wave_sq(&self, k: usize) -> f64 {
        let w = self.wave[k];
        w[0] * w[0] + w[1] * w[1]
    }

    /// Index of the mode with wave vector `-k`.
    pub fn conjugate_mode(&self, k: usize) -> usize {
        let m = self.m_tan;
        let neg = |i: usize| (m - i) % m;
        if self.dim == 2 {
            neg(k)
        } else {
            neg(k % m) + m * neg(k / m)
        }
    }

    // ---- construction ---------------------------------------------------

    pub fn zeros(&self, side: Side) -> StripField {
        StripField { side, data: vec![0.0; self.strip_len()] }
    }

    pub fn constant(&self, side: Side, c: f64) -> StripField {
        StripField { side, data: vec![c; self.strip_len()] }
    }

    /// Samples `f(x', x_N)` on every node of `side`.
    pub fn sample<F: Fn([f64; 2], f64) -> f64>(&self, side: Side, f: F) -> StripField {
        let mut data = vec![0.0; self.strip_len()];
        for j in 0..self.n_rows {
            let z = self.x_nrm(side, j);
            for i in 0..self.n_tan {
                data[j * self.n_tan + i] = f(self.tan_coords(i), z);
            }
        }
        StripField { side, data }
    }

    pub fn line_zeros(&self) -> LineField {
        LineField { data: vec![0.0; self.n_tan] }
    }

    pub fn sample_line<F: Fn([f64; 2]) -> f64>(&self, f: F) -> LineField {
        LineField { data: (0..self.n_tan).map(|i| f(self.tan_coords(i))).collect() }
    }

    pub fn vector_zeros(&self, side: Side) -> Vec<StripField> {
        (0..self.dim).map(|_| self.zeros(side)).collect()
    }

    fn check_strip(&self, f: &StripField) -> Result<()> {
        if f.data.len() != self.strip_len() {
            return Err(Error::Shape(format!(
                "strip field has {} values, grid expects {}",
                f.data.len(),
                self.strip_len()
            )));
        }
        Ok(())
    }

    // ---- tangential transforms ------------------------------------------

    /// In-place forward (unnormalized) or inverse transform of one row.
    fn fft_row(&self, row: &mut [Complex64], forward: bool) {
        let plan = if forward { &self.fwd } else { &self.inv };
        let m = self.m_tan;
        if self.dim == 2 {
            plan.process(row);
            return;
        }
        for chunk in row.chunks_mut(m) {
            plan.process(chunk);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); m];
        for i1 in 0..m {
            for i2 in 0..m {
                col[i2] = row[i1 + m * i2];
            }
            plan.process(&mut col);
            for i2 in 0..m {
                row[i1 + m * i2] = col[i2];
            }
        }
    }

    /// Forward transform of one row of real values: `f_k = (1/n) sum f e^{-ikx}`.
    pub fn row_to_modes(&self, row: &[f64]) -> Vec<Complex64> {
        let scale = 1.0 / self.n_tan as f64;
        let mut buf: Vec<Complex64> = row.iter().map(|&v| Complex64::new(v * scale, 0.0)).collect();
        self.fft_row(&mut buf, true);
        buf
    }

    /// Inverse transform of one row of coefficients (complex result).
    pub fn row_from_modes(&self, modes: &[Complex64]) -> Vec<Complex64> {
        let mut buf = modes.to_vec();
        self.fft_row(&mut buf, false);
        buf
    }

    /// Tangential transform of every row of a strip field.
    pub fn to_modes(&self, f: &StripField) -> Result<SpectralField> {
        self.check_strip(f)?;
        let rows: Vec<Vec<Complex64>> = f
            .data
            .par_chunks(self.n_tan)
            .map(|row| self.row_to_modes(row))
            .collect();
        let mut out = SpectralField::zeros(self.n_tan, self.n_rows);
        for (j, row) in rows.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                out.data[k * self.n_rows + j] = *v;
            }
        }
        Ok(out)
    }

    /// Inverse of [`Grid::to_modes`], keeping the real part.
    pub fn from_modes(&self, s: &SpectralField, side: Side) -> Result<StripField> {
        if s.n_modes != self.n_tan || s.n_rows != self.n_rows {
            return Err(Error::Shape(format!(
                "spectral field is {}x{}, grid expects {}x{}",
                s.n_modes, s.n_rows, self.n_tan, self.n_rows
            )));
        }
        let mut data = vec![0.0; self.strip_len()];
        data.par_chunks_mut(self.n_tan).enumerate().for_each(|(j, row)| {
            let modes: Vec<Complex64> = (0..self.n_tan).map(|k| s.data[k * s.n_rows + j]).collect();
            let back = self.row_from_modes(&modes);
            for (o, v) in row.iter_mut().zip(back) {
                *o = v.re;
            }
        });
        Ok(StripField { side, data })
    }

    pub fn line_to_modes(&self, f: &LineField) -> Vec<Complex64> {
        self.row_to_modes(&f.data)
    }

    pub fn line_from_modes(&self, modes: &[Complex64]) -> LineField {
        LineField { data: self.row_from_modes(modes).into_iter().map(|v| v.re).collect() }
    }

    /// Applies a per-mode multiplier to every row of a strip field.
    fn apply_symbol<S: Fn(usize) -> Complex64 + Sync>(&self, f: &StripField, symbol: S) -> StripField {
        let mut data = vec![0.0; self.strip_len()];
        data.par_chunks_mut(self.n_tan).zip(f.data.par_chunks(self.n_tan)).for_each(|(out, row)| {
            let mut modes = self.row_to_modes(row);
            for (k, v) in modes.iter_mut().enumerate() {
                *v *= symbol(k);
            }
            for (o, v) in out.iter_mut().zip(self.row_from_modes(&modes)) {
                *o = v.re;
            }
        });
        StripField { side: f.side, data }
    }

    fn apply_line_symbol<S: Fn(usize) -> Complex64>(&self, f: &LineField, symbol: S) -> LineField {
        let mut modes = self.line_to_modes(f);
        for (k, v) in modes.iter_mut().enumerate() {
            *v *= symbol(k);
        }
        self.line_from_modes(&modes)
    }

    // ---- derivatives ----------------------------------------------------

    /// Spectral derivative along tangential direction `dir` (0-based).
    pub fn d_tan(&self, f: &StripField, dir: usize) -> StripField {
        self.apply_symbol(f, |k| Complex64::new(0.0, self.wave_odd[k][dir]))
    }

    /// Spectral second derivative `d_a d_b` along tangential directions.
    pub fn d_tan2(&self, f: &StripField, a: usize, b: usize) -> StripField {
        self.apply_symbol(f, |k| Complex64::new(-self.tan2_symbol(k, a, b), 0.0))
    }

    fn tan2_symbol(&self, k: usize, a: usize, b: usize) -> f64 {
        if a == b {
            self.wave[k][a] * self.wave[k][a]
        } else {
            self.wave_odd[k][a] * self.wave_odd[k][b]
        }
    }

    pub fn line_d_tan(&self, f: &LineField, dir: usize) -> LineField {
        self.apply_line_symbol(f, |k| Complex64::new(0.0, self.wave_odd[k][dir]))
    }

    pub fn line_d_tan2(&self, f: &LineField, a: usize, b: usize) -> LineField {
        self.apply_line_symbol(f, |k| Complex64::new(-self.tan2_symbol(k, a, b), 0.0))
    }

    /// Tangential Laplacian of a line field.
    pub fn line_laplacian(&self, f: &LineField) -> LineField {
        self.apply_line_symbol(f, |k| Complex64::new(-self.wave_sq(k), 0.0))
    }

    /// Normal derivative `d/dx_N`: centered in the interior, one-sided second
    /// order on the first and last rows.
    pub fn d_nrm(&self, f: &StripField) -> StripField {
        let n = self.n_tan;
        let m = self.m_nrm;
        let c = f.side.sign() / (2.0 * self.dx_nrm);
        let at = |j: usize, i: usize| f.data[j * n + i];
        let mut data = vec![0.0; self.strip_len()];
        data.par_chunks_mut(n).enumerate().for_each(|(j, out)| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = c * if j == 0 {
                    -3.0 * at(0, i) + 4.0 * at(1, i) - at(2, i)
                } else if j == m {
                    3.0 * at(m, i) - 4.0 * at(m - 1, i) + at(m - 2, i)
                } else {
                    at(j + 1, i) - at(j - 1, i)
                };
            }
        });
        StripField { side: f.side, data }
    }

    /// Second normal derivative, one-sided second order on the end rows.
    pub fn d_nrm2(&self, f: &StripField) -> StripField {
        let n = self.n_tan;
        let m = self.m_nrm;
        let c = 1.0 / (self.dx_nrm * self.dx_nrm);
        let at = |j: usize, i: usize| f.data[j * n + i];
        let mut data = vec![0.0; self.strip_len()];
        data.par_chunks_mut(n).enumerate().for_each(|(j, out)| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = c * if j == 0 {
                    2.0 * at(0, i) - 5.0 * at(1, i) + 4.0 * at(2, i) - at(3, i)
                } else if j == m {
                    2.0 * at(m, i) - 5.0 * at(m - 1, i) + 4.0 * at(m - 2, i) - at(m - 3, i)
                } else {
                    at(j + 1, i) - 2.0 * at(j, i) + at(j - 1, i)
                };
            }
        });
        StripField { side: f.side, data }
    }

    /// Derivative along axis `axis` (0-based, `dim - 1` is the normal direction).
    pub fn d(&self, f: &StripField, axis: usize) -> StripField {
        if axis + 1 == self.dim {
            self.d_nrm(f)
        } else {
            self.d_tan(f, axis)
        }
    }

    /// Full gradient (tangential components first, normal last).
    pub fn gradient(&self, f: &StripField) -> Vec<StripField> {
        (0..self.dim).map(|a| self.d(f, a)).collect()
    }

    /// Fourth-order one-sided normal derivative on the interface row.
    pub fn d_nrm_trace_high_order(&self, f: &StripField) -> LineField {
        let n = self.n_tan;
        let c = f.side.sign() / (12.0 * self.dx_nrm);
        let at = |j: usize, i: usize| f.data[j * n + i];
        LineField {
            data: (0..n)
                .map(|i| {
                    c * (-25.0 * at(0, i) + 48.0 * at(1, i) - 36.0 * at(2, i) + 16.0 * at(3, i)
                        - 3.0 * at(4, i))
                })
                .collect(),
        }
    }

    /// Interface row (`x_N -> 0` limit on the node-centered grid).
    pub fn trace(&self, f: &StripField) -> LineField {
        LineField { data: f.data[..self.n_tan].to_vec() }
    }

    /// Outermost row at `|x_N| = l_nrm`.
    pub fn outer_row(&self, f: &StripField) -> LineField {
        LineField { data: f.data[self.m_nrm * self.n_tan..].to_vec() }
    }

    /// Broadcasts a line field to every row of a strip.
    pub fn broadcast(&self, side: Side, line: &LineField) -> StripField {
        let mut data = Vec::with_capacity(self.strip_len());
        for _ in 0..self.n_rows {
            data.extend_from_slice(&line.data);
        }
        StripField { side, data }
    }

    // ---- quadrature and norms --------------------------------------------

    /// Trapezoid weight of normal row `j`.
    pub fn row_weight(&self, j: usize) -> f64 {
        if j == 0 || j == self.m_nrm {
            0.5 * self.dx_nrm
        } else {
            self.dx_nrm
        }
    }

    /// Tangential cell measure.
    pub fn tan_cell(&self) -> f64 {
        self.dx_tan.powi(self.dim as i32 - 1)
    }

    /// Quadrature of a strip field over its truncated strip.
    pub fn integrate(&self, f: &StripField) -> f64 {
        let mut s = 0.0;
        for j in 0..self.n_rows {
            let row: f64 = f.row(self.n_tan, j).iter().sum();
            s += self.row_weight(j) * row;
        }
        s * self.tan_cell()
    }

    /// Quadrature of a line field over one period cell.
    pub fn integrate_line(&self, f: &LineField) -> f64 {
        f.data.iter().sum::<f64>() * self.tan_cell()
    }

    fn lq_strip(&self, f: &StripField, q: f64) -> f64 {
        if q.is_infinite() {
            return f.max_abs();
        }
        let mut s = 0.0;
        for j in 0..self.n_rows {
            let row: f64 = f.row(self.n_tan, j).iter().map(|v| v.abs().powf(q)).sum();
            s += self.row_weight(j) * row;
        }
        (s * self.tan_cell()).powf(1.0 / q)
    }

    fn lq_line(&self, f: &LineField, q: f64) -> f64 {
        if q.is_infinite() {
            return f.max_abs();
        }
        (f.data.iter().map(|v| v.abs().powf(q)).sum::<f64>() * self.tan_cell()).powf(1.0 / q)
    }

    /// Discrete norm of a strip field.
    pub fn norm(&self, f: &StripField, kind: NormKind) -> Result<f64> {
        self.check_strip(f)?;
        kind.check()?;
        Ok(match kind {
            NormKind::Lq(q) => self.lq_strip(f, q),
            NormKind::W1q(q) => {
                let mut s = self.lq_strip(f, q).powf(q);
                for a in 0..self.dim {
                    s += self.lq_strip(&self.d(f, a), q).powf(q);
                }
                s.powf(1.0 / q)
            }
            NormKind::W2q(q) => {
                let mut s = self.lq_strip(f, q).powf(q);
                for a in 0..self.dim {
                    let da = self.d(f, a);
                    s += self.lq_strip(&da, q).powf(q);
                    for b in 0..self.dim {
                        s += self.lq_strip(&self.d(&da, b), q).powf(q);
                    }
                }
                s.powf(1.0 / q)
            }
            NormKind::Fractional { s, q } => {
                let lifted = self.apply_symbol(f, |k| Complex64::new((1.0 + self.wave_sq(k)).powf(0.5 * s), 0.0));
                let tangential = self.lq_strip(&lifted, q);
                tangential + self.normal_gagliardo(f, s, q)
            }
        })
    }

    /// Discrete norm of a line field; Sobolev kinds are spectral in `x'`.
    pub fn line_norm(&self, f: &LineField, kind: NormKind) -> Result<f64> {
        if f.data.len() != self.n_tan {
            return Err(Error::Shape(format!("line field has {} values, grid expects {}", f.data.len(), self.n_tan)));
        }
        kind.check()?;
        Ok(match kind {
            NormKind::Lq(q) => self.lq_line(f, q),
            NormKind::W1q(q) | NormKind::W2q(q) => {
                let order = if matches!(kind, NormKind::W1q(_)) { 1 } else { 2 };
                let mut s = self.lq_line(f, q).powf(q);
                for a in 0..self.n_tan_dirs() {
                    let da = self.line_d_tan(f, a);
                    s += self.lq_line(&da, q).powf(q);
                    if order == 2 {
                        for b in 0..self.n_tan_dirs() {
                            s += self.lq_line(&self.line_d_tan(&da, b), q).powf(q);
                        }
                    }
                }
                s.powf(1.0 / q)
            }
            NormKind::Fractional { s, q } => {
                let lifted = self.apply_line_symbol(f, |k| Complex64::new((1.0 + self.wave_sq(k)).powf(0.5 * s), 0.0));
                self.lq_line(&lifted, q)
            }
        })
    }

    /// Differenced-quotient seminorm in `x_N`, summed over tangential points.
    fn normal_gagliardo(&self, f: &StripField, s: f64, q: f64) -> f64 {
        if q.is_infinite() {
            return 0.0;
        }
        let n = self.n_tan;
        let total: f64 = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0;
                for a in 0..self.n_rows {
                    for b in 0..self.n_rows {
                        if a == b {
                            continue;
                        }
                        let dz = (a as f64 - b as f64).abs() * self.dx_nrm;
                        let diff = (f.data[a * n + i] - f.data[b * n + i]).abs();
                        acc += self.row_weight(a) * self.row_weight(b) * diff.powf(q) / dz.powf(1.0 + s * q);
                    }
                }
                acc
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum();
        (total * self.tan_cell()).powf(1.0 / q)
    }

    /// Squared L2 norm from tangential mode coefficients (Parseval form).
    pub fn l2_squared_from_modes(&self, s: &SpectralField) -> f64 {
        let mut acc = 0.0;
        for k in 0..s.n_modes {
            for j in 0..s.n_rows {
                acc += self.row_weight(j) * s.at(k, j).norm_sqr();
            }
        }
        acc * self.l_tan.powi(self.dim as i32 - 1)
    }
}

/// Lp-in-time composite of sampled norm values with uniform spacing `dt`.
pub fn time_norm(values: &[f64], dt: f64, p: f64) -> f64 {
    if p.is_infinite() {
        return values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    }
    (values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * dt).powf(1.0 / p)
}

/// Norm families available through [`Grid::norm`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NormKind {
    Lq(f64),
    W1q(f64),
    W2q(f64),
    /// Proxy for a fractional Sobolev norm of order `s` with integrability `q`.
    Fractional { s: f64, q: f64 },
}

impl NormKind {
    fn check(&self) -> Result<()> {
        let (q, s) = match *self {
            NormKind::Lq(q) | NormKind::W1q(q) | NormKind::W2q(q) => (q, 0.5),
            NormKind::Fractional { s, q } => (q, s),
        };
        if !(q >= 1.0) || !(0.0..1.0).contains(&s) {
            return Err(Error::Config(format!("unsupported norm {self:?}")));
        }
        Ok(())
    }
}

/// Real field on one strip, stored row-major by normal row.
#[derive(Clone, Debug, PartialEq)]
pub struct StripField {
    pub side: Side,
    pub data: Vec<f64>,
}

/// Real field on the interface line.
#[derive(Clone, Debug, PartialEq)]
pub struct LineField {
    pub data: Vec<f64>,
}

/// Complex tangential coefficients, stored mode-major: `data[k * n_rows + j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    pub n_modes: usize,
    pub n_rows: usize,
    pub data: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(n_modes: usize, n_rows: usize) -> Self {
        Self { n_modes, n_rows, data: vec![Complex64::new(0.0, 0.0); n_modes * n_rows] }
    }

    #[inline]
    pub fn at(&self, k: usize, j: usize) -> Complex64 {
        self.data[k * self.n_rows + j]
    }

    pub fn mode(&self, k: usize) -> &[Complex64] {
        &self.data[k * self.n_rows..(k + 1) * self.n_rows]
    }

    pub fn mode_mut(&mut self, k: usize) -> &mut [Complex64] {
        &mut self.data[k * self.n_rows..(k + 1) * self.n_rows]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, v| a.max(v.norm()))
    }
}

impl StripField {
    #[inline]
    pub fn at(&self, n_tan: usize, j: usize, i: usize) -> f64 {
        self.data[j * n_tan + i]
    }

    pub fn row(&self, n_tan: usize, j: usize) -> &[f64] {
        &self.data[j * n_tan..(j + 1) * n_tan]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().fold(f64::INFINITY, |a, &v| a.min(v))
    }

    pub fn max(&self) -> f64 {
        self.data.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> StripField {
        StripField { side: self.side, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map<F: Fn(f64, f64) -> f64>(&self, other: &StripField, f: F) -> StripField {
        debug_assert_eq!(self.data.len(), other.data.len());
        StripField { side: self.side, data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() }
    }

    pub fn scale(&self, c: f64) -> StripField {
        self.map(|v| c * v)
    }

    pub fn add_scaled(&mut self, c: f64, other: &StripField) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    /// Sum of squares (unweighted), used for discrete change norms.
    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

impl LineField {
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> LineField {
        LineField { data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map<F: Fn(f64, f64) -> f64>(&self, other: &LineField, f: F) -> LineField {
        LineField { data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() }
    }

    pub fn scale(&self, c: f64) -> LineField {
        self.map(|v| c * v)
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

macro_rules! field_ops {
    ($t:ident) => {
        impl Add for &$t {
            type Output = $t;
            fn add(self, o: &$t) -> $t {
                self.zip_map(o, |a, b| a + b)
            }
        }
        impl Sub for &$t {
            type Output = $t;
            fn sub(self, o: &$t) -> $t {
                self.zip_map(o, |a, b| a - b)
            }
        }
        impl Mul for &$t {
            type Output = $t;
            fn mul(self, o: &$t) -> $t {
                self.zip_map(o, |a, b| a * b)
            }
        }
        impl Mul<&$t> for f64 {
            type Output = $t;
            fn mul(self, o: &$t) -> $t {
                o.scale(self)
            }
        }
        impl Add<f64> for &$t {
            type Output = $t;
            fn add(self, c: f64) -> $t {
                self.map(|a| a + c)
            }
        }
        impl Neg for &$t {
            type Output = $t;
            fn neg(self) -> $t {
                self.scale(-1.0)
            }
        }
    };
}

field_ops!(StripField);
field_ops!(LineField);

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(m_tan: usize, m_nrm: usize) -> Grid {
        Grid::new(&GridSpec { m_tan, m_nrm, ..GridSpec::default() }).unwrap()
    }

    fn pseudo_random_field(g: &Grid, side: Side, seed: u64) -> StripField {
        // Linear congruential sequence; deterministic and dependency free.
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut f = g.zeros(side);
        for v in f.data.iter_mut() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0;
        }
        f
    }

    #[test]
    fn rejects_invalid_grids() {
        for spec in [
            GridSpec { m_tan: 12, ..GridSpec::default() },
            GridSpec { m_tan: 4, ..GridSpec::default() },
            GridSpec { m_nrm: 4, ..GridSpec::default() },
            GridSpec { dt: 0.0, ..GridSpec::default() },
            GridSpec { l_nrm: -1.0, ..GridSpec::default() },
            GridSpec { dimension: 4, ..GridSpec::default() },
        ] {
            assert!(Grid::new(&spec).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn constant_field_has_only_the_zero_mode() {
        let g = grid(16, 8);
        let s = g.to_modes(&g.constant(Side::Plus, 2.5)).unwrap();
        for k in 0..g.n_tan {
            for j in 0..g.n_rows {
                let expect = if k == 0 { 2.5 } else { 0.0 };
                assert!((s.at(k, j) - Complex64::new(expect, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn cosine_has_half_coefficients_at_plus_minus_one() {
        let g = grid(16, 8);
        let f = g.sample(Side::Minus, |x, _| (2.0 * PI * x[0] / g.l_tan).cos());
        let s = g.to_modes(&f).unwrap();
        for k in 0..g.n_tan {
            let expect = if k == 1 || k == g.n_tan - 1 { 0.5 } else { 0.0 };
            assert!((s.at(k, 3) - Complex64::new(expect, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn round_trip_of_random_field() {
        for dim in [2, 3] {
            let g = Grid::new(&GridSpec { dimension: dim, m_tan: 16, m_nrm: 8, ..GridSpec::default() }).unwrap();
            let f = pseudo_random_field(&g, Side::Plus, 7);
            let back = g.from_modes(&g.to_modes(&f).unwrap(), Side::Plus).unwrap();
            assert!((&back - &f).max_abs() < 1e-12);
        }
    }

    #[test]
    fn parseval_holds_for_random_fields() {
        for dim in [2, 3] {
            let g = Grid::new(&GridSpec { dimension: dim, m_tan: 16, m_nrm: 8, ..GridSpec::default() }).unwrap();
            let f = pseudo_random_field(&g, Side::Minus, 3);
            let direct = g.norm(&f, NormKind::Lq(2.0)).unwrap().powi(2);
            let spectral = g.l2_squared_from_modes(&g.to_modes(&f).unwrap());
            assert!(((direct - spectral) / direct).abs() < 1e-10);
        }
    }

    #[test]
    fn size_mismatch_is_reported() {
        let g = grid(16, 8);
        let f = StripField { side: Side::Plus, data: vec![0.0; 5] };
        assert!(matches!(g.to_modes(&f), Err(Error::Shape(_))));
    }

    #[test]
    fn trace_examples() {
        let g = grid(16, 16);
        let f = g.sample(Side::Plus, |_, z| z);
        assert!(g.trace(&f).max_abs() == 0.0);
        let f = g.sample(Side::Plus, |x, z| (-z).exp() * (2.0 * PI * x[0] / g.l_tan).cos());
        let t = g.trace(&f);
        for i in 0..g.n_tan {
            assert_eq!(t.data[i], (2.0 * PI * g.tan_coords(i)[0] / g.l_tan).cos());
        }
        // Jump convention: minus-side trace minus plus-side trace.
        let jump = &g.trace(&g.constant(Side::Minus, 1.0)) - &g.trace(&g.constant(Side::Plus, 3.0));
        assert!(jump.data.iter().all(|&v| v == -2.0));
    }

    #[test]
    fn norm_examples() {
        let g = grid(16, 16);
        let zero = g.zeros(Side::Plus);
        for kind in [
            NormKind::Lq(2.0),
            NormKind::Lq(f64::INFINITY),
            NormKind::W1q(2.0),
            NormKind::W2q(3.0),
            NormKind::Fractional { s: 0.5, q: 2.0 },
        ] {
            assert_eq!(g.norm(&zero, kind).unwrap(), 0.0);
        }
        let one = g.constant(Side::Plus, 1.0);
        let l2 = g.norm(&one, NormKind::Lq(2.0)).unwrap();
        assert!((l2 - (g.l_tan * g.l_nrm).sqrt()).abs() < 1e-12);
        let s = g.sample(Side::Plus, |x, _| (2.0 * PI * x[0] / g.l_tan).sin());
        let l2sq = g.norm(&s, NormKind::Lq(2.0)).unwrap().powi(2);
        assert!((l2sq - g.l_tan * g.l_nrm / 2.0).abs() < 1e-10);
        assert!(g.norm(&s, NormKind::Lq(0.5)).is_err());
    }

    #[test]
    fn normal_derivatives_are_second_order_and_oriented() {
        let err = |m: usize, side: Side| {
            let g = Grid::new(&GridSpec { m_tan: 8, m_nrm: m, l_nrm: 2.0, ..GridSpec::default() }).unwrap();
            let f = g.sample(side, |_, z| (0.7 * z).sin());
            let d = g.d_nrm(&f);
            let d2 = g.d_nrm2(&f);
            let e1 = (&d - &g.sample(side, |_, z| 0.7 * (0.7 * z).cos())).max_abs();
            let e2 = (&d2 - &g.sample(side, |_, z| -0.49 * (0.7 * z).sin())).max_abs();
            (e1, e2)
        };
        for side in [Side::Plus, Side::Minus] {
            let (a1, a2) = err(16, side);
            let (b1, b2) = err(32, side);
            assert!((a1 / b1).log2() > 1.8, "first derivative order {}", (a1 / b1).log2());
            assert!((a2 / b2).log2() > 1.8, "second derivative order {}", (a2 / b2).log2());
        }
    }

    #[test]
    fn high_order_trace_derivative_is_fourth_order() {
        let err = |m: usize| {
            let g = Grid::new(&GridSpec { m_tan: 8, m_nrm: m, l_nrm: 2.0, ..GridSpec::default() }).unwrap();
            let f = g.sample(Side::Minus, |_, z| (1.3 * z).exp());
            g.d_nrm_trace_high_order(&f).data.iter().fold(0.0f64, |a, v| a.max((v - 1.3).abs()))
        };
        let order = (err(16) / err(32)).log2();
        assert!(order > 3.7, "order {order}");
    }

    #[test]
    fn tangential_derivative_is_spectral() {
        let g = grid(32, 8);
        let k = 2.0 * PI / g.l_tan * 3.0;
        let f = g.sample(Side::Plus, |x, z| (k * x[0]).sin() * (1.0 + z));
        let d = g.d_tan(&f, 0);
        let exact = g.sample(Side::Plus, |x, z| k * (k * x[0]).cos() * (1.0 + z));
        assert!((&d - &exact).max_abs() < 1e-11);
    }

    #[test]
    fn conjugate_mode_negates_wave_vector() {
        let g = Grid::new(&GridSpec { dimension: 3, m_tan: 8, m_nrm: 8, ..GridSpec::default() }).unwrap();
        for k in 0..g.n_tan {
            let c = g.conjugate_mode(k);
            let (a, b) = (g.wave_odd(k), g.wave_odd(c));
            assert_eq!([a[0] + b[0], a[1] + b[1]], [0.0, 0.0]);
        }
    }

    proptest! {
        #[test]
        fn trace_is_linear(a in -3.0..3.0f64, b in -3.0..3.0f64, s1 in 0u64..1000, s2 in 0u64..1000) {
            let g = grid(8, 8);
            let f = pseudo_random_field(&g, Side::Plus, s1);
            let h = pseudo_random_field(&g, Side::Plus, s2);
            let lhs = g.trace(&(&f.scale(a) + &h.scale(b)));
            let rhs = &g.trace(&f).scale(a) + &g.trace(&h).scale(b);
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn lq_is_dominated_by_w1q(seed in 0u64..1000, q in 1.0..4.0f64) {
            let g = grid(8, 8);
            let f = pseudo_random_field(&g, Side::Minus, seed);
            prop_assert!(g.norm(&f, NormKind::Lq(q)).unwrap() <= g.norm(&f, NormKind::W1q(q)).unwrap());
        }

        #[test]
        fn parseval_random(seed in 0u64..1000) {
            let g = grid(8, 8);
            let f = pseudo_random_field(&g, Side::Plus, seed);
            let direct = g.norm(&f, NormKind::Lq(2.0)).unwrap().powi(2);
            let spectral = g.l2_squared_from_modes(&g.to_modes(&f).unwrap());
            prop_assert!(((direct - spectral) / direct).abs() < 1e-10);
        }
    }
}
