//! Interface geometry: the harmonic-type extension `H` of the height `h`,
//! the flattening coefficients derived from it, and the transform gate.
//!
//! Physical points are `y = (x', x_N + H(x, t))`. Per tangential mode the
//! extension is `H_k(x_N) = h_k exp(-omega_k |x_N|)` with
//! `omega_k = sqrt(1 + |k|^2)`, so `(1 - Delta) H = 0` holds on each open strip
//! exactly and `H = h` on the interface row.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constitutive::{Side, Tensor};
use crate::error::{Error, Result};
use crate::grid::{Grid, LineField, SpectralField, StripField};

/// Minimum admissible value of `1 + H_N`.
pub const GATE_THRESHOLD: f64 = 0.5;

/// Which curvature expression enters the normal-stress data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureForm {
    /// `div'(grad'h / (1 + |grad'h|^2))`.
    #[default]
    Printed,
    /// Classical graph curvature `div'(grad'h / sqrt(1 + |grad'h|^2))`.
    Classical,
}

/// Extension fields on one strip.
#[derive(Clone, Debug)]
pub struct StripGeometry {
    pub side: Side,
    /// `H`.
    pub h: StripField,
    /// `H_j = d_j H`, `j = 1..N` stored at index `j - 1`.
    pub dh: Vec<StripField>,
    /// `H_0 = d_t H`.
    pub h0: StripField,
    /// `K_j = H_j / (1 + H_N)` for `j = 0..N` (index 0 is the time coefficient).
    pub k: Vec<StripField>,
}

impl StripGeometry {
    /// `H_N`.
    pub fn h_n(&self) -> &StripField {
        self.dh.last().expect("at least one direction")
    }

    /// `1 + H_N`.
    pub fn jacobian(&self) -> StripField {
        self.h_n().map(|v| 1.0 + v)
    }

    /// `K_j` for a spatial direction `j` in `0..N` (0-based axis).
    pub fn k_axis(&self, axis: usize) -> &StripField {
        &self.k[axis + 1]
    }

    /// `H_j` for a spatial direction (0-based axis).
    pub fn h_axis(&self, axis: usize) -> &StripField {
        &self.dh[axis]
    }
}

/// The extended height and every coefficient derived from it.
#[derive(Clone, Debug)]
pub struct ExtendedHeight {
    pub dim: usize,
    pub h_line: LineField,
    pub dhdt_line: LineField,
    pub plus: StripGeometry,
    pub minus: StripGeometry,
    /// `min (1 + H_N)` over both strips.
    pub gate: f64,
}

impl ExtendedHeight {
    /// Builds the extension of `h` and of its time derivative `dhdt` (zero if absent).
    pub fn new(grid: &Grid, h: &LineField, dhdt: Option<&LineField>) -> Result<Self> {
        if h.data.len() != grid.n_tan {
            return Err(Error::Shape(format!("height has {} values, grid expects {}", h.data.len(), grid.n_tan)));
        }
        let zero = grid.line_zeros();
        let dhdt = dhdt.unwrap_or(&zero);
        let h_modes = grid.line_to_modes(h);
        let t_modes = grid.line_to_modes(dhdt);
        let plus = Self::strip(grid, Side::Plus, &h_modes, &t_modes)?;
        let minus = Self::strip(grid, Side::Minus, &h_modes, &t_modes)?;
        let gate = plus.h_n().min().min(minus.h_n().min()) + 1.0;
        Ok(Self { dim: grid.dim, h_line: h.clone(), dhdt_line: dhdt.clone(), plus, minus, gate })
    }

    /// Flat geometry `h = 0`.
    pub fn flat(grid: &Grid) -> Self {
        Self::new(grid, &grid.line_zeros(), None).expect("flat geometry")
    }

    fn strip(grid: &Grid, side: Side, h_modes: &[Complex64], t_modes: &[Complex64]) -> Result<StripGeometry> {
        let n = grid.dim;
        let sign = side.sign();
        let profile = |k: usize, j: usize| {
            let omega = (1.0 + grid.wave_sq(k)).sqrt();
            (-omega * j as f64 * grid.dx_nrm).exp()
        };
        let build = |coef: &dyn Fn(usize) -> Complex64| -> Result<StripField> {
            let mut s = SpectralField::zeros(grid.n_tan, grid.n_rows);
            for k in 0..grid.n_tan {
                let c = coef(k);
                for (j, v) in s.mode_mut(k).iter_mut().enumerate() {
                    *v = c * profile(k, j);
                }
            }
            grid.from_modes(&s, side)
        };
        let h = build(&|k| h_modes[k])?;
        let mut dh = Vec::with_capacity(n);
        for dir in 0..n - 1 {
            dh.push(build(&|k| h_modes[k] * Complex64::new(0.0, grid.wave_odd(k)[dir]))?);
        }
        dh.push(build(&|k| h_modes[k] * (-sign * (1.0 + grid.wave_sq(k)).sqrt()))?);
        let h0 = build(&|k| t_modes[k])?;
        let jac = dh[n - 1].map(|v| 1.0 + v);
        let mut kk = Vec::with_capacity(n + 1);
        kk.push(h0.zip_map(&jac, |a, b| a / b));
        for d in &dh {
            kk.push(d.zip_map(&jac, |a, b| a / b));
        }
        Ok(StripGeometry { side, h, dh, h0, k: kk })
    }

    pub fn side(&self, side: Side) -> &StripGeometry {
        match side {
            Side::Plus => &self.plus,
            Side::Minus => &self.minus,
        }
    }

    /// Passes iff `min (1 + H_N) >= 1/2`.
    pub fn transform_gate(&self) -> Result<()> {
        if self.gate >= GATE_THRESHOLD && self.gate.is_finite() {
            Ok(())
        } else {
            Err(Error::Gate(format!("min(1 + H_N) = {:.6} < {GATE_THRESHOLD}", self.gate)))
        }
    }

    /// `Q` at node `idx` of `side`: maps hat gradients to physical gradients.
    pub fn q(&self, side: Side, idx: usize) -> Tensor {
        let g = self.side(side);
        let n = self.dim;
        let mut t = Tensor::identity(n);
        for i in 0..n - 1 {
            t.a[i][n - 1] = -g.k_axis(i).data[idx];
        }
        t.a[n - 1][n - 1] = 1.0 / (1.0 + g.h_n().data[idx]);
        t
    }

    /// `Q_1` at node `idx`: zero except the last column `(H_1, .., H_N)`.
    pub fn q1(&self, side: Side, idx: usize) -> Tensor {
        let g = self.side(side);
        let n = self.dim;
        let mut t = Tensor::zeros(n);
        for i in 0..n {
            t.a[i][n - 1] = g.dh[i].data[idx];
        }
        t
    }

    /// `Q^{-1} = I + Q_1` at node `idx`.
    pub fn q_inv(&self, side: Side, idx: usize) -> Tensor {
        let q1 = self.q1(side, idx);
        let mut t = Tensor::identity(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                t.a[i][j] += q1.a[i][j];
            }
        }
        t
    }

    /// Physical gradient of a field given in flattened coordinates:
    /// `d_j f = d_j f_hat - K_j d_N f_hat`.
    pub fn pullback_gradient(&self, grid: &Grid, f: &StripField) -> Vec<StripField> {
        let g = self.side(f.side);
        let dn = grid.d_nrm(f);
        (0..grid.dim)
            .map(|a| {
                let da = if a + 1 == grid.dim { dn.clone() } else { grid.d_tan(f, a) };
                let ka = g.k_axis(a);
                let mut out = da;
                for ((o, k), n) in out.data.iter_mut().zip(&ka.data).zip(&dn.data) {
                    *o -= k * n;
                }
                out
            })
            .collect()
    }

    /// Physical time derivative: `d_t f = d_t f_hat - K_0 d_N f_hat`.
    pub fn pullback_time(&self, grid: &Grid, f: &StripField, f_t: &StripField) -> StripField {
        let g = self.side(f.side);
        let dn = grid.d_nrm(f);
        let mut out = f_t.clone();
        for ((o, k), n) in out.data.iter_mut().zip(&g.k[0].data).zip(&dn.data) {
            *o -= k * n;
        }
        out
    }

    /// `V_div`, `f_-`, `ff_-` and the agreement of the three divergence forms.
    pub fn divergence_transforms(&self, grid: &Grid, u: &[StripField]) -> DivergenceTransforms {
        let n = grid.dim;
        let side = u[0].side;
        let g = self.side(side);
        let dn: Vec<StripField> = u.iter().map(|c| grid.d_nrm(c)).collect();
        let mut div = grid.zeros(side);
        for (a, c) in u.iter().enumerate() {
            let d = if a + 1 == n { dn[a].clone() } else { grid.d_tan(c, a) };
            div.add_scaled(1.0, &d);
        }
        let mut v_div = grid.zeros(side);
        for a in 0..n {
            v_div.add_scaled(-1.0, &(g.k_axis(a) * &dn[a]));
        }
        let hn = g.h_n();
        let mut f_minus = grid.zeros(side);
        for a in 0..n - 1 {
            f_minus.add_scaled(1.0, &(g.h_axis(a) * &dn[a]));
            f_minus.add_scaled(-1.0, &(hn * &grid.d_tan(&u[a], a)));
        }
        let mut ff_minus: Vec<StripField> = (0..n - 1).map(|a| -&(hn * &u[a])).collect();
        let mut last = grid.zeros(side);
        for a in 0..n - 1 {
            last.add_scaled(1.0, &(g.h_axis(a) * &u[a]));
        }
        ff_minus.push(last);
        let mut div_ff = grid.zeros(side);
        for (a, c) in ff_minus.iter().enumerate() {
            div_ff.add_scaled(1.0, &grid.d(c, a));
        }
        let jac = g.jacobian();
        let form1 = &div + &v_div;
        let form2 = (&div - &f_minus).zip_map(&jac, |a, b| a / b);
        let form3 = (&div - &div_ff).zip_map(&jac, |a, b| a / b);
        DivergenceTransforms {
            div_hat: div,
            v_div,
            f_minus,
            ff_minus,
            algebraic_gap: (&form1 - &form2).max_abs(),
            conservative_gap: (&form1 - &form3).max_abs(),
        }
    }

    /// `V_D(u)_{ij} = -(K_i d_N u_j + K_j d_N u_i) / 2`.
    pub fn strain_correction(&self, grid: &Grid, u: &[StripField]) -> Vec<Vec<StripField>> {
        let n = grid.dim;
        let g = self.side(u[0].side);
        let dn: Vec<StripField> = u.iter().map(|c| grid.d_nrm(c)).collect();
        let mut out = vec![vec![grid.zeros(u[0].side); n]; n];
        for i in 0..n {
            for j in i..n {
                let v = (&(g.k_axis(i) * &dn[j]) + &(g.k_axis(j) * &dn[i])).scale(-0.5);
                out[j][i] = v.clone();
                out[i][j] = v;
            }
        }
        out
    }

    /// Row-wise `V_div` of a tensor field: `-(sum_j K_j d_N G_ij)_i`.
    pub fn v_div_tensor(&self, grid: &Grid, t: &[Vec<StripField>]) -> Vec<StripField> {
        let n = grid.dim;
        let g = self.side(t[0][0].side);
        (0..n)
            .map(|i| {
                let mut acc = grid.zeros(t[0][0].side);
                for j in 0..n {
                    acc.add_scaled(-1.0, &(g.k_axis(j) * &grid.d_nrm(&t[i][j])));
                }
                acc
            })
            .collect()
    }

    /// Tangential gradient of the height on the interface line.
    pub fn grad_h(&self, grid: &Grid) -> Vec<LineField> {
        (0..grid.dim - 1).map(|a| grid.line_d_tan(&self.h_line, a)).collect()
    }

    /// `sqrt(1 + |grad'h|^2)` on the interface line.
    pub fn area_factor(&self, grid: &Grid) -> LineField {
        area_factor(&self.grad_h(grid))
    }
}

/// `sqrt(1 + |g|^2)` pointwise.
pub fn area_factor(grad: &[LineField]) -> LineField {
    let n = grad.first().map(|g| g.data.len()).unwrap_or(0);
    LineField {
        data: (0..n)
            .map(|i| (1.0 + grad.iter().map(|g| g.data[i] * g.data[i]).sum::<f64>()).sqrt())
            .collect(),
    }
}

/// Output of [`ExtendedHeight::divergence_transforms`].
#[derive(Clone, Debug)]
pub struct DivergenceTransforms {
    pub div_hat: StripField,
    pub v_div: StripField,
    pub f_minus: StripField,
    pub ff_minus: Vec<StripField>,
    /// `max |(div + V_div) - (div - f_-)/(1 + H_N)|`.
    pub algebraic_gap: f64,
    /// `max |(div + V_div) - (div - div ff_-)/(1 + H_N)|`.
    pub conservative_gap: f64,
}

/// Unit normal `(-grad'h, 1)/W` and curvature of the graph of `h`.
pub fn normal_and_curvature(grid: &Grid, h: &LineField, form: CurvatureForm) -> (Vec<LineField>, LineField) {
    let grad: Vec<LineField> = (0..grid.dim - 1).map(|a| grid.line_d_tan(h, a)).collect();
    let w = area_factor(&grad);
    let mut normal: Vec<LineField> = grad.iter().map(|g| g.zip_map(&w, |a, b| -a / b)).collect();
    normal.push(w.map(|b| 1.0 / b));
    let mut curvature = grid.line_zeros();
    for (a, g) in grad.iter().enumerate() {
        let flux = match form {
            CurvatureForm::Printed => g.zip_map(&w, |a, b| a / (b * b)),
            CurvatureForm::Classical => g.zip_map(&w, |a, b| a / b),
        };
        let d = grid.line_d_tan(&flux, a);
        curvature = &curvature + &d;
    }
    (normal, curvature)
}
