//! Density transport along characteristics of the extended upper velocity.
//!
//! Points are `[x_1, .., x_{N-1}, x_N, unused..]` with the normal coordinate
//! at index `dim - 1`. Grid-sampled fields live on both strips; the normal
//! interpolation stencil never crosses `x_N = 0`, since the transport
//! velocity jumps there together with the extension coefficients `K_j`.

use rayon::prelude::*;

use crate::constitutive::Side;
use crate::error::{Error, Result};
use crate::geometry::ExtendedHeight;
use crate::grid::{Grid, StripField};

pub type Point = [f64; 3];

/// Default bound on the time integral of `sup |grad v|`.
pub const DEFAULT_EPS1: f64 = 0.1;

/// Smallest admissible Jacobian determinant of the forward flow map.
pub const MIN_FLOW_JACOBIAN: f64 = 0.5;

/// A field sampled on both strips; the interface row is stored twice.
#[derive(Clone, Debug, PartialEq)]
pub struct BiField {
    pub plus: StripField,
    pub minus: StripField,
}

/// Cubic Lagrange weights for nodes at offsets `-1, 0, 1, 2` evaluated at `f`.
fn lagrange4(f: f64) -> [f64; 4] {
    [
        -f * (f - 1.0) * (f - 2.0) / 6.0,
        (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0,
        -(f + 1.0) * f * (f - 2.0) / 2.0,
        (f + 1.0) * f * (f - 1.0) / 6.0,
    ]
}

/// Periodic tangential stencil: first index and weights.
fn tan_stencil(x: f64, dx: f64) -> (isize, [f64; 4]) {
    let s = x / dx;
    let i0 = s.floor();
    (i0 as isize - 1, lagrange4(s - i0))
}

/// Cubic interpolation of one strip at tangential position `p` and distance
/// `r >= 0` from the interface; beyond the last row the field is constant.
fn interp_strip(grid: &Grid, f: &StripField, p: &Point, r: f64) -> f64 {
    let m = grid.m_nrm;
    let rr = (r / grid.dx_nrm).clamp(0.0, m as f64);
    let start = ((rr.floor() as isize) - 1).clamp(0, m as isize - 3) as usize;
    let wn = lagrange4(rr - (start + 1) as f64);
    let mt = grid.m_tan as isize;
    let (i1, w1) = tan_stencil(p[0], grid.dx_tan);
    let wrap = |i: isize| i.rem_euclid(mt) as usize;
    let mut acc = 0.0;
    for (a, wa) in wn.iter().enumerate() {
        let row = f.row(grid.n_tan, start + a);
        if grid.dim == 2 {
            let mut s = 0.0;
            for (b, wb) in w1.iter().enumerate() {
                s += wb * row[wrap(i1 + b as isize)];
            }
            acc += wa * s;
        } else {
            let (i2, w2) = tan_stencil(p[1], grid.dx_tan);
            let mut s = 0.0;
            for (c, wc) in w2.iter().enumerate() {
                let base = wrap(i2 + c as isize) * grid.m_tan;
                for (b, wb) in w1.iter().enumerate() {
                    s += wc * wb * row[base + wrap(i1 + b as isize)];
                }
            }
            acc += wa * s;
        }
    }
    acc
}

impl BiField {
    pub fn zeros(grid: &Grid) -> Self {
        Self { plus: grid.zeros(Side::Plus), minus: grid.zeros(Side::Minus) }
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Self { plus: grid.constant(Side::Plus, c), minus: grid.constant(Side::Minus, c) }
    }

    pub fn side(&self, side: Side) -> &StripField {
        match side {
            Side::Plus => &self.plus,
            Side::Minus => &self.minus,
        }
    }

    /// Side-aware cubic interpolation at `p`.
    pub fn interpolate(&self, grid: &Grid, p: &Point) -> f64 {
        let z = p[grid.dim - 1];
        let f = if z >= 0.0 { &self.plus } else { &self.minus };
        interp_strip(grid, f, p, z.abs())
    }

    pub fn min(&self) -> f64 {
        self.plus.min().min(self.minus.min())
    }

    pub fn max_abs(&self) -> f64 {
        self.plus.max_abs().max(self.minus.max_abs())
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> BiField {
        BiField { plus: self.plus.map(&f), minus: self.minus.map(&f) }
    }
}

/// `Ext[f](x', x_N) = 3 f(x', -x_N) - 2 f(x', -2 x_N)` on the lower nodes;
/// rows beyond the strip continue the deepest value.
pub fn lions_extend(grid: &Grid, f: &StripField) -> BiField {
    let (n, m) = (grid.n_tan, grid.m_nrm);
    let mut minus = grid.zeros(Side::Minus);
    for j in 0..=m {
        let near = f.row(n, j);
        let far = f.row(n, (2 * j).min(m));
        for i in 0..n {
            minus.data[j * n + i] = 3.0 * near[i] - 2.0 * far[i];
        }
    }
    BiField { plus: StripField { side: Side::Plus, data: f.data.clone() }, minus }
}

/// Lions extension of an upper-strip field at an arbitrary point.
pub fn lions_extend_at(grid: &Grid, f: &StripField, p: &Point) -> f64 {
    let z = p[grid.dim - 1];
    if z >= 0.0 {
        interp_strip(grid, f, p, z)
    } else {
        3.0 * interp_strip(grid, f, p, -z) - 2.0 * interp_strip(grid, f, p, -2.0 * z)
    }
}

/// A transport velocity together with the rate `div w + V_div` entering the
/// exponential density factor.
pub trait VelocityField: Sync {
    fn dim(&self) -> usize;

    /// Velocity and rate at `x` and time `t`.
    fn eval(&self, x: &Point, t: f64) -> (Point, f64);

    /// Whether `x` lies inside the truncated computational box.
    fn in_box(&self, _x: &Point) -> bool {
        true
    }
}

/// End point of a characteristic and the rate integral along it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Trace {
    pub point: Point,
    /// `int rate ds` over the traversed time interval (orientation-free).
    pub integral: f64,
    pub left_box: bool,
}

/// Integrates `dx/ds = v(x, s)` from `t_from` to `t_to` with `steps` RK4 steps.
pub fn integrate_characteristic<V: VelocityField + ?Sized>(
    field: &V,
    x0: Point,
    t_from: f64,
    t_to: f64,
    steps: usize,
) -> Trace {
    let dim = field.dim();
    let steps = steps.max(1);
    let h = (t_to - t_from) / steps as f64;
    let mut x = x0;
    let mut a = 0.0;
    let mut left_box = !field.in_box(&x);
    let shifted = |x: &Point, k: &Point, c: f64| {
        let mut y = *x;
        for d in 0..dim {
            y[d] += c * k[d];
        }
        y
    };
    for s in 0..steps {
        let t = t_from + s as f64 * h;
        let (k1, r1) = field.eval(&x, t);
        let x2 = shifted(&x, &k1, 0.5 * h);
        let (k2, r2) = field.eval(&x2, t + 0.5 * h);
        let x3 = shifted(&x, &k2, 0.5 * h);
        let (k3, r3) = field.eval(&x3, t + 0.5 * h);
        let x4 = shifted(&x, &k3, h);
        let (k4, r4) = field.eval(&x4, t + h);
        for d in 0..dim {
            x[d] += h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
        }
        a += h / 6.0 * (r1 + 2.0 * r2 + 2.0 * r3 + r4);
        left_box |= !field.in_box(&x);
    }
    let integral = if t_to >= t_from { a } else { -a };
    Trace { point: x, integral, left_box }
}

/// Forward and backward characteristic maps of a set of points over `[t0, t1]`.
#[derive(Clone, Debug)]
pub struct FlowMap {
    pub t0: f64,
    pub t1: f64,
    /// `xi(eta, t1)` for each starting point `eta` at `t0`.
    pub forward: Vec<Point>,
    /// `int_{t0}^{t1} rate(xi(eta, s), s) ds` along the forward curves.
    pub forward_integral: Vec<f64>,
    /// `eta(xi, t1)`: foot at `t0` of the curve through each point at `t1`.
    pub backward: Vec<Point>,
    /// Rate integral along the backward curves over `[t0, t1]`.
    pub backward_integral: Vec<f64>,
    /// Number of curves that left the truncated box.
    pub left_box: usize,
}

/// Integrates the characteristics through `points` forward from `t0` and
/// backward from `t1`.
pub fn advect_flow<V: VelocityField + ?Sized>(field: &V, points: &[Point], t0: f64, t1: f64, steps: usize) -> FlowMap {
    let fwd: Vec<Trace> = points.par_iter().map(|p| integrate_characteristic(field, *p, t0, t1, steps)).collect();
    let bwd: Vec<Trace> = points.par_iter().map(|p| integrate_characteristic(field, *p, t1, t0, steps)).collect();
    FlowMap {
        t0,
        t1,
        forward: fwd.iter().map(|t| t.point).collect(),
        forward_integral: fwd.iter().map(|t| t.integral).collect(),
        backward: bwd.iter().map(|t| t.point).collect(),
        backward_integral: bwd.iter().map(|t| t.integral).collect(),
        left_box: fwd.iter().chain(&bwd).filter(|t| t.left_box).count(),
    }
}

/// `(offset + base(eta)) exp(-A)` at the feet of the backward curves.
pub fn density_from_flow<F: Fn(&Point) -> f64 + Sync>(flow: &FlowMap, offset: f64, base: F) -> Vec<f64> {
    flow.backward
        .par_iter()
        .zip(&flow.backward_integral)
        .map(|(eta, a)| (offset + base(eta)) * (-a).exp())
        .collect()
}

/// Node coordinates of one strip, in storage order.
pub fn node_points(grid: &Grid, side: Side) -> Vec<Point> {
    let mut out = Vec::with_capacity(grid.strip_len());
    for j in 0..grid.n_rows {
        let z = grid.x_nrm(side, j);
        for i in 0..grid.n_tan {
            let t = grid.tan_coords(i);
            out.push(if grid.dim == 2 { [t[0], z, 0.0] } else { [t[0], t[1], z] });
        }
    }
    out
}

/// Transport velocity and rate sampled at one time level.
#[derive(Clone, Debug)]
pub struct TransportLevel {
    pub v: Vec<BiField>,
    pub rate: BiField,
}

impl TransportLevel {
    pub fn zeros(grid: &Grid) -> Self {
        Self { v: (0..grid.dim).map(|_| BiField::zeros(grid)).collect(), rate: BiField::zeros(grid) }
    }

    /// `w = Ext[u_+]`, `v = (w', w_N - K_0 - sum_j K_j w_j)` and
    /// `rate = div w + V_div(w, H)` on both strips.
    pub fn from_upper_velocity(grid: &Grid, u_plus: &[StripField], geom: &ExtendedHeight) -> Self {
        let n = grid.dim;
        let w: Vec<BiField> = u_plus.iter().map(|c| lions_extend(grid, c)).collect();
        let mut v: Vec<BiField> = w.clone();
        let mut rate = BiField::zeros(grid);
        for side in [Side::Plus, Side::Minus] {
            let g = geom.side(side);
            let ws: Vec<StripField> = w.iter().map(|b| b.side(side).clone()).collect();
            let mut vn = &ws[n - 1] - &g.k[0];
            for (a, wa) in ws.iter().enumerate() {
                vn.add_scaled(-1.0, &(g.k_axis(a) * wa));
            }
            let t = geom.divergence_transforms(grid, &ws);
            let r = &t.div_hat + &t.v_div;
            match side {
                Side::Plus => {
                    v[n - 1].plus = vn;
                    rate.plus = r;
                }
                Side::Minus => {
                    v[n - 1].minus = vn;
                    rate.minus = r;
                }
            }
        }
        Self { v, rate }
    }

    /// `sup |grad v|` (Frobenius norm of the velocity gradient) over both strips.
    pub fn gradient_sup(&self, grid: &Grid) -> f64 {
        let mut sup = 0.0f64;
        for side in [Side::Plus, Side::Minus] {
            let mut sq = grid.zeros(side);
            for c in &self.v {
                for d in grid.gradient(c.side(side)) {
                    sq = sq.zip_map(&d, |a, b| a + b * b);
                }
            }
            sup = sup.max(sq.max().sqrt());
        }
        sup
    }
}

/// Velocity linear in time between two sampled levels.
pub struct SampledVelocity<'g> {
    grid: &'g Grid,
    times: [f64; 2],
    levels: [&'g TransportLevel; 2],
}

impl<'g> SampledVelocity<'g> {
    pub fn new(grid: &'g Grid, t0: f64, level0: &'g TransportLevel, t1: f64, level1: &'g TransportLevel) -> Self {
        Self { grid, times: [t0, t1], levels: [level0, level1] }
    }
}

impl VelocityField for SampledVelocity<'_> {
    fn dim(&self) -> usize {
        self.grid.dim
    }

    fn eval(&self, x: &Point, t: f64) -> (Point, f64) {
        let span = self.times[1] - self.times[0];
        let s = if span == 0.0 { 0.0 } else { ((t - self.times[0]) / span).clamp(0.0, 1.0) };
        let mut v = [0.0; 3];
        let mut rate = 0.0;
        for (lvl, wt) in self.levels.iter().zip([1.0 - s, s]) {
            if wt == 0.0 {
                continue;
            }
            for (d, c) in lvl.v.iter().enumerate() {
                v[d] += wt * c.interpolate(self.grid, x);
            }
            rate += wt * lvl.rate.interpolate(self.grid, x);
        }
        (v, rate)
    }

    fn in_box(&self, x: &Point) -> bool {
        x[self.grid.dim - 1].abs() <= self.grid.l_nrm
    }
}

/// Accumulated smallness and bijectivity monitors of the transport.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransportGate {
    pub eps1: f64,
    /// `int_0^t sup |grad v| ds`.
    pub gradient_integral: f64,
    /// Lower bound of the forward flow-map Jacobian determinant since `t = 0`.
    pub jacobian_min: f64,
}

impl TransportGate {
    pub fn new(eps1: f64) -> Self {
        Self { eps1, gradient_integral: 0.0, jacobian_min: 1.0 }
    }

    /// Monitors after one more step; fails if either bound is violated.
    pub fn advance(&self, gradient_sup: f64, dt: f64, step_jacobian_min: f64) -> Result<Self> {
        let next = Self {
            eps1: self.eps1,
            gradient_integral: self.gradient_integral + dt * gradient_sup,
            jacobian_min: self.jacobian_min * step_jacobian_min,
        };
        if !(next.gradient_integral <= self.eps1) {
            return Err(Error::Gate(format!(
                "time integral of sup|grad v| is {:.4e}, above eps1 = {}",
                next.gradient_integral, self.eps1
            )));
        }
        if !(next.jacobian_min > MIN_FLOW_JACOBIAN) {
            return Err(Error::Gate(format!(
                "flow-map Jacobian bound {:.4} fell below {MIN_FLOW_JACOBIAN}",
                next.jacobian_min
            )));
        }
        Ok(next)
    }
}

/// Result of one semi-Lagrangian density step.
#[derive(Clone, Debug)]
pub struct DensityStep {
    pub rho: BiField,
    /// Smallest determinant of the forward map of this step.
    pub jacobian_min: f64,
    pub left_box: usize,
}

/// Determinants of the Jacobian of a node map given as displacements.
fn map_determinants(grid: &Grid, side: Side, feet: &[Point]) -> Vec<f64> {
    let (n, m, dim) = (grid.n_tan, grid.m_nrm, grid.dim);
    let nodes = node_points(grid, side);
    let disp: Vec<Vec<f64>> =
        (0..dim).map(|a| feet.iter().zip(&nodes).map(|(f, x)| f[a] - x[a]).collect()).collect();
    let mt = grid.m_tan;
    let sg = side.sign();
    let mut out = vec![0.0; feet.len()];
    for j in 0..=m {
        for i in 0..n {
            let mut jac = [[0.0; 3]; 3];
            for a in 0..dim {
                let d = &disp[a];
                let at = |jj: usize, ii: usize| d[jj * n + ii];
                for b in 0..dim {
                    let deriv = if b + 1 == dim {
                        let c = sg / grid.dx_nrm;
                        if j == 0 {
                            c * 0.5 * (-3.0 * at(0, i) + 4.0 * at(1, i) - at(2, i))
                        } else if j == m {
                            c * 0.5 * (3.0 * at(m, i) - 4.0 * at(m - 1, i) + at(m - 2, i))
                        } else {
                            c * 0.5 * (at(j + 1, i) - at(j - 1, i))
                        }
                    } else {
                        let (i1, i2) = (i % mt, i / mt);
                        let (ip, im) = if b == 0 {
                            ((i1 + 1) % mt + mt * i2, (i1 + mt - 1) % mt + mt * i2)
                        } else {
                            (i1 + mt * ((i2 + 1) % mt), i1 + mt * ((i2 + mt - 1) % mt))
                        };
                        (at(j, ip) - at(j, im)) / (2.0 * grid.dx_tan)
                    };
                    jac[a][b] = deriv + if a == b { 1.0 } else { 0.0 };
                }
            }
            out[j * n + i] = if dim == 2 {
                jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0]
            } else {
                jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
                    - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
                    + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0])
            };
        }
    }
    out
}

/// Advances the density from `t0` to `t1` by tracing every node of both
/// strips back to `t0`: `rho(xi, t1) = rho(eta, t0) exp(-int rate)`.
pub fn density_step(
    grid: &Grid,
    rho: &BiField,
    field: &SampledVelocity<'_>,
    t0: f64,
    t1: f64,
    substeps: usize,
) -> Result<DensityStep> {
    let mut out = BiField::zeros(grid);
    let mut jac_max = 0.0f64;
    let mut left_box = 0;
    for side in [Side::Plus, Side::Minus] {
        let nodes = node_points(grid, side);
        let traces: Vec<Trace> =
            nodes.par_iter().map(|p| integrate_characteristic(field, *p, t1, t0, substeps)).collect();
        left_box += traces.iter().filter(|t| t.left_box).count();
        let values: Vec<f64> = traces.par_iter().map(|t| rho.interpolate(grid, &t.point) * (-t.integral).exp()).collect();
        let feet: Vec<Point> = traces.iter().map(|t| t.point).collect();
        let dets = map_determinants(grid, side, &feet);
        if let Some(bad) = dets.iter().find(|d| !(**d > 0.0)) {
            return Err(Error::Gate(format!("backward flow map lost orientation (det = {bad:.3e})")));
        }
        jac_max = jac_max.max(dets.iter().copied().fold(0.0, f64::max));
        let target = match side {
            Side::Plus => &mut out.plus,
            Side::Minus => &mut out.minus,
        };
        target.data = values;
    }
    let min_plus = out.plus.min();
    if !(min_plus > 0.0) {
        return Err(Error::Gate(format!("density became nonpositive (min {min_plus:.3e})")));
    }
    Ok(DensityStep { rho: out, jacobian_min: 1.0 / jac_max, left_box })
}
