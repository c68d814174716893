//! Closed-form solutions of the linear interface problems, used to verify the
//! Stokes and heat solvers.

use num_complex::Complex64;
use serde::Serialize;

use crate::constitutive::Side;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::heat::{HeatParams, HeatSolver};
use crate::stokes::{ModeBlockSystem, ModeData, StokesParams};

type C = Complex64;
const ZERO: C = C::new(0.0, 0.0);

fn re(v: f64) -> C {
    C::new(v, 0.0)
}

/// `exp(a z) * sum c_n z^n`, closed under differentiation.
#[derive(Clone, Debug)]
pub struct ExpPoly {
    pub c: Vec<C>,
    pub a: f64,
}

impl ExpPoly {
    pub fn eval(&self, z: f64) -> C {
        let mut p = ZERO;
        for c in self.c.iter().rev() {
            p = p * z + c;
        }
        p * (self.a * z).exp()
    }

    pub fn deriv(&self) -> ExpPoly {
        let mut c: Vec<C> = self.c.iter().map(|v| v * self.a).collect();
        for n in 1..self.c.len() {
            c[n - 1] += self.c[n] * n as f64;
        }
        ExpPoly { c, a: self.a }
    }

    pub fn scale(&self, s: C) -> ExpPoly {
        ExpPoly { c: self.c.iter().map(|v| v * s).collect(), a: self.a }
    }
}

fn poly_mul(a: &[C], b: &[C]) -> Vec<C> {
    let mut r = vec![ZERO; a.len() + b.len() - 1];
    for (p, x) in a.iter().enumerate() {
        for (q, y) in b.iter().enumerate() {
            r[p + q] += x * y;
        }
    }
    r
}

/// Errors of one manufactured Stokes solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StokesErrors {
    pub m_nrm: usize,
    /// Max nodal velocity error over both sides.
    pub velocity: f64,
    /// Max pressure error at the half nodes.
    pub pressure: f64,
    pub height: f64,
    /// Relative algebraic residual of the banded solve.
    pub residual: f64,
    /// Largest residual of the interface equations.
    pub equations: f64,
}

/// A single-mode two-dimensional Stokes solution with Dirichlet walls at `+-l`,
/// a solenoidal lower velocity and a nonzero interface height.
#[derive(Clone, Debug)]
pub struct StokesManufactured {
    pub k: f64,
    pub l: f64,
    pub lambda: C,
    pub up: [ExpPoly; 2],
    pub um: [ExpPoly; 2],
    pub pi: ExpPoly,
    pub h: C,
}

impl StokesManufactured {
    pub fn new(l: f64, k: f64, lambda: C) -> Self {
        let i = C::new(0.0, 1.0);
        // (l - z)^2 (1 + z / 2) and (l - z)^2 (0.3 + 0.2i - z) on the upper side.
        let sq_up = [re(l * l), re(-2.0 * l), re(1.0)];
        let up = [
            ExpPoly { c: poly_mul(&sq_up, &[re(1.0), re(0.5)]), a: -1.0 },
            ExpPoly { c: poly_mul(&sq_up, &[C::new(0.3, 0.2), re(-1.0)]), a: -1.0 },
        ];
        // Stream function (z + l)^2 (0.5 + z) e^z keeps the lower velocity solenoidal.
        let psi = ExpPoly { c: poly_mul(&[re(l * l), re(2.0 * l), re(1.0)], &[re(0.5), re(1.0)]), a: 1.0 };
        let um = [psi.deriv(), psi.scale(-i * k)];
        let pi = ExpPoly { c: vec![re(0.7), C::new(0.5, -0.2)], a: 1.0 };
        Self { k, l, lambda, up, um, pi, h: C::new(0.3, 0.1) }
    }

    /// Right-hand sides reproducing this solution, sampled on `m + 1` rows of spacing `dx`.
    pub fn data(&self, p: &StokesParams, m: usize, dx: f64) -> ModeData {
        let (k, lam) = (self.k, self.lambda);
        let ik = C::new(0.0, k);
        let mut d = ModeData::zeros(2, m + 1);
        for (side, u) in [(Side::Plus, &self.up), (Side::Minus, &self.um)] {
            let (rho, a_lap, a_grad) = match side {
                Side::Plus => (p.rho_plus, 0.5 * p.mu_plus, p.lambda_plus - 0.5 * p.mu_plus),
                Side::Minus => (p.rho_minus, 0.5 * p.mu_minus, 0.5 * p.mu_minus),
            };
            let (u1, u2) = (&u[0], &u[1]);
            let (d1, d2) = (u1.deriv(), u2.deriv());
            let (dd1, dd2) = (d1.deriv(), d2.deriv());
            let dpi = self.pi.deriv();
            for j in 0..=m {
                let z = side.sign() * j as f64 * dx;
                let lap1 = dd1.eval(z) - k * k * u1.eval(z);
                let lap2 = dd2.eval(z) - k * k * u2.eval(z);
                let gd1 = -k * k * u1.eval(z) + ik * d2.eval(z);
                let gd2 = ik * d1.eval(z) + dd2.eval(z);
                let f1 = rho * lam * u1.eval(z) - a_lap * lap1 - a_grad * gd1;
                let f2 = rho * lam * u2.eval(z) - a_lap * lap2 - a_grad * gd2;
                match side {
                    Side::Plus => {
                        d.f_plus[0][j] = f1;
                        d.f_plus[1][j] = f2;
                    }
                    Side::Minus => {
                        d.f_minus[0][j] = f1 + ik * self.pi.eval(z);
                        d.f_minus[1][j] = f2 + dpi.eval(z);
                        d.f_div[j] = ik * u1.eval(z) + d2.eval(z);
                    }
                }
            }
        }
        let at0 = |e: &ExpPoly| e.eval(0.0);
        let (up, um) = (&self.up, &self.um);
        let d_1n = |u: &[ExpPoly; 2]| 0.5 * (at0(&u[0].deriv()) + ik * at0(&u[1]));
        let k2h = k * k * self.h;
        d.g[0] = p.mu_minus * d_1n(um) - p.mu_plus * d_1n(up);
        d.g[1] = p.mu_minus * at0(&um[1].deriv()) - at0(&self.pi) + p.sigma_side(Side::Minus) * k2h;
        let div_up = ik * at0(&up[0]) + at0(&up[1].deriv());
        d.g[2] = p.mu_plus * at0(&up[1].deriv()) + (p.lambda_plus - p.mu_plus) * div_up + p.sigma_side(Side::Plus) * k2h;
        d.h[0] = at0(&um[0]) - at0(&up[0]);
        d.d = lam * self.h - (p.rho_minus * at0(&um[1]) - p.rho_plus * at0(&up[1])) / p.density_gap();
        d
    }

    /// Solves the mode block with `m` normal cells and measures the errors.
    pub fn errors(&self, p: &StokesParams, m: usize) -> Result<StokesErrors> {
        let dx = self.l / m as f64;
        let sys = ModeBlockSystem::assemble(p, 2, m, dx, [self.k, 0.0], [self.k, 0.0], self.lambda)?;
        let (sol, residual, eq) = sys.solve(&self.data(p, m, dx));
        let mut velocity = 0.0f64;
        for j in 0..=m {
            let z = j as f64 * dx;
            for c in 0..2 {
                velocity = velocity.max((sol.u_plus[c][j] - self.up[c].eval(z)).norm());
                velocity = velocity.max((sol.u_minus[c][j] - self.um[c].eval(-z)).norm());
            }
        }
        let pressure = (0..m)
            .map(|j| (sol.pi_half[j] - self.pi.eval(-(j as f64 + 0.5) * dx)).norm())
            .fold(0.0, f64::max);
        Ok(StokesErrors { m_nrm: m, velocity, pressure, height: (sol.h - self.h).norm(), residual, equations: eq.max() })
    }
}

/// `log2` ratios of successive errors, one row per refinement.
pub fn observed_orders(errors: &[StokesErrors]) -> Vec<[f64; 3]> {
    errors
        .windows(2)
        .map(|w| {
            [
                (w[0].velocity / w[1].velocity).log2(),
                (w[0].pressure / w[1].pressure).log2(),
                (w[0].height / w[1].height).log2(),
            ]
        })
        .collect()
}

/// `sin(sqrt(s) y) / sqrt(s)`, continued analytically to `s <= 0`.
pub fn sinc_profile(s: f64, y: f64) -> f64 {
    if s > 0.0 {
        (s.sqrt() * y).sin() / s.sqrt()
    } else if s < 0.0 {
        ((-s).sqrt() * y).sinh() / (-s).sqrt()
    } else {
        y
    }
}

/// Derivative of [`sinc_profile`] in `y`.
pub fn sinc_profile_dy(s: f64, y: f64) -> f64 {
    if s > 0.0 {
        (s.sqrt() * y).cos()
    } else if s < 0.0 {
        ((-s).sqrt() * y).cosh()
    } else {
        1.0
    }
}

/// Slowest separable mode `exp(-omega t) phi(x_N) cos(k x_1)` of the two-layer
/// heat problem with continuous temperature and flux and zero walls at `+-l`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoLayerMode {
    pub k: f64,
    pub l: f64,
    pub omega: f64,
    s_plus: f64,
    s_minus: f64,
}

impl TwoLayerMode {
    pub fn new(p: HeatParams, k: f64, l: f64) -> Result<Self> {
        let s = |c: f64, d: f64, w: f64| c * w / d - k * k;
        // Flux mismatch for profiles with phi(0) = 1; decreasing in omega on the bracket.
        let f = |w: f64| {
            let (sp, sm) = (s(p.capacity_plus, p.d_plus, w), s(p.capacity_minus, p.d_minus, w));
            p.d_minus * sinc_profile_dy(sm, l) / sinc_profile(sm, l) + p.d_plus * sinc_profile_dy(sp, l) / sinc_profile(sp, l)
        };
        let w_pi = |c: f64, d: f64| d * ((std::f64::consts::PI / l).powi(2) + k * k) / c;
        let hi = w_pi(p.capacity_plus, p.d_plus).min(w_pi(p.capacity_minus, p.d_minus)) * (1.0 - 1e-9);
        let (mut a, mut b) = (0.0, hi);
        if !(f(a) > 0.0 && f(b) < 0.0) {
            return Err(Error::Model("two-layer dispersion relation has no root below the first wall mode".into()));
        }
        for _ in 0..200 {
            let c = 0.5 * (a + b);
            if f(c) > 0.0 {
                a = c;
            } else {
                b = c;
            }
        }
        let omega = 0.5 * (a + b);
        Ok(Self {
            k,
            l,
            omega,
            s_plus: s(p.capacity_plus, p.d_plus, omega),
            s_minus: s(p.capacity_minus, p.d_minus, omega),
        })
    }

    pub fn eval(&self, side: Side, x: [f64; 2], z: f64, t: f64) -> f64 {
        let phi = match side {
            Side::Plus => sinc_profile(self.s_plus, self.l - z) / sinc_profile(self.s_plus, self.l),
            Side::Minus => sinc_profile(self.s_minus, self.l + z) / sinc_profile(self.s_minus, self.l),
        };
        (-self.omega * t).exp() * phi * (self.k * x[0]).cos()
    }
}

/// Outcome of evolving a [`TwoLayerMode`] with the implicit Euler heat solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TwoLayerRun {
    pub t: f64,
    pub steps: usize,
    pub omega: f64,
    /// Max nodal error over the max of the exact solution at `t`.
    pub relative_error: f64,
    pub max_residual: f64,
}

/// Evolves the `k = 1` two-layer mode on `grid` (walls at `+-l_nrm`) to `t_final`.
pub fn run_two_layer(grid: &Grid, p: HeatParams, t_final: f64) -> Result<TwoLayerRun> {
    let mode = TwoLayerMode::new(p, 1.0, grid.l_nrm)?;
    let mut tp = grid.sample(Side::Plus, |x, z| mode.eval(Side::Plus, x, z, 0.0));
    let mut tm = grid.sample(Side::Minus, |x, z| mode.eval(Side::Minus, x, z, 0.0));
    let solver = HeatSolver::new(grid, p, C::new(1.0 / grid.dt, 0.0))?;
    let steps = (t_final / grid.dt).round() as usize;
    let (zp, zm, zl) = (grid.zeros(Side::Plus), grid.zeros(Side::Minus), grid.line_zeros());
    let mut max_residual = 0.0f64;
    for _ in 0..steps {
        let (np, nm, r) = solver.step(grid, (&tp, &tm), &zp, &zm, &zl)?;
        r.certify()?;
        max_residual = max_residual.max(r.max_residual());
        tp = np;
        tm = nm;
    }
    let t = steps as f64 * grid.dt;
    let ep = grid.sample(Side::Plus, |x, z| mode.eval(Side::Plus, x, z, t));
    let em = grid.sample(Side::Minus, |x, z| mode.eval(Side::Minus, x, z, t));
    let err = (&tp - &ep).max_abs().max((&tm - &em).max_abs());
    let scale = ep.max_abs().max(em.max_abs());
    Ok(TwoLayerRun { t, steps, omega: mode.omega, relative_error: err / scale, max_residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_poly_derivative_matches_finite_difference() {
        let e = ExpPoly { c: vec![re(1.0), C::new(0.5, -1.0), re(0.25)], a: -0.7 };
        let d = e.deriv();
        for z in [-1.0, 0.0, 0.8] {
            let fd = (e.eval(z + 1e-6) - e.eval(z - 1e-6)) / 2e-6;
            assert!((fd - d.eval(z)).norm() < 1e-8);
        }
    }

    #[test]
    fn lower_velocity_is_solenoidal_and_walls_vanish() {
        let ms = StokesManufactured::new(4.0, 1.5, re(2.0));
        let ik = C::new(0.0, ms.k);
        for z in [-3.0, -1.0, 0.0] {
            let div = ik * ms.um[0].eval(z) + ms.um[1].deriv().eval(z);
            assert!(div.norm() < 1e-12);
        }
        for c in 0..2 {
            assert!(ms.up[c].eval(4.0).norm() < 1e-12);
            assert!(ms.um[c].eval(-4.0).norm() < 1e-12);
        }
    }

    #[test]
    fn sinc_profile_is_continuous_in_s() {
        for y in [0.3, 1.7] {
            assert!((sinc_profile(1e-10, y) - y).abs() < 1e-8);
            assert!((sinc_profile(-1e-10, y) - y).abs() < 1e-8);
            assert!((sinc_profile_dy(1e-10, y) - 1.0).abs() < 1e-8);
        }
    }
}
