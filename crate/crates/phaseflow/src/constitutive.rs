//! Material constants, constitutive closures and thermodynamic admissibility checks.
//!
//! Closures on the compressible (`+`) side are functions of `(rho, theta)`;
//! closures on the incompressible (`-`) side depend on `theta` only.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::CompiledExpr;

/// Side of the interface. `Plus` is the compressible upper phase, `Minus` the
/// incompressible lower phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    /// Orientation of the normal coordinate: `x_N = sign * j * dx` on node `j`.
    pub fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Side::Plus => "plus",
            Side::Minus => "minus",
        }
    }
}

/// Configuration form of a scalar closure.
///
/// A bare number is a constant, a string is an expression in `rho` and
/// `theta`, and a table selects one of the built-in families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClosureSpec {
    Constant(f64),
    Expression(String),
    Builtin(Builtin),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Builtin {
    /// `gas_constant * rho * theta`.
    IdealGas { gas_constant: f64 },
    /// `base + rho_slope * rho + theta_slope * theta`.
    Affine {
        base: f64,
        #[serde(default)]
        rho_slope: f64,
        #[serde(default)]
        theta_slope: f64,
    },
    /// Natural cubic spline through `(points, values)` in one variable.
    Table {
        variable: TableVariable,
        points: Vec<f64>,
        values: Vec<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableVariable {
    Rho,
    Theta,
}

/// Natural cubic spline with linear continuation outside the knot range.
#[derive(Clone, Debug)]
pub struct CubicTable {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicTable {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(Error::Config(
                "table closure needs at least two points and matching value count".into(),
            ));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("table closure points must increase strictly".into()));
        }
        let n = x.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Tridiagonal system for the interior second derivatives.
            let mut diag = vec![0.0; n];
            let mut rhs = vec![0.0; n];
            let mut upper = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            }
            for i in 2..n - 1 {
                let lower = x[i] - x[i - 1];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            for i in (1..n - 1).rev() {
                m[i] = (rhs[i] - upper[i] * m[i + 1]) / diag[i];
            }
        }
        Ok(Self { x, y, m })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t <= self.x[0] {
            return self.y[0] + self.slope(0, true) * (t - self.x[0]);
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1] + self.slope(n - 2, false) * (t - self.x[n - 1]);
        }
        let i = match self.x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => return self.y[i],
            Err(i) => i - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    fn slope(&self, i: usize, left: bool) -> f64 {
        let h = self.x[i + 1] - self.x[i];
        let secant = (self.y[i + 1] - self.y[i]) / h;
        if left {
            secant - h * (2.0 * self.m[i] + self.m[i + 1]) / 6.0
        } else {
            secant + h * (self.m[i] + 2.0 * self.m[i + 1]) / 6.0
        }
    }
}

fn expr_uses_rho(expr: &CompiledExpr) -> bool {
    expr.arity() == 2
}

/// A compiled scalar closure.
#[derive(Clone)]
pub enum Closure {
    Constant(f64),
    IdealGas(f64),
    Affine { base: f64, rho_slope: f64, theta_slope: f64 },
    Table(TableVariable, Arc<CubicTable>),
    Expression { expr: CompiledExpr, shift: f64 },
    Shifted(Arc<Closure>, f64),
}

impl fmt::Debug for Closure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Closure::Constant(c) => write!(f, "Constant({c})"),
            Closure::IdealGas(r) => write!(f, "IdealGas({r})"),
            Closure::Affine { base, rho_slope, theta_slope } => {
                write!(f, "Affine({base}, {rho_slope}, {theta_slope})")
            }
            Closure::Table(v, _) => write!(f, "Table({v:?})"),
            Closure::Expression { expr, shift } => write!(f, "Expression({:?} + {shift})", expr.source()),
            Closure::Shifted(inner, c) => write!(f, "Shifted({inner:?} + {c})"),
        }
    }
}

impl Closure {
    /// Compiles a closure. `uses_rho` is false for closures of `theta` alone;
    /// expressions referencing `rho` are then rejected.
    pub fn compile(name: &str, spec: &ClosureSpec, uses_rho: bool) -> Result<Self> {
        let closure = match spec {
            ClosureSpec::Constant(c) => Closure::Constant(*c),
            ClosureSpec::Builtin(Builtin::IdealGas { gas_constant }) => {
                if !uses_rho {
                    return Err(Error::Config(format!("{name}: ideal_gas needs a density argument")));
                }
                Closure::IdealGas(*gas_constant)
            }
            ClosureSpec::Builtin(Builtin::Affine { base, rho_slope, theta_slope }) => {
                if !uses_rho && *rho_slope != 0.0 {
                    return Err(Error::Config(format!("{name}: closure cannot depend on rho")));
                }
                Closure::Affine { base: *base, rho_slope: *rho_slope, theta_slope: *theta_slope }
            }
            ClosureSpec::Builtin(Builtin::Table { variable, points, values }) => {
                if !uses_rho && *variable == TableVariable::Rho {
                    return Err(Error::Config(format!("{name}: closure cannot depend on rho")));
                }
                let table = CubicTable::new(points.clone(), values.clone())
                    .map_err(|e| Error::Config(format!("{name}: {e}")))?;
                Closure::Table(*variable, Arc::new(table))
            }
            ClosureSpec::Expression(src) => {
                let vars: &[&str] = if uses_rho { &["rho", "theta"] } else { &["theta"] };
                let expr = CompiledExpr::new(src, vars).map_err(|e| Error::Config(format!("{name}: {e}")))?;
                Closure::Expression { expr, shift: 0.0 }
            }
        };
        Ok(closure)
    }

    #[inline]
    pub fn eval(&self, rho: f64, theta: f64) -> f64 {
        match self {
            Closure::Constant(c) => *c,
            Closure::IdealGas(r) => r * rho * theta,
            Closure::Affine { base, rho_slope, theta_slope } => base + rho_slope * rho + theta_slope * theta,
            Closure::Table(TableVariable::Rho, t) => t.eval(rho),
            Closure::Table(TableVariable::Theta, t) => t.eval(theta),
            Closure::Expression { expr, shift } => {
                let v = if expr_uses_rho(expr) { expr.eval(&[rho, theta]) } else { expr.eval(&[theta]) };
                v + shift
            }
            Closure::Shifted(inner, c) => inner.eval(rho, theta) + c,
        }
    }

    /// Returns the closure plus a constant.
    pub fn shifted(&self, c: f64) -> Closure {
        match self {
            Closure::Constant(v) => Closure::Constant(v + c),
            Closure::Affine { base, rho_slope, theta_slope } => Closure::Affine {
                base: base + c,
                rho_slope: *rho_slope,
                theta_slope: *theta_slope,
            },
            Closure::Expression { expr, shift } => Closure::Expression { expr: expr.clone(), shift: shift + c },
            Closure::Shifted(inner, s) => Closure::Shifted(inner.clone(), s + c),
            other => Closure::Shifted(Arc::new(other.clone()), c),
        }
    }
}

/// Serializable material description used in run configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialSpec {
    pub rho_star_plus: f64,
    pub rho_star_minus: f64,
    pub theta_star: f64,
    pub sigma: f64,
    pub mu_plus: ClosureSpec,
    pub lambda_plus: ClosureSpec,
    pub kappa_plus: ClosureSpec,
    pub d_plus: ClosureSpec,
    pub pressure_plus: ClosureSpec,
    pub psi_plus: ClosureSpec,
    pub eta_plus: ClosureSpec,
    pub mu_minus: ClosureSpec,
    pub kappa_minus: ClosureSpec,
    pub d_minus: ClosureSpec,
    pub psi_minus: ClosureSpec,
    pub eta_minus: ClosureSpec,
    /// Shift `psi_minus` by the constant that zeroes the equilibrium residual.
    pub auto_shift_psi_minus: bool,
    /// Admissible absolute equilibrium residual.
    pub tol_eq: f64,
    /// Minimum admissible `|rho_star_minus - rho_star_plus|`.
    pub delta_rho: f64,
}

impl Default for MaterialSpec {
    fn default() -> Self {
        Self {
            rho_star_plus: 1.0,
            rho_star_minus: 2.0,
            theta_star: 1.0,
            sigma: 1.0,
            mu_plus: ClosureSpec::Constant(1.0),
            lambda_plus: ClosureSpec::Constant(1.0),
            kappa_plus: ClosureSpec::Constant(1.0),
            d_plus: ClosureSpec::Constant(1.0),
            pressure_plus: ClosureSpec::Builtin(Builtin::IdealGas { gas_constant: 1.0 }),
            psi_plus: ClosureSpec::Expression("theta*ln(rho) - theta*ln(theta)".into()),
            eta_plus: ClosureSpec::Expression("ln(theta) + 1 - ln(rho)".into()),
            mu_minus: ClosureSpec::Constant(1.0),
            kappa_minus: ClosureSpec::Constant(1.0),
            d_minus: ClosureSpec::Constant(1.0),
            psi_minus: ClosureSpec::Expression("0.5 - theta*ln(theta)".into()),
            eta_minus: ClosureSpec::Expression("ln(theta) + 1".into()),
            auto_shift_psi_minus: false,
            tol_eq: 1e-12,
            delta_rho: 1e-6,
        }
    }
}

/// Coefficients frozen at the equilibrium state `(rho_star_plus, theta_star)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Starred {
    pub mu_plus: f64,
    pub lambda_plus: f64,
    pub kappa_plus: f64,
    pub d_plus: f64,
    pub pressure: f64,
    pub mu_minus: f64,
    pub kappa_minus: f64,
    pub d_minus: f64,
}

/// Material constants and compiled closures.
#[derive(Clone, Debug)]
pub struct MaterialSystem {
    pub dim: usize,
    pub rho_star_plus: f64,
    pub rho_star_minus: f64,
    pub theta_star: f64,
    pub sigma: f64,
    pub mu_plus: Closure,
    pub lambda_plus: Closure,
    pub kappa_plus: Closure,
    pub d_plus: Closure,
    pub pressure_plus: Closure,
    pub psi_plus: Closure,
    pub eta_plus: Closure,
    pub mu_minus: Closure,
    pub kappa_minus: Closure,
    pub d_minus: Closure,
    pub psi_minus: Closure,
    pub eta_minus: Closure,
    pub tol_eq: f64,
    pub delta_rho: f64,
    pub starred: Starred,
}

impl MaterialSystem {
    pub fn from_spec(spec: &MaterialSpec, dim: usize) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::Config(format!("dimension must be 2 or 3, got {dim}")));
        }
        for (name, v) in [
            ("rho_star_plus", spec.rho_star_plus),
            ("rho_star_minus", spec.rho_star_minus),
            ("theta_star", spec.theta_star),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(spec.sigma.is_finite() && spec.sigma >= 0.0) {
            return Err(Error::Config(format!("sigma must be non-negative, got {}", spec.sigma)));
        }
        if (spec.rho_star_minus - spec.rho_star_plus).abs() <= spec.delta_rho {
            return Err(Error::Model(format!(
                "reference densities must differ by more than {}: rho_star_minus = {}, rho_star_plus = {}",
                spec.delta_rho, spec.rho_star_minus, spec.rho_star_plus
            )));
        }
        let plus = |n: &str, s: &ClosureSpec| Closure::compile(n, s, true);
        let minus = |n: &str, s: &ClosureSpec| Closure::compile(n, s, false);
        let mut m = MaterialSystem {
            dim,
            rho_star_plus: spec.rho_star_plus,
            rho_star_minus: spec.rho_star_minus,
            theta_star: spec.theta_star,
            sigma: spec.sigma,
            mu_plus: plus("mu_plus", &spec.mu_plus)?,
            lambda_plus: plus("lambda_plus", &spec.lambda_plus)?,
            kappa_plus: plus("kappa_plus", &spec.kappa_plus)?,
            d_plus: plus("d_plus", &spec.d_plus)?,
            pressure_plus: plus("pressure_plus", &spec.pressure_plus)?,
            psi_plus: plus("psi_plus", &spec.psi_plus)?,
            eta_plus: plus("eta_plus", &spec.eta_plus)?,
            mu_minus: minus("mu_minus", &spec.mu_minus)?,
            kappa_minus: minus("kappa_minus", &spec.kappa_minus)?,
            d_minus: minus("d_minus", &spec.d_minus)?,
            psi_minus: minus("psi_minus", &spec.psi_minus)?,
            eta_minus: minus("eta_minus", &spec.eta_minus)?,
            tol_eq: spec.tol_eq,
            delta_rho: spec.delta_rho,
            starred: Starred {
                mu_plus: 0.0,
                lambda_plus: 0.0,
                kappa_plus: 0.0,
                d_plus: 0.0,
                pressure: 0.0,
                mu_minus: 0.0,
                kappa_minus: 0.0,
                d_minus: 0.0,
            },
        };
        m.refresh_starred();
        if spec.auto_shift_psi_minus {
            let r = m.equilibrium_residual();
            m.psi_minus = m.psi_minus.shifted(-r);
        }
        Ok(m)
    }

    /// Default material in `dim` dimensions.
    pub fn default_for(dim: usize) -> Self {
        Self::from_spec(&MaterialSpec::default(), dim).expect("default material is valid")
    }

    fn refresh_starred(&mut self) {
        let (r, t) = (self.rho_star_plus, self.theta_star);
        self.starred = Starred {
            mu_plus: self.mu_plus.eval(r, t),
            lambda_plus: self.lambda_plus.eval(r, t),
            kappa_plus: self.kappa_plus.eval(r, t),
            d_plus: self.d_plus.eval(r, t),
            pressure: self.pressure_plus.eval(r, t),
            mu_minus: self.mu_minus.eval(0.0, t),
            kappa_minus: self.kappa_minus.eval(0.0, t),
            d_minus: self.d_minus.eval(0.0, t),
        };
    }

    /// `rho_star_minus - rho_star_plus`.
    pub fn density_gap(&self) -> f64 {
        self.rho_star_minus - self.rho_star_plus
    }

    /// `psi_-(theta*) - psi_+(rho*, theta*) + (1/rho*_- - 1/rho*_+) P_+(rho*, theta*)`.
    pub fn equilibrium_residual(&self) -> f64 {
        let (r, t) = (self.rho_star_plus, self.theta_star);
        self.psi_minus.eval(0.0, t) - self.psi_plus.eval(r, t)
            + (1.0 / self.rho_star_minus - 1.0 / r) * self.pressure_plus.eval(r, t)
    }

    /// Fails unless the equilibrium residual is within `tol_eq`.
    pub fn require_equilibrium(&self) -> Result<()> {
        let r = self.equilibrium_residual();
        if r.abs() > self.tol_eq {
            return Err(Error::Model(format!(
                "equilibrium residual {r:e} exceeds tolerance {:e}",
                self.tol_eq
            )));
        }
        Ok(())
    }

    /// Default sampling box: half to double the reference state, 10 x 10 points.
    pub fn default_box(&self) -> SampleBox {
        SampleBox {
            rho: (0.5 * self.rho_star_plus, 2.0 * self.rho_star_plus),
            theta: (0.5 * self.theta_star, 2.0 * self.theta_star),
            points: 10,
        }
    }

    /// Checks positivity, pressure monotonicity, the viscosity inequality and
    /// the density gap on every point of `sample`.
    pub fn validate(&self, sample: &SampleBox) -> Result<ValidationReport> {
        sample.check()?;
        let n = self.dim as f64;
        let mut checks: Vec<Check> = Vec::new();
        let mut positive = |name: &str, f: &dyn Fn(f64, f64) -> f64| -> Result<()> {
            let mut worst = (f64::INFINITY, (0.0, 0.0));
            for (rho, theta) in sample.iter() {
                let v = f(rho, theta);
                if !v.is_finite() {
                    return Err(Error::Model(format!(
                        "{name} is not finite at (rho, theta) = ({rho}, {theta})"
                    )));
                }
                if v < worst.0 {
                    worst = (v, (rho, theta));
                }
            }
            checks.push(Check { name: name.to_string(), passed: worst.0 > 0.0, worst: worst.0, at: Some(worst.1) });
            Ok(())
        };
        positive("mu_plus > 0", &|r, t| self.mu_plus.eval(r, t))?;
        positive("lambda_plus > 0", &|r, t| self.lambda_plus.eval(r, t))?;
        positive("kappa_plus > 0", &|r, t| self.kappa_plus.eval(r, t))?;
        positive("d_plus > 0", &|r, t| self.d_plus.eval(r, t))?;
        positive("mu_minus > 0", &|_, t| self.mu_minus.eval(0.0, t))?;
        positive("kappa_minus > 0", &|_, t| self.kappa_minus.eval(0.0, t))?;
        positive("d_minus > 0", &|_, t| self.d_minus.eval(0.0, t))?;
        positive("dP_plus/drho > 0", &|r, t| self.pressure_rho_derivative(r, t))?;
        positive("lambda_plus - (N-2)/N mu_plus >= 0", &|r, t| {
            let slack = self.lambda_plus.eval(r, t) - (n - 2.0) / n * self.mu_plus.eval(r, t);
            // The inequality is not strict; report the slack shifted so that zero passes.
            if slack >= 0.0 {
                slack + f64::MIN_POSITIVE
            } else {
                slack
            }
        })?;
        let gap = self.density_gap().abs();
        checks.push(Check {
            name: "|rho_star_minus - rho_star_plus| > delta_rho".into(),
            passed: gap > self.delta_rho,
            worst: gap,
            at: None,
        });
        let eq = self.equilibrium_residual();
        checks.push(Check {
            name: "equilibrium residual within tol_eq".into(),
            passed: eq.abs() <= self.tol_eq,
            worst: eq,
            at: None,
        });
        Ok(ValidationReport { checks })
    }

    /// Centered difference of the pressure closure in density, step `1e-5 max(1, |rho|)`.
    pub fn pressure_rho_derivative(&self, rho: f64, theta: f64) -> f64 {
        let h = 1e-5 * rho.abs().max(1.0);
        (self.pressure_plus.eval(rho + h, theta) - self.pressure_plus.eval(rho - h, theta)) / (2.0 * h)
    }

    /// Compares supplied specific heats with `d(psi + theta eta)/d theta` and
    /// the pressure closure with `rho^2 d psi / d rho`.
    pub fn thermo_consistency(&self, sample: &SampleBox) -> Result<ConsistencyReport> {
        sample.check()?;
        let energy_plus = |r: f64, t: f64| self.psi_plus.eval(r, t) + t * self.eta_plus.eval(r, t);
        let energy_minus = |t: f64| self.psi_minus.eval(0.0, t) + t * self.eta_minus.eval(0.0, t);
        let mut report = ConsistencyReport::default();
        for (rho, theta) in sample.iter() {
            let h = 1e-5 * theta.abs().max(1.0);
            let kp = (energy_plus(rho, theta + h) - energy_plus(rho, theta - h)) / (2.0 * h);
            let km = (energy_minus(theta + h) - energy_minus(theta - h)) / (2.0 * h);
            report.min_kappa_fd_plus = report.min_kappa_fd_plus.min(kp);
            report.min_kappa_fd_minus = report.min_kappa_fd_minus.min(km);
            report.kappa_deviation_plus =
                report.kappa_deviation_plus.max((kp - self.kappa_plus.eval(rho, theta)).abs());
            report.kappa_deviation_minus =
                report.kappa_deviation_minus.max((km - self.kappa_minus.eval(0.0, theta)).abs());
            let hr = 1e-5 * rho.abs().max(1.0);
            let psi_rho = (self.psi_plus.eval(rho + hr, theta) - self.psi_plus.eval(rho - hr, theta)) / (2.0 * hr);
            report.pressure_deviation = report
                .pressure_deviation
                .max((rho * rho * psi_rho - self.pressure_plus.eval(rho, theta)).abs());
        }
        Ok(report)
    }

    /// Viscosities and conductivities at a point on either side.
    pub fn coefficients(&self, side: Side, rho: f64, theta: f64) -> Coefficients {
        match side {
            Side::Plus => Coefficients {
                mu: self.mu_plus.eval(rho, theta),
                lambda: self.lambda_plus.eval(rho, theta),
                kappa: self.kappa_plus.eval(rho, theta),
                d: self.d_plus.eval(rho, theta),
            },
            Side::Minus => Coefficients {
                mu: self.mu_minus.eval(0.0, theta),
                lambda: 0.0,
                kappa: self.kappa_minus.eval(0.0, theta),
                d: self.d_minus.eval(0.0, theta),
            },
        }
    }

    /// Newton stress: `2 mu D + (lambda - mu) div u I - pi I` on the plus side,
    /// `mu_- D - pi I` on the minus side.
    pub fn stress(&self, side: Side, d: &Tensor, div_u: f64, pi: f64, rho: f64, theta: f64) -> Result<Tensor> {
        d.require_symmetric()?;
        let c = self.coefficients(side, rho, theta);
        Ok(match side {
            Side::Plus => d.scaled(2.0 * c.mu).plus_identity((c.lambda - c.mu) * div_u - pi),
            Side::Minus => d.scaled(c.mu).plus_identity(-pi),
        })
    }

    /// Stress with the equilibrium coefficients: `mu* D + (lambda* - mu*) div u I - pi I`
    /// on the plus side and `mu*_- D - pi I` on the minus side.
    pub fn stress_starred(&self, side: Side, d: &Tensor, div_u: f64, pi: f64) -> Result<Tensor> {
        d.require_symmetric()?;
        let s = &self.starred;
        Ok(match side {
            Side::Plus => d.scaled(s.mu_plus).plus_identity((s.lambda_plus - s.mu_plus) * div_u - pi),
            Side::Minus => d.scaled(s.mu_minus).plus_identity(-pi),
        })
    }

    /// `2 mu |D|^2 + (lambda - mu) (div u)^2`.
    pub fn entropy_production_density(&self, side: Side, d: &Tensor, div_u: f64, rho: f64, theta: f64) -> f64 {
        let c = self.coefficients(side, rho, theta);
        entropy_production(c.mu, c.lambda, d, div_u)
    }
}

/// `2 mu |D|^2 + (lambda - mu) (div u)^2`.
pub fn entropy_production(mu: f64, lambda: f64, d: &Tensor, div_u: f64) -> f64 {
    2.0 * mu * d.norm_squared() + (lambda - mu) * div_u * div_u
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coefficients {
    pub mu: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub d: f64,
}

/// Rectangular sampling grid in `(rho, theta)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleBox {
    pub rho: (f64, f64),
    pub theta: (f64, f64),
    pub points: usize,
}

impl SampleBox {
    fn check(&self) -> Result<()> {
        let ok = self.points >= 2
            && self.rho.0 > 0.0
            && self.theta.0 > 0.0
            && self.rho.1 >= self.rho.0
            && self.theta.1 >= self.theta.0
            && self.rho.1.is_finite()
            && self.theta.1.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Model(format!("invalid sample box {self:?}")))
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let n = self.points;
        let lerp = move |(a, b): (f64, f64), i: usize| a + (b - a) * i as f64 / (n - 1) as f64;
        (0..n).flat_map(move |i| (0..n).map(move |j| (lerp(self.rho, i), lerp(self.theta, j))))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub worst: f64,
    pub at: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, prefix: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name.starts_with(prefix))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let status = if c.passed { "pass" } else { "FAIL" };
            match c.at {
                Some((r, t)) => writeln!(f, "{status}  {:<48} worst {:+.6e} at rho={r:.4}, theta={t:.4}", c.name, c.worst)?,
                None => writeln!(f, "{status}  {:<48} value {:+.6e}", c.name, c.worst)?,
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyReport {
    pub kappa_deviation_plus: f64,
    pub kappa_deviation_minus: f64,
    pub min_kappa_fd_plus: f64,
    pub min_kappa_fd_minus: f64,
    pub pressure_deviation: f64,
}

impl Default for ConsistencyReport {
    fn default() -> Self {
        Self {
            kappa_deviation_plus: 0.0,
            kappa_deviation_minus: 0.0,
            min_kappa_fd_plus: f64::INFINITY,
            min_kappa_fd_minus: f64::INFINITY,
            pressure_deviation: 0.0,
        }
    }
}

impl ConsistencyReport {
    /// True when the energy-derived specific heats are positive.
    pub fn specific_heat_positive(&self) -> bool {
        self.min_kappa_fd_plus > 0.0 && self.min_kappa_fd_minus > 0.0
    }
}

/// Small dense `n x n` tensor, `n <= 3`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub a: [[f64; 3]; 3],
}

impl Tensor {
    pub fn zeros(n: usize) -> Self {
        Self { n, a: [[0.0; 3]; 3] }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n);
        for i in 0..n {
            t.a[i][i] = 1.0;
        }
        t
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        let mut t = Self::zeros(n);
        for (i, r) in rows.iter().enumerate() {
            t.a[i][..n].copy_from_slice(&r[..n]);
        }
        t
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i][j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.a[i][i]).sum()
    }

    pub fn norm_squared(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                s += self.a[i][j] * self.a[i][j];
            }
        }
        s
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut t = *self;
        for i in 0..self.n {
            for j in 0..self.n {
                t.a[i][j] *= c;
            }
        }
        t
    }

    pub fn plus_identity(&self, c: f64) -> Self {
        let mut t = *self;
        for i in 0..self.n {
            t.a[i][i] += c;
        }
        t
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self.a[i][j] - self.a[j][i]).abs() <= tol))
    }

    fn require_symmetric(&self) -> Result<()> {
        if self.is_symmetric(1e-12 * (1.0 + self.norm_squared().sqrt())) {
            Ok(())
        } else {
            Err(Error::Model("strain tensor must be symmetric".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec_with(f: impl FnOnce(&mut MaterialSpec)) -> MaterialSpec {
        let mut s = MaterialSpec::default();
        f(&mut s);
        s
    }

    #[test]
    fn default_material_is_admissible() {
        let m = MaterialSystem::default_for(2);
        let report = m.validate(&m.default_box()).unwrap();
        assert!(report.passed(), "{report}");
        assert!(m.equilibrium_residual().abs() < 1e-15);
    }

    #[test]
    fn ideal_gas_with_unit_constants_passes() {
        let spec = spec_with(|s| {
            s.pressure_plus = ClosureSpec::Builtin(Builtin::IdealGas { gas_constant: 1.0 });
        });
        let m = MaterialSystem::from_spec(&spec, 2).unwrap();
        assert!(m.validate(&m.default_box()).unwrap().passed());
    }

    #[test]
    fn negative_second_viscosity_fails_viscosity_inequality() {
        let spec = spec_with(|s| s.lambda_plus = ClosureSpec::Constant(-0.1));
        let m = MaterialSystem::from_spec(&spec, 2).unwrap();
        let report = m.validate(&m.default_box()).unwrap();
        assert!(!report.passed());
        assert!(!report.check("lambda_plus - (N-2)/N").unwrap().passed);
    }

    #[test]
    fn logarithmic_pressure_is_monotone_and_matches_fd() {
        let spec = spec_with(|s| s.pressure_plus = ClosureSpec::Expression("theta*ln(rho)".into()));
        let m = MaterialSystem::from_spec(&spec, 2).unwrap();
        let sample = SampleBox { rho: (0.5, 2.0), theta: (0.5, 2.0), points: 10 };
        let report = m.validate(&sample).unwrap();
        assert!(report.check("dP_plus/drho").unwrap().passed);
        for (rho, theta) in sample.iter() {
            let exact = theta / rho;
            let fd = m.pressure_rho_derivative(rho, theta);
            assert!(((fd - exact) / exact).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_closure_is_rejected_with_location() {
        let spec = spec_with(|s| s.mu_plus = ClosureSpec::Expression("1/(rho - 1)".into()));
        let m = MaterialSystem::from_spec(&spec, 2).unwrap();
        let sample = SampleBox { rho: (0.5, 1.5), theta: (1.0, 1.0), points: 3 };
        let err = m.validate(&sample).unwrap_err().to_string();
        assert!(err.contains("rho, theta"), "{err}");
    }

    #[test]
    fn equilibrium_residual_arithmetic() {
        // psi_- = 0, psi_+ constant cancelling the pressure term.
        let spec = spec_with(|s| {
            s.pressure_plus = ClosureSpec::Constant(4.0);
            s.psi_minus = ClosureSpec::Constant(0.0);
            s.psi_plus = ClosureSpec::Constant((0.5 - 1.0) * 4.0);
        });
        assert_eq!(MaterialSystem::from_spec(&spec, 2).unwrap().equilibrium_residual(), 0.0);

        let spec = spec_with(|s| {
            s.pressure_plus = ClosureSpec::Constant(4.0);
            s.psi_minus = ClosureSpec::Constant(3.0);
            s.psi_plus = ClosureSpec::Constant(1.0);
        });
        assert_eq!(MaterialSystem::from_spec(&spec, 2).unwrap().equilibrium_residual(), 0.0);

        let spec = spec_with(|s| {
            s.pressure_plus = ClosureSpec::Constant(4.0);
            s.psi_minus = ClosureSpec::Constant(2.0);
            s.psi_plus = ClosureSpec::Constant(1.0);
        });
        let m = MaterialSystem::from_spec(&spec, 2).unwrap();
        assert_eq!(m.equilibrium_residual(), -1.0);
        assert!(m.require_equilibrium().is_err());
    }

    #[test]
    fn auto_shift_enforces_equilibrium() {
        let spec = spec_with(|s| {
            s.psi_minus = ClosureSpec::Expression("-theta*ln(theta)".into());
            s.auto_shift_psi_minus = true;
        });
        let m = MaterialSystem::from_spec(&spec, 2).unwrap();
        assert!(m.equilibrium_residual().abs() < 1e-15);
    }

    #[test]
    fn thermo_consistency_of_logarithmic_free_energy() {
        let m = MaterialSystem::default_for(2);
        let r = m.thermo_consistency(&m.default_box()).unwrap();
        assert!(r.kappa_deviation_minus < 1e-8, "{r:?}");
        assert!(r.kappa_deviation_plus < 1e-8, "{r:?}");
        assert!(r.pressure_deviation < 1e-8, "{r:?}");
        assert!(r.specific_heat_positive());
    }

    #[test]
    fn thermo_consistency_flags_degenerate_and_mismatched_closures() {
        let spec = spec_with(|s| {
            s.psi_minus = ClosureSpec::Constant(0.5);
            s.eta_minus = ClosureSpec::Constant(0.0);
        });
        let m = MaterialSystem::from_spec(&spec, 2).unwrap();
        let r = m.thermo_consistency(&m.default_box()).unwrap();
        assert!(!r.specific_heat_positive());

        let spec = spec_with(|s| s.kappa_minus = ClosureSpec::Constant(2.0));
        let m = MaterialSystem::from_spec(&spec, 2).unwrap();
        let r = m.thermo_consistency(&m.default_box()).unwrap();
        assert!((r.kappa_deviation_minus - 1.0).abs() < 1e-8);
    }

    #[test]
    fn stress_examples() {
        let m = MaterialSystem::default_for(2);
        let t = m.stress(Side::Plus, &Tensor::zeros(2), 0.0, 3.0, 1.0, 1.0).unwrap();
        assert_eq!(t, Tensor::identity(2).scaled(-3.0));

        let spec = spec_with(|s| s.lambda_plus = ClosureSpec::Constant(2.0));
        let m2 = MaterialSystem::from_spec(&spec, 2).unwrap();
        let t = m2.stress(Side::Plus, &Tensor::identity(2), 2.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(t, Tensor::identity(2).scaled(4.0));

        let d = Tensor::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let t = m.stress(Side::Minus, &d, 0.0, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(t.get(0, 1), 1.0);

        let asym = Tensor::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert!(m.stress(Side::Plus, &asym, 0.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn entropy_production_examples() {
        let m = MaterialSystem::default_for(2);
        assert_eq!(m.entropy_production_density(Side::Plus, &Tensor::zeros(2), 0.0, 1.0, 1.0), 0.0);
        let d = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, -1.0]]);
        assert_eq!(m.entropy_production_density(Side::Plus, &d, 0.0, 1.0, 1.0), 4.0);
        assert_eq!(entropy_production(1.0, 0.0, &Tensor::identity(2), 2.0), 0.0);
    }

    #[test]
    fn expression_closure_rejects_density_on_minus_side() {
        let spec = spec_with(|s| s.mu_minus = ClosureSpec::Expression("rho*theta".into()));
        assert!(MaterialSystem::from_spec(&spec, 2).is_err());
    }

    #[test]
    fn equal_reference_densities_are_rejected() {
        let spec = spec_with(|s| s.rho_star_minus = 1.0);
        assert!(MaterialSystem::from_spec(&spec, 2).is_err());
    }

    #[test]
    fn cubic_table_reproduces_cubic_data_at_knots_and_linear_data_everywhere() {
        let x: Vec<f64> = (0..6).map(|i| i as f64 * 0.4).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let t = CubicTable::new(x.clone(), y).unwrap();
        for s in [-0.3, 0.1, 0.77, 1.5, 2.5] {
            assert!((t.eval(s) - (2.0 * s - 1.0)).abs() < 1e-12);
        }
        let y2: Vec<f64> = x.iter().map(|v| v * v * v).collect();
        let t2 = CubicTable::new(x.clone(), y2.clone()).unwrap();
        for (xi, yi) in x.iter().zip(&y2) {
            assert!((t2.eval(*xi) - yi).abs() < 1e-12);
        }
    }

    #[test]
    fn shifted_closures_add_constants() {
        let table = Closure::compile(
            "t",
            &ClosureSpec::Builtin(Builtin::Table { variable: TableVariable::Theta, points: vec![0.0, 1.0, 2.0], values: vec![1.0, 2.0, 5.0] }),
            false,
        )
        .unwrap();
        assert!((table.shifted(0.25).eval(0.0, 1.3) - table.eval(0.0, 1.3) - 0.25).abs() < 1e-12);
        let gas = Closure::IdealGas(2.0);
        assert!((gas.shifted(1.0).eval(1.5, 2.0) - 7.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn production_is_nonnegative_when_material_validates(
            d11 in -3.0..3.0f64, d12 in -3.0..3.0f64, d22 in -3.0..3.0f64,
            rho in 0.5..2.0f64, theta in 0.5..2.0f64,
        ) {
            let m = MaterialSystem::default_for(2);
            let d = Tensor::from_rows(&[&[d11, d12], &[d12, d22]]);
            prop_assert!(m.entropy_production_density(Side::Plus, &d, d.trace(), rho, theta) >= -1e-14);
            prop_assert!(m.entropy_production_density(Side::Minus, &d, 0.0, rho, theta) >= -1e-14);
        }

        #[test]
        fn equilibrium_residual_is_invariant_under_common_free_energy_shift(c in -10.0..10.0f64) {
            let m = MaterialSystem::default_for(2);
            let mut shifted = m.clone();
            shifted.psi_plus = m.psi_plus.shifted(c);
            shifted.psi_minus = m.psi_minus.shifted(c);
            prop_assert!((shifted.equilibrium_residual() - m.equilibrium_residual()).abs() < 1e-12);
        }

        #[test]
        fn starred_stress_is_linear(
            a in -2.0..2.0f64, b in -2.0..2.0f64, dv in -2.0..2.0f64, pi in -2.0..2.0f64,
        ) {
            let m = MaterialSystem::default_for(2);
            let d = Tensor::from_rows(&[&[a, b], &[b, -a]]);
            let t1 = m.stress_starred(Side::Plus, &d, dv, pi).unwrap();
            let t2 = m.stress_starred(Side::Plus, &d.scaled(2.0), 2.0 * dv, 2.0 * pi).unwrap();
            for i in 0..2 { for j in 0..2 {
                prop_assert!((t2.get(i, j) - 2.0 * t1.get(i, j)).abs() < 1e-12);
            }}
        }
    }
}
