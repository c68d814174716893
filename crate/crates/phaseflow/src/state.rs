//! The unknowns of the flattened problem and their backward time differences.

use serde::Serialize;

use crate::constitutive::{MaterialSystem, Side};
use crate::error::{Error, Result};
use crate::grid::{Grid, LineField, NormKind, StripField};

/// All unknowns at one time level, in flattened coordinates.
///
/// `pi_minus` is the shifted lower pressure `pi_- - P_+(rho*_+, theta*)`.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub rho_plus: StripField,
    pub u_plus: Vec<StripField>,
    pub u_minus: Vec<StripField>,
    pub theta_plus: StripField,
    pub theta_minus: StripField,
    pub pi_minus: StripField,
    pub h: LineField,
    pub t: f64,
}

impl State {
    /// Rest state at the reference density and temperature with a flat interface.
    pub fn equilibrium(grid: &Grid, material: &MaterialSystem) -> Self {
        Self {
            rho_plus: grid.constant(Side::Plus, material.rho_star_plus),
            u_plus: grid.vector_zeros(Side::Plus),
            u_minus: grid.vector_zeros(Side::Minus),
            theta_plus: grid.constant(Side::Plus, material.theta_star),
            theta_minus: grid.constant(Side::Minus, material.theta_star),
            pi_minus: grid.zeros(Side::Minus),
            h: grid.line_zeros(),
            t: 0.0,
        }
    }

    pub fn u(&self, side: Side) -> &[StripField] {
        match side {
            Side::Plus => &self.u_plus,
            Side::Minus => &self.u_minus,
        }
    }

    pub fn theta(&self, side: Side) -> &StripField {
        match side {
            Side::Plus => &self.theta_plus,
            Side::Minus => &self.theta_minus,
        }
    }

    fn strips(&self) -> impl Iterator<Item = &StripField> {
        [&self.rho_plus, &self.theta_plus, &self.theta_minus, &self.pi_minus]
            .into_iter()
            .chain(self.u_plus.iter())
            .chain(self.u_minus.iter())
    }

    /// Checks shapes, finiteness and positivity of density and temperature.
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if self.u_plus.len() != grid.dim || self.u_minus.len() != grid.dim {
            return Err(Error::Shape(format!("velocity must have {} components", grid.dim)));
        }
        let expected = grid.strip_len();
        let sides_ok = self.rho_plus.side == Side::Plus
            && self.theta_plus.side == Side::Plus
            && self.u_plus.iter().all(|f| f.side == Side::Plus)
            && self.theta_minus.side == Side::Minus
            && self.pi_minus.side == Side::Minus
            && self.u_minus.iter().all(|f| f.side == Side::Minus);
        if !sides_ok {
            return Err(Error::Shape("field stored on the wrong strip".into()));
        }
        if self.strips().any(|f| f.data.len() != expected) || self.h.data.len() != grid.n_tan {
            return Err(Error::Shape("field size does not match the grid".into()));
        }
        if !self.strips().all(StripField::is_finite) || !self.h.is_finite() || !self.t.is_finite() {
            return Err(Error::Gate("non-finite value in state".into()));
        }
        if !(self.rho_plus.min() > 0.0) {
            return Err(Error::Gate(format!("density lost positivity (min {:e})", self.rho_plus.min())));
        }
        let theta_min = self.theta_plus.min().min(self.theta_minus.min());
        if !(theta_min > 0.0) {
            return Err(Error::Gate(format!("temperature lost positivity (min {theta_min:e})")));
        }
        Ok(())
    }

    /// L2 norms of the deviation from the rest state, one per field.
    pub fn deviation(&self, grid: &Grid, material: &MaterialSystem) -> Result<FieldNorms> {
        let l2 = |f: &StripField| grid.norm(f, NormKind::Lq(2.0));
        let vec_l2 = |v: &[StripField]| -> Result<f64> {
            let mut s = 0.0;
            for c in v {
                s += l2(c)?.powi(2);
            }
            Ok(s.sqrt())
        };
        Ok(FieldNorms {
            rho_plus: l2(&self.rho_plus.map(|r| r - material.rho_star_plus))?,
            u_plus: vec_l2(&self.u_plus)?,
            u_minus: vec_l2(&self.u_minus)?,
            theta_plus: l2(&self.theta_plus.map(|v| v - material.theta_star))?,
            theta_minus: l2(&self.theta_minus.map(|v| v - material.theta_star))?,
            pi_minus: l2(&self.pi_minus)?,
            h: grid.line_norm(&self.h, NormKind::Lq(2.0))?,
        })
    }

    /// `2 self - older` in every field, at the time of `self`.
    pub fn extrapolate(&self, older: &State) -> State {
        let ex = |a: &StripField, b: &StripField| a.zip_map(b, |x, y| 2.0 * x - y);
        let vex = |a: &[StripField], b: &[StripField]| a.iter().zip(b).map(|(a, b)| ex(a, b)).collect();
        State {
            rho_plus: ex(&self.rho_plus, &older.rho_plus),
            u_plus: vex(&self.u_plus, &older.u_plus),
            u_minus: vex(&self.u_minus, &older.u_minus),
            theta_plus: ex(&self.theta_plus, &older.theta_plus),
            theta_minus: ex(&self.theta_minus, &older.theta_minus),
            pi_minus: ex(&self.pi_minus, &older.pi_minus),
            h: self.h.zip_map(&older.h, |x, y| 2.0 * x - y),
            t: self.t,
        }
    }

    /// L2 norms of `self - other`, one per field.
    pub fn distance(&self, other: &State, grid: &Grid) -> Result<FieldNorms> {
        let l2 = |a: &StripField, b: &StripField| grid.norm(&(a - b), NormKind::Lq(2.0));
        let vec_l2 = |a: &[StripField], b: &[StripField]| -> Result<f64> {
            let mut s = 0.0;
            for (x, y) in a.iter().zip(b) {
                s += l2(x, y)?.powi(2);
            }
            Ok(s.sqrt())
        };
        Ok(FieldNorms {
            rho_plus: l2(&self.rho_plus, &other.rho_plus)?,
            u_plus: vec_l2(&self.u_plus, &other.u_plus)?,
            u_minus: vec_l2(&self.u_minus, &other.u_minus)?,
            theta_plus: l2(&self.theta_plus, &other.theta_plus)?,
            theta_minus: l2(&self.theta_minus, &other.theta_minus)?,
            pi_minus: l2(&self.pi_minus, &other.pi_minus)?,
            h: grid.line_norm(&(&self.h - &other.h), NormKind::Lq(2.0))?,
        })
    }
}

/// Per-field norms, used for deviations and successive changes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct FieldNorms {
    pub rho_plus: f64,
    pub u_plus: f64,
    pub u_minus: f64,
    pub theta_plus: f64,
    pub theta_minus: f64,
    pub pi_minus: f64,
    pub h: f64,
}

impl FieldNorms {
    pub const NAMES: [&'static str; 7] =
        ["rho_plus", "u_plus", "u_minus", "theta_plus", "theta_minus", "pi_minus", "h"];

    pub fn values(&self) -> [f64; 7] {
        [self.rho_plus, self.u_plus, self.u_minus, self.theta_plus, self.theta_minus, self.pi_minus, self.h]
    }

    pub fn max(&self) -> f64 {
        self.values().into_iter().fold(0.0, f64::max)
    }
}

/// Backward time differences of the iterate against the committed level.
#[derive(Clone, Debug, PartialEq)]
pub struct Rates {
    pub u_plus: Vec<StripField>,
    pub u_minus: Vec<StripField>,
    pub theta_plus: StripField,
    pub theta_minus: StripField,
}

impl Rates {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            u_plus: grid.vector_zeros(Side::Plus),
            u_minus: grid.vector_zeros(Side::Minus),
            theta_plus: grid.zeros(Side::Plus),
            theta_minus: grid.zeros(Side::Minus),
        }
    }

    /// `(next - prev) / dt` for every field.
    pub fn between(prev: &State, next: &State, dt: f64) -> Self {
        let diff = |a: &StripField, b: &StripField| b.zip_map(a, |x, y| (x - y) / dt);
        let vdiff = |a: &[StripField], b: &[StripField]| a.iter().zip(b).map(|(a, b)| diff(a, b)).collect();
        Self {
            u_plus: vdiff(&prev.u_plus, &next.u_plus),
            u_minus: vdiff(&prev.u_minus, &next.u_minus),
            theta_plus: diff(&prev.theta_plus, &next.theta_plus),
            theta_minus: diff(&prev.theta_minus, &next.theta_minus),
        }
    }

    pub fn u(&self, side: Side) -> &[StripField] {
        match side {
            Side::Plus => &self.u_plus,
            Side::Minus => &self.u_minus,
        }
    }

    pub fn theta(&self, side: Side) -> &StripField {
        match side {
            Side::Plus => &self.theta_plus,
            Side::Minus => &self.theta_minus,
        }
    }
}
