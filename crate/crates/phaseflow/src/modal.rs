//! Bookkeeping shared by the per-mode interface solvers.

use num_complex::Complex64;
use serde::Serialize;

use crate::banded::{BandLu, BandMatrix};
use crate::error::{Error, Result};

/// Mode blocks whose estimated condition number exceeds this abort the solve.
pub const MAX_CONDITION: f64 = 1e12;

/// Relative residual every direct solve must reach.
pub const MAX_RESIDUAL: f64 = 1e-10;

/// Condition and residual of one mode block.
#[derive(Clone, Debug, Serialize)]
pub struct ModeReport {
    pub mode: usize,
    pub wave: [f64; 2],
    pub condition: f64,
    pub residual: f64,
}

/// Per-mode diagnostics of a batched solve.
#[derive(Clone, Debug, Default, Serialize)]
pub struct SolveReport {
    pub modes: Vec<ModeReport>,
}

impl SolveReport {
    pub fn max_condition(&self) -> f64 {
        self.modes.iter().map(|m| m.condition).fold(0.0, f64::max)
    }

    pub fn max_residual(&self) -> f64 {
        self.modes.iter().map(|m| m.residual).fold(0.0, f64::max)
    }

    /// Fails if any mode missed the residual target.
    pub fn certify(&self) -> Result<()> {
        match self.modes.iter().find(|m| !(m.residual < MAX_RESIDUAL)) {
            Some(m) => Err(Error::Solver(format!(
                "mode {} (k = {:?}) has relative residual {:.3e}",
                m.mode, m.wave, m.residual
            ))),
            None => Ok(()),
        }
    }

    pub fn merge(&mut self, other: SolveReport) {
        self.modes.extend(other.modes);
    }
}

/// Factors `matrix`, rejecting singular or badly conditioned blocks.
pub fn factor_checked(matrix: &BandMatrix, wave: [f64; 2], lambda: Complex64) -> Result<(BandLu, f64)> {
    let lu = BandLu::factor(matrix)
        .map_err(|e| Error::Solver(format!("mode k = {wave:?}, lambda = {lambda}: {e}")))?;
    let condition = lu.condition_estimate();
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Solver(format!(
            "mode k = {wave:?}, lambda = {lambda}: condition number {condition:.3e} exceeds {MAX_CONDITION:e}"
        )));
    }
    Ok((lu, condition))
}
