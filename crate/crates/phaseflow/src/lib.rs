//! Two-phase compressible/incompressible Navier-Stokes-Fourier flow with phase
//! transition across a nearly flat interface, solved in flattened coordinates.

pub mod banded;
pub mod config;
pub mod constitutive;
pub mod diagnostics;
pub mod driver;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod grid;
pub mod heat;
pub mod io;
pub mod manufactured;
pub mod modal;
pub mod plots;
pub mod rhs;
pub mod selfcheck;
pub mod state;
pub mod stokes;
pub mod transport;

pub use error::{Error, Result};
