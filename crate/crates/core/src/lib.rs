//! Numerical laboratory for Carleman estimates and inverse problems for the
//! variable-coefficient Schrodinger equation.

pub mod banded;
pub mod carleman;
pub mod coefficients;
pub mod error;
pub mod fd;
pub mod field;
pub mod geometry;
pub mod inversion;
pub mod linalg;
pub mod model;
pub mod params;
pub mod registry;
pub mod series;
pub mod solver;
pub mod symbols;
pub mod weight;

pub use error::{LabError, Result};
pub use linalg::C64;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
