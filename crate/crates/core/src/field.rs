//! Complex fields on space-time grids and the discrete `L^2` pairings.

use std::io::Write;

use crate::error::{LabError, Result};
use crate::geometry::SpaceTimeGrid;
use crate::linalg::{Vec2, C64};

/// Complex values per (time level, spatial node), level-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGridFunction {
    pub grid: SpaceTimeGrid,
    pub values: Vec<C64>,
}

impl ComplexGridFunction {
    pub fn zeros(grid: &SpaceTimeGrid) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![C64::new(0.0, 0.0); grid.n_levels() * grid.n_nodes()],
        }
    }

    pub fn from_fn(grid: &SpaceTimeGrid, f: impl Fn(f64, Vec2) -> C64) -> Self {
        let mut values = Vec::with_capacity(grid.n_levels() * grid.n_nodes());
        for level in 0..grid.n_levels() {
            let t = grid.time(level);
            for node in 0..grid.n_nodes() {
                values.push(f(t, grid.coord(node)));
            }
        }
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn from_values(grid: &SpaceTimeGrid, values: Vec<C64>) -> Result<Self> {
        let expected = grid.n_levels() * grid.n_nodes();
        if values.len() != expected {
            return Err(LabError::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub fn level(&self, level: usize) -> &[C64] {
        let n = self.grid.n_nodes();
        &self.values[level * n..(level + 1) * n]
    }

    pub fn level_mut(&mut self, level: usize) -> &mut [C64] {
        let n = self.grid.n_nodes();
        &mut self.values[level * n..(level + 1) * n]
    }

    pub fn final_level(&self) -> &[C64] {
        self.level(self.grid.n_t)
    }

    pub fn scaled(&self, s: C64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest modulus on spatial boundary nodes over all levels.
    pub fn max_boundary_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for level in 0..self.grid.n_levels() {
            let u = self.level(level);
            for (node, v) in u.iter().enumerate() {
                if self.grid.is_boundary(node) {
                    m = m.max(v.norm());
                }
            }
        }
        m
    }

    pub fn ensure_dirichlet(&self, tol: f64) -> Result<()> {
        let m = self.max_boundary_abs();
        if m > tol {
            Err(LabError::DirichletViolated(m))
        } else {
            Ok(())
        }
    }

    /// `(u, v)_{L^2(Q)}` over levels `first..=last`.
    pub fn inner(&self, other: &Self, first: usize, last: usize) -> C64 {
        let tw = self.grid.time_weights(first, last);
        let sw = self.grid.space_weights();
        let mut s = C64::new(0.0, 0.0);
        for level in first..=last {
            s += spatial_inner(&sw, self.level(level), other.level(level)) * tw[level];
        }
        s
    }

    pub fn norm(&self, first: usize, last: usize) -> f64 {
        self.inner(self, first, last).re.max(0.0).sqrt()
    }

    /// CSV with columns `t, x[, y], re, im`, floats at 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let dim = self.grid.dim();
        if dim == 1 {
            writeln!(out, "t,x,re,im")?;
        } else {
            writeln!(out, "t,x,y,re,im")?;
        }
        for level in 0..self.grid.n_levels() {
            let t = self.grid.time(level);
            for (node, v) in self.level(level).iter().enumerate() {
                let x = self.grid.coord(node);
                write!(out, "{t:.16e}")?;
                for xa in &x[..dim] {
                    write!(out, ",{xa:.16e}")?;
                }
                writeln!(out, ",{:.16e},{:.16e}", v.re, v.im)?;
            }
        }
        Ok(())
    }
}

/// `sum w u conj(v)`.
pub fn spatial_inner(weights: &[f64], u: &[C64], v: &[C64]) -> C64 {
    weights
        .iter()
        .zip(u.iter().zip(v))
        .map(|(w, (a, b))| a * b.conj() * *w)
        .sum()
}

pub fn spatial_norm(weights: &[f64], u: &[C64]) -> f64 {
    weights
        .iter()
        .zip(u)
        .map(|(w, a)| w * a.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

pub fn real_norm(weights: &[f64], f: &[f64]) -> f64 {
    weights.iter().zip(f).map(|(w, a)| w * a * a).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, Face, SpatialDomain};
    use std::f64::consts::PI;

    #[test]
    fn norm_of_sine_over_cylinder() {
        let grid = build_grid(SpatialDomain::interval(0.0, 1.0, &[Face::Right]).unwrap(), 64, 16, 2.0).unwrap();
        let u = ComplexGridFunction::from_fn(&grid, |t, x| C64::from_polar(1.0, t) * (PI * x[0]).sin());
        // integral over [0, 2] x [0, 1] of sin^2 = 1
        assert!((u.norm(0, grid.n_t) - 1.0).abs() < 1e-12);
        assert_eq!(u.max_boundary_abs() < 1e-15, true);
    }

    #[test]
    fn csv_has_header_and_one_row_per_sample() {
        let grid = build_grid(SpatialDomain::interval(0.0, 1.0, &[Face::Right]).unwrap(), 8, 8, 1.0).unwrap();
        let u = ComplexGridFunction::zeros(&grid);
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 9 * 9);
        assert!(text.starts_with("t,x,re,im\n"));
    }
}
