//! Spatial domains, boundary partitions and space-time grids.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::linalg::Vec2;

/// A face of an interval or an axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    Left,
    Right,
    XLo,
    XHi,
    YLo,
    YHi,
}

impl Face {
    /// `(axis, is_upper_end)`.
    pub fn axis_side(self) -> (usize, bool) {
        match self {
            Face::Left | Face::XLo => (0, false),
            Face::Right | Face::XHi => (0, true),
            Face::YLo => (1, false),
            Face::YHi => (1, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Face::Left => "left",
            Face::Right => "right",
            Face::XLo => "x_lo",
            Face::XHi => "x_hi",
            Face::YLo => "y_lo",
            Face::YHi => "y_hi",
        }
    }

    pub fn parse(name: &str) -> Option<Face> {
        Some(match name {
            "left" => Face::Left,
            "right" => Face::Right,
            "x_lo" => Face::XLo,
            "x_hi" => Face::XHi,
            "y_lo" => Face::YLo,
            "y_hi" => Face::YHi,
            _ => return None,
        })
    }
}

impl fmt::Display for Face {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An interval or rectangle together with the observed part of its boundary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpatialDomain {
    dim: usize,
    bounds: [[f64; 2]; 2],
    observed: Vec<Face>,
}

impl SpatialDomain {
    pub fn interval(lo: f64, hi: f64, observed: &[Face]) -> Result<Self> {
        Self::new(1, &[[lo, hi]], observed)
    }

    pub fn rectangle(x: [f64; 2], y: [f64; 2], observed: &[Face]) -> Result<Self> {
        Self::new(2, &[x, y], observed)
    }

    pub fn new(dim: usize, bounds: &[[f64; 2]], observed: &[Face]) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(LabError::InvalidDomain(format!(
                "dimension must be 1 or 2, got {dim}"
            )));
        }
        if bounds.len() != dim {
            return Err(LabError::DimensionMismatch {
                expected: dim,
                got: bounds.len(),
            });
        }
        let mut b = [[0.0, 1.0]; 2];
        for (axis, &[lo, hi]) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(LabError::InvalidDomain(format!(
                    "axis {axis} has degenerate bounds [{lo}, {hi}]"
                )));
            }
            b[axis] = [lo, hi];
        }
        let faces = faces_for(dim);
        if observed.is_empty() {
            return Err(LabError::InvalidDomain(
                "the observed boundary part must contain at least one face".into(),
            ));
        }
        let mut obs: Vec<Face> = Vec::new();
        for f in observed {
            if !faces.contains(f) {
                return Err(LabError::UnknownFace(f.to_string()));
            }
            if !obs.contains(f) {
                obs.push(*f);
            }
        }
        obs.sort();
        Ok(Self {
            dim,
            bounds: b,
            observed: obs,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bounds(&self, axis: usize) -> [f64; 2] {
        self.bounds[axis]
    }

    pub fn length(&self, axis: usize) -> f64 {
        self.bounds[axis][1] - self.bounds[axis][0]
    }

    pub fn diameter(&self) -> f64 {
        (0..self.dim)
            .map(|a| self.length(a).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn faces(&self) -> &'static [Face] {
        faces_for(self.dim)
    }

    pub fn observed(&self) -> &[Face] {
        &self.observed
    }

    pub fn unobserved(&self) -> Vec<Face> {
        self.faces()
            .iter()
            .copied()
            .filter(|f| !self.observed.contains(f))
            .collect()
    }

    pub fn has_face(&self, face: Face) -> bool {
        self.faces().contains(&face)
    }

    pub fn with_observed(&self, observed: &[Face]) -> Result<Self> {
        Self::new(self.dim, &self.bounds[..self.dim], observed)
    }
}

fn faces_for(dim: usize) -> &'static [Face] {
    if dim == 1 {
        &[Face::Left, Face::Right]
    } else {
        &[Face::XLo, Face::XHi, Face::YLo, Face::YHi]
    }
}

/// Constant outward unit normal of a face.
pub fn outward_normal(domain: &SpatialDomain, face: Face) -> Result<Vec2> {
    if !domain.has_face(face) {
        return Err(LabError::UnknownFace(face.to_string()));
    }
    let (axis, upper) = face.axis_side();
    let mut nu = [0.0; 2];
    nu[axis] = if upper { 1.0 } else { -1.0 };
    Ok(nu)
}

/// Uniform tensor grid over `[0, T] x Omega`.
///
/// `n_x` counts intervals per axis (so `n_x + 1` nodes per axis) and `n_t`
/// counts time steps; levels are `t_j = j T / n_t`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpaceTimeGrid {
    pub domain: SpatialDomain,
    pub n_x: usize,
    pub n_t: usize,
    pub final_time: f64,
}

pub fn build_grid(domain: SpatialDomain, n_x: usize, n_t: usize, final_time: f64) -> Result<SpaceTimeGrid> {
    if !(final_time.is_finite() && final_time > 0.0) {
        return Err(LabError::InvalidGrid(format!(
            "final time must be positive, got {final_time}"
        )));
    }
    if n_x < 8 {
        return Err(LabError::InvalidGrid(format!("n_x must be at least 8, got {n_x}")));
    }
    if n_t < 8 {
        return Err(LabError::InvalidGrid(format!("n_t must be at least 8, got {n_t}")));
    }
    Ok(SpaceTimeGrid {
        domain,
        n_x,
        n_t,
        final_time,
    })
}

impl SpaceTimeGrid {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn dt(&self) -> f64 {
        self.final_time / self.n_t as f64
    }

    /// Smallest time level at which Carleman weights are evaluated.
    pub fn t_floor(&self) -> f64 {
        self.time(1)
    }

    pub fn n_levels(&self) -> usize {
        self.n_t + 1
    }

    pub fn time(&self, level: usize) -> f64 {
        (self.final_time * level as f64) / self.n_t as f64
    }

    pub fn h(&self, axis: usize) -> f64 {
        self.domain.length(axis) / self.n_x as f64
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.n_x + 1
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes_per_axis().pow(self.dim() as u32)
    }

    /// Axis stride in the flattened node ordering (x fastest).
    pub fn stride(&self, axis: usize) -> usize {
        if axis == 0 {
            1
        } else {
            self.nodes_per_axis()
        }
    }

    pub fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        let [lo, hi] = self.domain.bounds(axis);
        lo + ((hi - lo) * i as f64) / self.n_x as f64
    }

    pub fn multi_index(&self, node: usize) -> [usize; 2] {
        let n = self.nodes_per_axis();
        if self.dim() == 1 {
            [node, 0]
        } else {
            [node % n, node / n]
        }
    }

    pub fn node(&self, idx: [usize; 2]) -> usize {
        if self.dim() == 1 {
            idx[0]
        } else {
            idx[0] + idx[1] * self.nodes_per_axis()
        }
    }

    pub fn coord(&self, node: usize) -> Vec2 {
        let idx = self.multi_index(node);
        let mut x = [0.0; 2];
        for (axis, xa) in x.iter_mut().enumerate().take(self.dim()) {
            *xa = self.axis_coord(axis, idx[axis]);
        }
        x
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let idx = self.multi_index(node);
        (0..self.dim()).any(|a| idx[a] == 0 || idx[a] == self.n_x)
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&p| !self.is_boundary(p)).collect()
    }

    /// Nodes on a face, ordered along the face.
    pub fn face_nodes(&self, face: Face) -> Result<Vec<usize>> {
        if !self.domain.has_face(face) {
            return Err(LabError::UnknownFace(face.to_string()));
        }
        let (axis, upper) = face.axis_side();
        let fixed = if upper { self.n_x } else { 0 };
        if self.dim() == 1 {
            return Ok(vec![fixed]);
        }
        let other = 1 - axis;
        Ok((0..=self.n_x)
            .map(|k| {
                let mut idx = [0; 2];
                idx[axis] = fixed;
                idx[other] = k;
                self.node(idx)
            })
            .collect())
    }

    /// Quadrature weights along a face (a single unit weight in 1D).
    pub fn face_weights(&self, face: Face) -> Vec<f64> {
        if self.dim() == 1 {
            return vec![1.0];
        }
        let (axis, _) = face.axis_side();
        trapezoid_weights(self.n_x + 1, self.h(1 - axis))
    }

    /// Trapezoidal weights over all spatial nodes.
    pub fn space_weights(&self) -> Vec<f64> {
        let w1 = trapezoid_weights(self.n_x + 1, self.h(0));
        if self.dim() == 1 {
            return w1;
        }
        let w2 = trapezoid_weights(self.n_x + 1, self.h(1));
        let mut w = Vec::with_capacity(self.n_nodes());
        for wy in &w2 {
            for wx in &w1 {
                w.push(wx * wy);
            }
        }
        w
    }

    /// Trapezoidal weights over the time levels `first..=last`.
    pub fn time_weights(&self, first: usize, last: usize) -> Vec<f64> {
        let mut w = vec![0.0; self.n_levels()];
        if last > first {
            let tw = trapezoid_weights(last - first + 1, self.dt());
            w[first..=last].copy_from_slice(&tw);
        }
        w
    }

    /// Same domain and final time, every axis refined by `factor`.
    pub fn refined(&self, factor: usize) -> SpaceTimeGrid {
        SpaceTimeGrid {
            domain: self.domain.clone(),
            n_x: self.n_x * factor,
            n_t: self.n_t * factor,
            final_time: self.final_time,
        }
    }
}

pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    if n > 0 {
        w[0] = 0.5 * h;
        w[n - 1] = 0.5 * h;
    }
    w
}
