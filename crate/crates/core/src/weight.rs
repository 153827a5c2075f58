//! Weight functions `psi` used to build Carleman weights.

use std::fmt;
use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::geometry::SpaceTimeGrid;
use crate::linalg::{Mat2, Vec2, ZERO_MAT};
use crate::params::{ParamReader, Params};
use crate::registry::{Named, Registry};

/// A smooth real function of the spatial variable with its derivatives.
pub trait WeightFunction: Send + Sync + fmt::Debug {
    fn value(&self, x: Vec2) -> f64;
    fn grad(&self, x: Vec2) -> Vec2;
    fn hess(&self, x: Vec2) -> Mat2;
}

pub trait WeightFactory: Named + Send + Sync {
    fn summary(&self) -> &'static str;
    fn build(&self, dim: usize, params: &Params) -> Result<Arc<dyn WeightFunction>>;
}

/// `psi(x) = |x - y|^2`.
#[derive(Debug, Clone, Copy)]
pub struct DistanceSquared {
    pub dim: usize,
    pub center: Vec2,
}

impl WeightFunction for DistanceSquared {
    fn value(&self, x: Vec2) -> f64 {
        (0..self.dim).map(|k| (x[k] - self.center[k]).powi(2)).sum()
    }
    fn grad(&self, x: Vec2) -> Vec2 {
        let mut g = [0.0; 2];
        for k in 0..self.dim {
            g[k] = 2.0 * (x[k] - self.center[k]);
        }
        g
    }
    fn hess(&self, _x: Vec2) -> Mat2 {
        let mut h = ZERO_MAT;
        for (k, row) in h.iter_mut().enumerate().take(self.dim) {
            row[k] = 2.0;
        }
        h
    }
}

/// `psi(x) = offset + slope . x`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub dim: usize,
    pub slope: Vec2,
    pub offset: f64,
}

impl WeightFunction for Linear {
    fn value(&self, x: Vec2) -> f64 {
        self.offset + (0..self.dim).map(|k| self.slope[k] * x[k]).sum::<f64>()
    }
    fn grad(&self, _x: Vec2) -> Vec2 {
        self.slope
    }
    fn hess(&self, _x: Vec2) -> Mat2 {
        ZERO_MAT
    }
}

struct DistanceFactory;
struct LinearFactory;

impl Named for DistanceFactory {
    fn name(&self) -> &'static str {
        "distance_squared"
    }
}
impl WeightFactory for DistanceFactory {
    fn summary(&self) -> &'static str {
        "|x - center|^2, center outside the closed domain (default -1 in every coordinate)"
    }
    fn build(&self, dim: usize, params: &Params) -> Result<Arc<dyn WeightFunction>> {
        let r = ParamReader::new(self.name(), params, &["center"])?;
        let center = r.vector("center", dim, [-1.0, -1.0])?;
        Ok(Arc::new(DistanceSquared { dim, center }))
    }
}

impl Named for LinearFactory {
    fn name(&self) -> &'static str {
        "linear"
    }
}
impl WeightFactory for LinearFactory {
    fn summary(&self) -> &'static str {
        "offset + slope . x (defaults: offset 1, slope 1 in every coordinate)"
    }
    fn build(&self, dim: usize, params: &Params) -> Result<Arc<dyn WeightFunction>> {
        let r = ParamReader::new(self.name(), params, &["slope", "offset"])?;
        Ok(Arc::new(Linear {
            dim,
            slope: r.vector("slope", dim, if dim == 1 { [1.0, 0.0] } else { [1.0, 1.0] })?,
            offset: r.scalar("offset", 1.0)?,
        }))
    }
}

pub fn weight_registry() -> Registry<dyn WeightFactory> {
    let mut r: Registry<dyn WeightFactory> = Registry::new("weight function");
    r.register(Box::new(DistanceFactory)).register(Box::new(LinearFactory));
    r
}

pub fn build_weight(name: &str, dim: usize, params: &Params) -> Result<Arc<dyn WeightFunction>> {
    weight_registry().get(name)?.build(dim, params)
}

/// A weight function checked against a grid: its gradient does not vanish at
/// any node, and its sup norm over the nodes is recorded.
#[derive(Clone, Debug)]
pub struct WeightFunctionPsi {
    pub function: Arc<dyn WeightFunction>,
    pub dim: usize,
    pub sup_norm: f64,
}

impl WeightFunctionPsi {
    pub fn new(function: Arc<dyn WeightFunction>, grid: &SpaceTimeGrid) -> Result<Self> {
        let dim = grid.dim();
        let mut sup: f64 = 0.0;
        for node in 0..grid.n_nodes() {
            let x = grid.coord(node);
            let g = function.grad(x);
            if (0..dim).all(|k| g[k] == 0.0) {
                return Err(LabError::DegenerateWeight(x));
            }
            sup = sup.max(function.value(x).abs());
        }
        Ok(Self {
            function,
            dim,
            sup_norm: sup,
        })
    }

    pub fn value(&self, x: Vec2) -> f64 {
        self.function.value(x)
    }
    pub fn grad(&self, x: Vec2) -> Vec2 {
        self.function.grad(x)
    }
    pub fn hess(&self, x: Vec2) -> Mat2 {
        self.function.hess(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, Face, SpatialDomain};
    use crate::params::ParamValue;

    #[test]
    fn shifted_square_sup_norm_is_four() {
        let grid = build_grid(SpatialDomain::interval(0.0, 1.0, &[Face::Right]).unwrap(), 10, 10, 1.0).unwrap();
        let f = build_weight("distance_squared", 1, &Params::new()).unwrap();
        let psi = WeightFunctionPsi::new(f, &grid).unwrap();
        assert_eq!(psi.sup_norm, 4.0);
        assert_eq!(psi.grad([0.0, 0.0])[0], 2.0);
    }

    #[test]
    fn center_inside_domain_hits_a_critical_node() {
        let grid = build_grid(SpatialDomain::interval(0.0, 1.0, &[Face::Right]).unwrap(), 10, 10, 1.0).unwrap();
        let mut p = Params::new();
        p.insert("center".into(), ParamValue::Vector(vec![0.5]));
        let f = build_weight("distance_squared", 1, &p).unwrap();
        assert!(matches!(WeightFunctionPsi::new(f, &grid), Err(LabError::DegenerateWeight(_))));
    }

    #[test]
    fn unknown_weight_lists_alternatives() {
        let err = build_weight("cubic", 1, &Params::new()).unwrap_err();
        assert!(err.to_string().contains("distance_squared"));
    }
}
