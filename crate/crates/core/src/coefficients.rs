//! Coefficient fields sampled on a space-time grid, and the standing
//! assumptions (symmetry, ellipticity, non-vanishing source factor).

use std::sync::Arc;

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::geometry::SpaceTimeGrid;
use crate::linalg::{asymmetry, min_eigen, CVec2, Mat2, Vec2, C64};
use crate::model::CoefficientModel;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct CoefficientSet {
    pub model: Arc<dyn CoefficientModel>,
    pub grid: SpaceTimeGrid,
    /// Level-major samples: index `level * n_nodes + node`.
    pub a: Vec<Mat2>,
    pub b: Vec<CVec2>,
    pub c: Vec<C64>,
    pub r: Vec<C64>,
    pub beta: f64,
    pub beta1: f64,
    /// Bound on `|b|` and `|c|` over the grid.
    pub gamma: f64,
    pub symmetry_defect: f64,
    report: AssumptionReport,
}

/// Location where an assumption is tightest.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub level: usize,
    pub node: usize,
    pub t: f64,
    pub x: Vec2,
    /// Direction attaining the ellipticity minimum, when relevant.
    pub eta: Option<Vec2>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub passed: bool,
    pub value: f64,
    pub witness: Option<Witness>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub symmetry: AssumptionCheck,
    pub ellipticity: AssumptionCheck,
    pub source_factor: AssumptionCheck,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.symmetry.passed && self.ellipticity.passed && self.source_factor.passed
    }
}

pub fn sample_coefficients(model: Arc<dyn CoefficientModel>, grid: &SpaceTimeGrid) -> Result<CoefficientSet> {
    let dim = grid.dim();
    let nn = grid.n_nodes();
    let total = grid.n_levels() * nn;
    let mut a = Vec::with_capacity(total);
    let mut b = Vec::with_capacity(total);
    let mut c = Vec::with_capacity(total);
    let mut r = Vec::with_capacity(total);
    for level in 0..grid.n_levels() {
        let t = grid.time(level);
        for node in 0..nn {
            let x = grid.coord(node);
            let m = model.principal(t, x);
            let bv = model.drift(t, x);
            let cv = model.potential(t, x);
            let rv = model.source_factor(t, x);
            let finite = (0..dim).all(|k| (0..dim).all(|j| m[k][j].is_finite()))
                && (0..dim).all(|k| bv[k].is_finite())
                && cv.is_finite()
                && rv.is_finite();
            if !finite {
                return Err(LabError::InvalidCoefficients(format!(
                    "non-finite coefficient value at t = {t}, x = {:?}",
                    &x[..dim]
                )));
            }
            a.push(m);
            b.push(bv);
            c.push(cv);
            r.push(rv);
        }
    }

    let mut sym = (0.0_f64, 0usize);
    let mut ell = (f64::INFINITY, 0usize, [0.0; 2]);
    let mut gamma = 0.0_f64;
    for (idx, m) in a.iter().enumerate() {
        let d = asymmetry(dim, m);
        if d > sym.0 {
            sym = (d, idx);
        }
        let (lam, eta) = min_eigen(dim, m);
        if lam < ell.0 {
            ell = (lam, idx, eta);
        }
        let bn = (0..dim).map(|k| b[idx][k].norm_sqr()).sum::<f64>().sqrt();
        gamma = gamma.max(bn).max(c[idx].norm());
    }
    if sym.0 > SYMMETRY_TOL {
        return Err(LabError::InvalidCoefficients(format!(
            "principal part is not symmetric (defect {:e})",
            sym.0
        )));
    }
    let last = grid.n_t * nn;
    let mut src = (f64::INFINITY, last);
    for (k, rv) in r[last..].iter().enumerate() {
        if rv.norm() < src.0 {
            src = (rv.norm(), last + k);
        }
    }

    let witness = |idx: usize, eta: Option<Vec2>| {
        let level = idx / nn;
        let node = idx % nn;
        Some(Witness {
            level,
            node,
            t: grid.time(level),
            x: grid.coord(node),
            eta,
        })
    };
    let report = AssumptionReport {
        symmetry: AssumptionCheck {
            passed: true,
            value: sym.0,
            witness: witness(sym.1, None),
        },
        ellipticity: AssumptionCheck {
            passed: ell.0 > 0.0,
            value: ell.0,
            witness: witness(ell.1, Some(ell.2)),
        },
        source_factor: AssumptionCheck {
            passed: src.0 > 0.0,
            value: src.0,
            witness: witness(src.1, None),
        },
    };

    Ok(CoefficientSet {
        model,
        grid: grid.clone(),
        a,
        b,
        c,
        r,
        beta: ell.0,
        beta1: src.0,
        gamma,
        symmetry_defect: sym.0,
        report,
    })
}

pub fn validate_assumptions(coeffs: &CoefficientSet) -> AssumptionReport {
    coeffs.report.clone()
}

impl CoefficientSet {
    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn index(&self, level: usize, node: usize) -> usize {
        level * self.grid.n_nodes() + node
    }

    /// Rejects sets that fail any standing assumption.
    pub fn ensure_valid(&self) -> Result<()> {
        let r = &self.report;
        if !r.ellipticity.passed {
            return Err(LabError::AssumptionViolated(format!(
                "ellipticity minimum {} is not positive",
                r.ellipticity.value
            )));
        }
        if !r.source_factor.passed {
            return Err(LabError::AssumptionViolated(format!(
                "min |R(T, x)| = {} is not positive",
                r.source_factor.value
            )));
        }
        Ok(())
    }

    /// Same model resampled on another grid.
    pub fn on_grid(&self, grid: &SpaceTimeGrid) -> Result<CoefficientSet> {
        sample_coefficients(self.model.clone(), grid)
    }
}
