//! Crank-Nicolson solver for `i u_t - div(a grad u) + b . grad u + c u = g`
//! with Dirichlet data, Neumann traces, manufactured sources, and the
//! discrete forward map `f -> (u(T), traces)` with its exact adjoint.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::banded::{BandLu, BandMatrix};
use crate::coefficients::{sample_coefficients, CoefficientSet};
use crate::error::{LabError, Result};
use crate::fd::{multi_indices, time_derivative, time_derivative_transpose, SpatialDerivatives};
use crate::field::ComplexGridFunction;
use crate::geometry::{build_grid, Face, SpaceTimeGrid, SpatialDomain};
use crate::linalg::{fitted_order, CVec2, Mat2, Vec2, C64};
use crate::model::CoefficientModel;

const CZERO: C64 = C64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Discrete `L u = -div(a grad u) + b . grad u + c u` at one time: one row per
/// interior node, columns over all nodes.
#[derive(Clone, Debug)]
pub struct SpatialOperator {
    n_nodes: usize,
    interior: Vec<usize>,
    rows: Vec<Vec<(usize, C64)>>,
}

fn push(row: &mut Vec<(usize, C64)>, col: usize, v: C64) {
    if let Some(e) = row.iter_mut().find(|e| e.0 == col) {
        e.1 += v;
    } else {
        row.push((col, v));
    }
}

pub fn assemble_operator(model: &dyn CoefficientModel, grid: &SpaceTimeGrid, t: f64) -> SpatialOperator {
    let dim = grid.dim();
    let interior = grid.interior_nodes();
    let rows = interior
        .iter()
        .map(|&p| {
            let idx = grid.multi_index(p);
            let x = grid.coord(p);
            let mut row = Vec::with_capacity(9);
            let b = model.drift(t, x);
            push(&mut row, p, model.potential(t, x));
            for axis in 0..dim {
                let h = grid.h(axis);
                let s = grid.stride(axis);
                let x_at = |i: usize| {
                    let mut q = idx;
                    q[axis] = i;
                    grid.coord(grid.node(q))
                };
                let (xm, xp) = (x_at(idx[axis] - 1), x_at(idx[axis] + 1));
                let mid = |y: Vec2| [0.5 * (x[0] + y[0]), 0.5 * (x[1] + y[1])];
                let am = model.principal(t, mid(xm))[axis][axis];
                let ap = model.principal(t, mid(xp))[axis][axis];
                let h2 = h * h;
                push(&mut row, p - s, C64::new(-am / h2, 0.0) - b[axis] / (2.0 * h));
                push(&mut row, p, C64::new((am + ap) / h2, 0.0));
                push(&mut row, p + s, C64::new(-ap / h2, 0.0) + b[axis] / (2.0 * h));
            }
            if dim == 2 {
                let (sx, sy) = (grid.stride(0), grid.stride(1));
                let k = 1.0 / (4.0 * grid.h(0) * grid.h(1));
                let a_at = |q: usize| -> Mat2 { model.principal(t, grid.coord(q)) };
                // -d_x(a12 d_y u)
                let (ae, aw) = (a_at(p + sx)[0][1], a_at(p - sx)[0][1]);
                push(&mut row, p + sx + sy, C64::new(-ae * k, 0.0));
                push(&mut row, p + sx - sy, C64::new(ae * k, 0.0));
                push(&mut row, p - sx + sy, C64::new(aw * k, 0.0));
                push(&mut row, p - sx - sy, C64::new(-aw * k, 0.0));
                // -d_y(a21 d_x u)
                let (an, as_) = (a_at(p + sy)[1][0], a_at(p - sy)[1][0]);
                push(&mut row, p + sx + sy, C64::new(-an * k, 0.0));
                push(&mut row, p - sx + sy, C64::new(an * k, 0.0));
                push(&mut row, p + sx - sy, C64::new(as_ * k, 0.0));
                push(&mut row, p - sx - sy, C64::new(-as_ * k, 0.0));
            }
            row
        })
        .collect();
    SpatialOperator {
        n_nodes: grid.n_nodes(),
        interior,
        rows,
    }
}

impl SpatialOperator {
    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    /// `(L u)` on interior nodes.
    pub fn apply(&self, u: &[C64]) -> Vec<C64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|(c, v)| u[*c] * v).sum())
            .collect()
    }

    /// `(L u)` scattered into a full-length vector (zero on the boundary).
    pub fn apply_full(&self, u: &[C64]) -> Vec<C64> {
        let mut out = vec![CZERO; self.n_nodes];
        for (r, &p) in self.interior.iter().enumerate() {
            out[p] = self.rows[r].iter().map(|(c, v)| u[*c] * v).sum();
        }
        out
    }

    /// `L^H p` for `p` indexed by interior rows, as a full-length vector.
    pub fn apply_adjoint(&self, p: &[C64]) -> Vec<C64> {
        let mut out = vec![CZERO; self.n_nodes];
        for (row, pr) in self.rows.iter().zip(p) {
            for (c, v) in row {
                out[*c] += v.conj() * pr;
            }
        }
        out
    }

    /// `I + s L` restricted to interior rows and columns.
    pub fn shifted_matrix(&self, grid: &SpaceTimeGrid, s: C64) -> Result<BandMatrix> {
        let n_in = grid.n_x - 1;
        let bw = if grid.dim() == 1 { 1 } else { n_in + 1 };
        let pos = |node: usize| -> Option<usize> {
            if grid.is_boundary(node) {
                return None;
            }
            let idx = grid.multi_index(node);
            Some(if grid.dim() == 1 {
                idx[0] - 1
            } else {
                (idx[0] - 1) + (idx[1] - 1) * n_in
            })
        };
        let mut m = BandMatrix::zeros(self.interior.len(), bw);
        for (r, row) in self.rows.iter().enumerate() {
            m.add(r, r, C64::new(1.0, 0.0))?;
            for (c, v) in row {
                if let Some(j) = pos(*c) {
                    m.add(r, j, s * v)?;
                }
            }
        }
        Ok(m)
    }
}

/// Operator and factored step matrix for one Crank-Nicolson step.
#[derive(Clone, Debug)]
pub struct StepSystem {
    pub operator: SpatialOperator,
    pub lu: BandLu,
}

/// Step systems for a coefficient set, cached when the coefficients do not
/// depend on time.
pub struct Propagator<'a> {
    coeffs: &'a CoefficientSet,
    direction: Direction,
    cached: Option<Arc<StepSystem>>,
}

impl<'a> Propagator<'a> {
    pub fn new(coeffs: &'a CoefficientSet, direction: Direction) -> Result<Self> {
        let mut p = Self {
            coeffs,
            direction,
            cached: None,
        };
        if coeffs.model.is_time_independent() {
            p.cached = Some(Arc::new(p.build(0)?));
        }
        Ok(p)
    }

    fn build(&self, n: usize) -> Result<StepSystem> {
        let grid = &self.coeffs.grid;
        let t = 0.5 * (grid.time(n) + grid.time(n + 1));
        let operator = assemble_operator(self.coeffs.model.as_ref(), grid, t);
        let half = C64::new(0.0, 0.5 * grid.dt());
        let s = match self.direction {
            Direction::Forward => -half,
            Direction::Backward => half,
        };
        let lu = operator
            .shifted_matrix(grid, s)?
            .factor()
            .map_err(|_| LabError::SingularStep { level: n })?;
        Ok(StepSystem { operator, lu })
    }

    /// System for the step between levels `n` and `n + 1`.
    pub fn system(&self, n: usize) -> Result<Arc<StepSystem>> {
        match &self.cached {
            Some(s) => Ok(s.clone()),
            None => Ok(Arc::new(self.build(n)?)),
        }
    }
}

/// Dirichlet data on the lateral boundary.
pub type BoundaryData<'a> = &'a (dyn Fn(f64, Vec2) -> C64 + Sync);

/// Solves the initial (or final, for `Backward`) value problem with
/// homogeneous Dirichlet data.
pub fn solve_ivp(
    coeffs: &CoefficientSet,
    source: Option<&ComplexGridFunction>,
    initial: &[C64],
    direction: Direction,
) -> Result<ComplexGridFunction> {
    solve_with_boundary(coeffs, source, initial, direction, None)
}

/// As [`solve_ivp`], with optional inhomogeneous Dirichlet data.
pub fn solve_with_boundary(
    coeffs: &CoefficientSet,
    source: Option<&ComplexGridFunction>,
    initial: &[C64],
    direction: Direction,
    boundary: Option<BoundaryData>,
) -> Result<ComplexGridFunction> {
    coeffs.ensure_valid()?;
    let grid = &coeffs.grid;
    let nn = grid.n_nodes();
    if initial.len() != nn {
        return Err(LabError::DimensionMismatch {
            expected: nn,
            got: initial.len(),
        });
    }
    if let Some(g) = source {
        if g.values.len() != grid.n_levels() * nn {
            return Err(LabError::DimensionMismatch {
                expected: grid.n_levels() * nn,
                got: g.values.len(),
            });
        }
    }
    let bvalue = |level: usize, node: usize| match boundary {
        Some(f) => f(grid.time(level), grid.coord(node)),
        None => CZERO,
    };
    let start = match direction {
        Direction::Forward => 0,
        Direction::Backward => grid.n_t,
    };
    let scale = initial.iter().map(|v| v.norm()).fold(1.0, f64::max);
    for node in 0..nn {
        if grid.is_boundary(node) && (initial[node] - bvalue(start, node)).norm() > 1e-10 * scale {
            return Err(LabError::DirichletViolated((initial[node] - bvalue(start, node)).norm()));
        }
    }

    let prop = Propagator::new(coeffs, direction)?;
    let mut u = ComplexGridFunction::zeros(grid);
    u.level_mut(start).copy_from_slice(initial);
    let half = C64::new(0.0, 0.5 * grid.dt());
    let boundary_nodes: Vec<usize> = (0..nn).filter(|&p| grid.is_boundary(p)).collect();

    for step in 0..grid.n_t {
        let (n, from, to, sign) = match direction {
            Direction::Forward => (step, step, step + 1, 1.0),
            Direction::Backward => {
                let n = grid.n_t - 1 - step;
                (n, n + 1, n, -1.0)
            }
        };
        let sys = prop.system(n)?;
        let op = &sys.operator;
        let lu_prev = op.apply(u.level(from));
        let mut next_boundary = vec![CZERO; nn];
        for &p in &boundary_nodes {
            next_boundary[p] = bvalue(to, p);
        }
        let l_b = op.apply(&next_boundary);
        let s = half * sign;
        let prev = u.level(from);
        let rhs: Vec<C64> = op
            .interior()
            .iter()
            .enumerate()
            .map(|(r, &p)| {
                let mut v = prev[p] + s * lu_prev[r] + s * l_b[r];
                if let Some(g) = source {
                    v -= s * (g.level(n)[p] + g.level(n + 1)[p]);
                }
                v
            })
            .collect();
        let sol = sys.lu.solve(&rhs);
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(LabError::SingularStep { level: n });
        }
        let out = u.level_mut(to);
        for &p in &boundary_nodes {
            out[p] = next_boundary[p];
        }
        for (r, &p) in op.interior().iter().enumerate() {
            out[p] = sol[r];
        }
    }
    Ok(u)
}

/// Discrete `P u` with centered time differences on levels `1..n_t-1` and
/// interior nodes; zero elsewhere.
pub fn apply_operator(coeffs: &CoefficientSet, u: &ComplexGridFunction) -> Result<ComplexGridFunction> {
    apply_model_operator(coeffs.model.as_ref(), u)
}

pub fn apply_model_operator(model: &dyn CoefficientModel, u: &ComplexGridFunction) -> Result<ComplexGridFunction> {
    let grid = &u.grid;
    let mut out = ComplexGridFunction::zeros(grid);
    let cached = if model.is_time_independent() {
        Some(assemble_operator(model, grid, 0.0))
    } else {
        None
    };
    let k = C64::new(0.0, 1.0 / (2.0 * grid.dt()));
    for n in 1..grid.n_t {
        let fresh;
        let op = match &cached {
            Some(op) => op,
            None => {
                fresh = assemble_operator(model, grid, grid.time(n));
                &fresh
            }
        };
        let lu = op.apply(u.level(n));
        let (up, um) = (u.level(n + 1).to_vec(), u.level(n - 1).to_vec());
        let row = out.level_mut(n);
        for (r, &p) in op.interior().iter().enumerate() {
            row[p] = k * (up[p] - um[p]) + lu[r];
        }
    }
    Ok(out)
}

/// An analytic complex field with the derivatives needed to apply `P`.
pub trait AnalyticField: Send + Sync {
    fn value(&self, t: f64, x: Vec2) -> C64;
    fn dt(&self, t: f64, x: Vec2) -> C64;
    fn grad(&self, t: f64, x: Vec2) -> CVec2;
    fn hess(&self, t: f64, x: Vec2) -> [[C64; 2]; 2];
}

/// Real spatial jet: value, gradient, Hessian.
pub type SpatialJet = Arc<dyn Fn(Vec2) -> (f64, Vec2, Mat2) + Send + Sync>;

/// `t^power exp(i omega t) X(x)`.
#[derive(Clone)]
pub struct ProductField {
    pub power: i32,
    pub omega: f64,
    pub spatial: SpatialJet,
}

impl ProductField {
    fn time(&self, t: f64) -> (C64, C64) {
        let e = C64::from_polar(1.0, self.omega * t);
        let tp = t.powi(self.power);
        let dtp = if self.power == 0 {
            0.0
        } else {
            self.power as f64 * t.powi(self.power - 1)
        };
        (e * tp, e * (dtp + C64::new(0.0, self.omega) * tp))
    }
}

impl AnalyticField for ProductField {
    fn value(&self, t: f64, x: Vec2) -> C64 {
        self.time(t).0 * (self.spatial)(x).0
    }
    fn dt(&self, t: f64, x: Vec2) -> C64 {
        self.time(t).1 * (self.spatial)(x).0
    }
    fn grad(&self, t: f64, x: Vec2) -> CVec2 {
        let (_, g, _) = (self.spatial)(x);
        let tt = self.time(t).0;
        [tt * g[0], tt * g[1]]
    }
    fn hess(&self, t: f64, x: Vec2) -> [[C64; 2]; 2] {
        let (_, _, h) = (self.spatial)(x);
        let tt = self.time(t).0;
        [[tt * h[0][0], tt * h[0][1]], [tt * h[1][0], tt * h[1][1]]]
    }
}

/// `prod_k sin(pi (x_k - lo_k) / L_k)` on the grid's domain.
pub fn sine_bump(grid: &SpaceTimeGrid) -> SpatialJet {
    let dim = grid.dim();
    let b: Vec<[f64; 2]> = (0..dim).map(|a| grid.domain.bounds(a)).collect();
    Arc::new(move |x: Vec2| {
        let mut s = [1.0; 2];
        let mut d = [0.0; 2];
        let mut dd = [0.0; 2];
        for k in 0..dim {
            let w = std::f64::consts::PI / (b[k][1] - b[k][0]);
            let arg = w * (x[k] - b[k][0]);
            s[k] = arg.sin();
            d[k] = w * arg.cos();
            dd[k] = -w * w * arg.sin();
        }
        if dim == 1 {
            (s[0], [d[0], 0.0], [[dd[0], 0.0], [0.0, 0.0]])
        } else {
            (
                s[0] * s[1],
                [d[0] * s[1], s[0] * d[1]],
                [[dd[0] * s[1], d[0] * d[1]], [d[0] * d[1], s[0] * dd[1]]],
            )
        }
    })
}

/// Exact `P u` for an analytic `u`, sampled on the grid.
pub fn manufactured_source(model: &dyn CoefficientModel, u: &dyn AnalyticField, grid: &SpaceTimeGrid) -> ComplexGridFunction {
    let dim = grid.dim();
    ComplexGridFunction::from_fn(grid, |t, x| {
        let a = model.principal(t, x);
        let e = model.principal_divergence(dim, t, x);
        let b = model.drift(t, x);
        let g = u.grad(t, x);
        let h = u.hess(t, x);
        let mut v = C64::new(0.0, 1.0) * u.dt(t, x) + model.potential(t, x) * u.value(t, x);
        for j in 0..dim {
            v += (b[j] - e[j]) * g[j];
            for l in 0..dim {
                v -= h[l][j] * a[l][j];
            }
        }
        v
    })
}

/// Neumann trace `d_nu u` (order 0) or `d_t d_nu u` (order 1) on a face.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryTrace {
    pub face: Face,
    pub order_dt: usize,
    pub n_levels: usize,
    pub n_face: usize,
    /// Level-major, `level * n_face + j`.
    pub values: Vec<C64>,
}

impl BoundaryTrace {
    pub fn at(&self, level: usize, j: usize) -> C64 {
        self.values[level * self.n_face + j]
    }

    /// Quadrature weights `dt_w * face_w` matching `values`.
    pub fn weights(&self, grid: &SpaceTimeGrid) -> Vec<f64> {
        let tw = grid.time_weights(0, grid.n_t);
        let fw = grid.face_weights(self.face);
        let mut w = Vec::with_capacity(self.values.len());
        for t in &tw {
            for f in &fw {
                w.push(t * f);
            }
        }
        w
    }

    /// `L^2` norm over the lateral face `(0, T) x face`.
    pub fn norm(&self, grid: &SpaceTimeGrid) -> f64 {
        self.weights(grid)
            .iter()
            .zip(&self.values)
            .map(|(w, v)| w * v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

/// Face nodes with their first two inward neighbours.
fn face_stencil(grid: &SpaceTimeGrid, face: Face) -> Result<(Vec<[usize; 3]>, f64)> {
    let (axis, upper) = face.axis_side();
    let s = grid.stride(axis);
    let nodes = grid.face_nodes(face)?;
    let st = nodes
        .iter()
        .map(|&p| if upper { [p, p - s, p - 2 * s] } else { [p, p + s, p + 2 * s] })
        .collect();
    Ok((st, grid.h(axis)))
}

const TRACE_W: [f64; 3] = [1.5, -2.0, 0.5];

pub fn neumann_trace(u: &ComplexGridFunction, face: Face, order_dt: usize) -> Result<BoundaryTrace> {
    if order_dt > 1 {
        return Err(LabError::DerivativeIndex(order_dt));
    }
    let grid = &u.grid;
    let (st, h) = face_stencil(grid, face)?;
    let n_face = st.len();
    let mut values = Vec::with_capacity(grid.n_levels() * n_face);
    for level in 0..grid.n_levels() {
        let lv = u.level(level);
        for s in &st {
            values.push((0..3).map(|k| lv[s[k]] * TRACE_W[k]).sum::<C64>() / h);
        }
    }
    if order_dt == 1 {
        values = time_derivative(&values, grid.n_levels(), n_face, grid.dt())?;
    }
    Ok(BoundaryTrace {
        face,
        order_dt,
        n_levels: grid.n_levels(),
        n_face,
        values,
    })
}

/// Observations `(u(T), d_nu u, d_t d_nu u on each observed face)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DataVector {
    pub u_final: Vec<C64>,
    /// For each face: order 0 then order 1.
    pub traces: Vec<BoundaryTrace>,
}

impl DataVector {
    pub fn scaled(&self, s: f64) -> Self {
        let mut d = self.clone();
        d.u_final.iter_mut().for_each(|v| *v *= s);
        for t in &mut d.traces {
            t.values.iter_mut().for_each(|v| *v *= s);
        }
        d
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut d = self.clone();
        for (a, b) in d.u_final.iter_mut().zip(&other.u_final) {
            *a -= b;
        }
        for (t, o) in d.traces.iter_mut().zip(&other.traces) {
            for (a, b) in t.values.iter_mut().zip(&o.values) {
                *a -= b;
            }
        }
        d
    }

    /// Channels as flat slices: `u(T)` first, then each trace.
    pub fn channels_mut(&mut self) -> Vec<&mut [C64]> {
        let mut out: Vec<&mut [C64]> = vec![self.u_final.as_mut_slice()];
        for t in &mut self.traces {
            out.push(t.values.as_mut_slice());
        }
        out
    }
}

/// Linear map from a real source factor `f` to the observations of the
/// solution with `g = R f`, `u(0) = 0` and homogeneous Dirichlet data.
pub struct ForwardMap<'a> {
    pub coeffs: &'a CoefficientSet,
    pub faces: Vec<Face>,
    ops: SpatialDerivatives,
    space_w: Vec<f64>,
}

impl<'a> ForwardMap<'a> {
    pub fn new(coeffs: &'a CoefficientSet, faces: &[Face]) -> Result<Self> {
        coeffs.ensure_valid()?;
        if faces.is_empty() {
            return Err(LabError::InvalidArgument("at least one observed face is required".into()));
        }
        for f in faces {
            if !coeffs.grid.domain.has_face(*f) {
                return Err(LabError::UnknownFace(f.to_string()));
            }
        }
        Ok(Self {
            coeffs,
            faces: faces.to_vec(),
            ops: SpatialDerivatives::new(&coeffs.grid, 3)?,
            space_w: coeffs.grid.space_weights(),
        })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.coeffs.grid
    }

    pub fn derivatives(&self) -> &SpatialDerivatives {
        &self.ops
    }

    pub fn source(&self, f: &[f64]) -> ComplexGridFunction {
        let grid = self.grid();
        let nn = grid.n_nodes();
        let mut g = ComplexGridFunction::zeros(grid);
        for (k, v) in g.values.iter_mut().enumerate() {
            *v = self.coeffs.r[k] * f[k % nn];
        }
        g
    }

    pub fn observe(&self, u: &ComplexGridFunction) -> Result<DataVector> {
        let mut traces = Vec::with_capacity(2 * self.faces.len());
        for &face in &self.faces {
            let t0 = neumann_trace(u, face, 0)?;
            let mut t1 = t0.clone();
            t1.order_dt = 1;
            t1.values = time_derivative(&t0.values, t0.n_levels, t0.n_face, self.grid().dt())?;
            traces.push(t0);
            traces.push(t1);
        }
        Ok(DataVector {
            u_final: u.final_level().to_vec(),
            traces,
        })
    }

    pub fn solve(&self, f: &[f64]) -> Result<ComplexGridFunction> {
        let grid = self.grid();
        if f.len() != grid.n_nodes() {
            return Err(LabError::DimensionMismatch {
                expected: grid.n_nodes(),
                got: f.len(),
            });
        }
        let g = self.source(f);
        solve_ivp(self.coeffs, Some(&g), &vec![CZERO; grid.n_nodes()], Direction::Forward)
    }

    pub fn apply(&self, f: &[f64]) -> Result<DataVector> {
        self.observe(&self.solve(f)?)
    }

    /// Data pairing: full `H^3` pairing of the final states plus `L^2` pairings
    /// of the traces.
    pub fn inner(&self, d: &DataVector, r: &DataVector) -> C64 {
        let mut s = CZERO;
        for alpha in multi_indices(self.grid().dim(), 3) {
            let da = self.ops.apply(&d.u_final, alpha);
            let ra = self.ops.apply(&r.u_final, alpha);
            s += crate::field::spatial_inner(&self.space_w, &da, &ra);
        }
        for (td, tr) in d.traces.iter().zip(&r.traces) {
            let w = td.weights(self.grid());
            s += w
                .iter()
                .zip(td.values.iter().zip(&tr.values))
                .map(|(w, (a, b))| a * b.conj() * *w)
                .sum::<C64>();
        }
        s
    }

    pub fn norm(&self, d: &DataVector) -> f64 {
        self.inner(d, d).re.max(0.0).sqrt()
    }

    /// `F^* r` in the weighted `L^2(Omega)` pairing, as a complex field.
    pub fn adjoint(&self, r: &DataVector) -> Result<Vec<C64>> {
        let grid = self.grid();
        let nn = grid.n_nodes();
        let nl = grid.n_levels();
        if r.u_final.len() != nn || r.traces.len() != 2 * self.faces.len() {
            return Err(LabError::DimensionMismatch {
                expected: nn,
                got: r.u_final.len(),
            });
        }
        // seeds on u^n, level-major
        let mut mu = vec![CZERO; nl * nn];
        let fin = &mut mu[grid.n_t * nn..];
        for alpha in multi_indices(grid.dim(), 3) {
            let ra = self.ops.apply(&r.u_final, alpha);
            let wa: Vec<C64> = ra.iter().zip(&self.space_w).map(|(v, w)| v * *w).collect();
            let back = self.ops.apply_transpose(&wa, alpha);
            for (m, b) in fin.iter_mut().zip(&back) {
                *m += b;
            }
        }
        for (k, &face) in self.faces.iter().enumerate() {
            let (t0, t1) = (&r.traces[2 * k], &r.traces[2 * k + 1]);
            let w = t0.weights(grid);
            let s0: Vec<C64> = t0.values.iter().zip(&w).map(|(v, w)| v * *w).collect();
            let s1: Vec<C64> = t1.values.iter().zip(&w).map(|(v, w)| v * *w).collect();
            let s1b = time_derivative_transpose(&s1, nl, t0.n_face, grid.dt())?;
            let (st, h) = face_stencil(grid, face)?;
            for level in 0..nl {
                for (j, s) in st.iter().enumerate() {
                    let seed = s0[level * t0.n_face + j] + s1b[level * t0.n_face + j];
                    for q in 0..3 {
                        mu[level * nn + s[q]] += seed * (TRACE_W[q] / h);
                    }
                }
            }
        }

        let prop = Propagator::new(self.coeffs, Direction::Forward)?;
        let half = C64::new(0.0, 0.5 * grid.dt());
        let mut ghat = vec![CZERO; nl * nn];
        for n in (0..grid.n_t).rev() {
            let sys = prop.system(n)?;
            let op = &sys.operator;
            let rhs: Vec<C64> = op.interior().iter().map(|&p| mu[(n + 1) * nn + p]).collect();
            let p = sys.lu.solve_adjoint(&rhs);
            let lh = op.apply_adjoint(&p);
            for (r, &node) in op.interior().iter().enumerate() {
                mu[n * nn + node] += p[r];
                ghat[n * nn + node] += half * p[r];
                ghat[(n + 1) * nn + node] += half * p[r];
            }
            for (node, v) in lh.iter().enumerate() {
                if !grid.is_boundary(node) {
                    mu[n * nn + node] -= half * v;
                }
            }
        }
        let mut out = vec![CZERO; nn];
        for level in 0..nl {
            for node in 0..nn {
                let k = level * nn + node;
                out[node] += self.coeffs.r[k].conj() * ghat[k];
            }
        }
        for (node, v) in out.iter_mut().enumerate() {
            if grid.is_boundary(node) {
                *v = CZERO;
            } else {
                *v /= self.space_w[node];
            }
        }
        Ok(out)
    }

    /// Gradient of `1/2 |F f - d|^2` direction: `Re F^* r`.
    pub fn adjoint_apply(&self, r: &DataVector) -> Result<Vec<f64>> {
        Ok(self.adjoint(r)?.iter().map(|v| v.re).collect())
    }

    pub fn zero_data(&self) -> DataVector {
        let grid = self.grid();
        let mut traces = Vec::new();
        for &face in &self.faces {
            let n_face = grid.face_nodes(face).map(|v| v.len()).unwrap_or(0);
            for order in 0..2 {
                traces.push(BoundaryTrace {
                    face,
                    order_dt: order,
                    n_levels: grid.n_levels(),
                    n_face,
                    values: vec![CZERO; grid.n_levels() * n_face],
                });
            }
        }
        DataVector {
            u_final: vec![CZERO; grid.n_nodes()],
            traces,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    pub order: f64,
}

/// Max-norm error against `u = exp(i t) X(x)`, `X` the sine bump of the
/// domain, on `n x n` grids (`dt` proportional to `h`).
pub fn convergence_study(model: Arc<dyn CoefficientModel>, domain: &SpatialDomain, levels: &[usize], final_time: f64) -> Result<ConvergenceStudy> {
    if levels.len() < 2 {
        return Err(LabError::InvalidArgument("at least two grid levels are needed".into()));
    }
    let rows = levels
        .par_iter()
        .map(|&n| {
            let grid = build_grid(domain.clone(), n, n, final_time)?;
            let exact = ProductField {
                power: 0,
                omega: 1.0,
                spatial: sine_bump(&grid),
            };
            let g = manufactured_source(model.as_ref(), &exact, &grid);
            let set = sample_coefficients(model.clone(), &grid)?;
            let u0: Vec<C64> = (0..grid.n_nodes()).map(|p| exact.value(0.0, grid.coord(p))).collect();
            let u = solve_ivp(&set, Some(&g), &u0, Direction::Forward)?;
            let e = ComplexGridFunction::from_fn(&grid, |t, x| exact.value(t, x));
            Ok(ConvergenceRow {
                n,
                h: grid.h(0),
                error: u.sub(&e).max_abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let es: Vec<f64> = rows.iter().map(|r| r.error).collect();
    Ok(ConvergenceStudy {
        order: fitted_order(&hs, &es),
        rows,
    })
}

/// Largest per-step relative change of the squared Euclidean norm over the
/// nodes for the homogeneous problem.
pub fn conservation_drift(coeffs: &CoefficientSet, initial: &[C64]) -> Result<f64> {
    let u = solve_ivp(coeffs, None, initial, Direction::Forward)?;
    let norms: Vec<f64> = (0..coeffs.grid.n_levels())
        .map(|l| u.level(l).iter().map(|v| v.norm_sqr()).sum())
        .collect();
    Ok(norms
        .windows(2)
        .map(|w| if w[0] > 0.0 { (w[1] - w[0]).abs() / w[0] } else { w[1] })
        .fold(0.0, f64::max))
}

/// Largest relative defect of `<F f, r> = <f, F* r>` over random `f`, `r`.
pub fn adjoint_check(fwd: &ForwardMap, trials: usize, seed: u64) -> Result<f64> {
    let grid = fwd.grid();
    let w = grid.space_weights();
    let defects = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64);
            let f: Vec<f64> = (0..grid.n_nodes())
                .map(|p| if grid.is_boundary(p) { 0.0 } else { rng.random_range(-1.0..1.0) })
                .collect();
            let mut r = fwd.zero_data();
            for ch in r.channels_mut() {
                for v in ch.iter_mut() {
                    *v = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                }
            }
            let lhs = fwd.inner(&fwd.apply(&f)?, &r);
            let adj = fwd.adjoint(&r)?;
            let rhs: C64 = (0..grid.n_nodes()).map(|p| adj[p].conj() * f[p] * w[p]).sum();
            Ok((lhs - rhs).norm() / lhs.norm().max(f64::MIN_POSITIVE))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(defects.into_iter().fold(0.0, f64::max))
}
