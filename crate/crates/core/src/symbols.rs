//! Quadratic forms, the principal symbol, pseudo-convexity symbols and the
//! checks built on them.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::geometry::{outward_normal, SpaceTimeGrid};
use crate::linalg::{bilinear, mat_vec, Mat2, Vec2, C64};
use crate::model::CoefficientModel;
use crate::weight::WeightFunctionPsi;

/// Cotangent variables `(xi_0, xi', tau)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Covector {
    pub xi0: f64,
    pub xi: Vec2,
    pub tau: f64,
}

fn pack(dim: usize, v: &[f64]) -> Result<Vec2> {
    if v.len() != dim {
        return Err(LabError::DimensionMismatch {
            expected: dim,
            got: v.len(),
        });
    }
    let mut out = [0.0; 2];
    out[..dim].copy_from_slice(v);
    Ok(out)
}

fn point(x: &[f64]) -> Result<(usize, Vec2)> {
    let dim = x.len();
    if !(1..=2).contains(&dim) {
        return Err(LabError::DimensionMismatch { expected: 2, got: dim });
    }
    Ok((dim, pack(dim, x)?))
}

/// `a(t, x, v, w) = sum a_kj v_k w_j`; the dimension is that of `x`.
pub fn quad_form(model: &dyn CoefficientModel, t: f64, x: &[f64], v: &[f64], w: &[f64]) -> Result<f64> {
    let (dim, xp) = point(x)?;
    Ok(bilinear(dim, &model.principal(t, xp), &pack(dim, v)?, &pack(dim, w)?))
}

/// `a_(p)(v, w)`: `p = 0` differentiates in time, `p = k >= 1` in `x_k`.
pub fn derivative_form(model: &dyn CoefficientModel, p: usize, t: f64, x: &[f64], v: &[f64], w: &[f64]) -> Result<f64> {
    let (dim, xp) = point(x)?;
    if p > dim {
        return Err(LabError::DerivativeIndex(p));
    }
    let m = if p == 0 {
        model.principal_dt(t, xp)
    } else {
        model.principal_dx(t, xp, p - 1)
    };
    Ok(bilinear(dim, &m, &pack(dim, v)?, &pack(dim, w)?))
}

/// `p(t, x, xi) = -xi_0 + a(xi', xi')`.
pub fn principal_symbol(model: &dyn CoefficientModel, t: f64, x: &[f64], xi0: f64, xi: &[f64]) -> Result<f64> {
    Ok(-xi0 + quad_form(model, t, x, xi, xi)?)
}

/// Closed-form symbol from the matrix, its spatial derivatives and the jet
/// of the weight at one point.
pub fn q_from_jet(dim: usize, a: &Mat2, da: &[Mat2; 2], g: &Vec2, h: &Mat2, xi: &Vec2, tau: f64) -> f64 {
    let axi = mat_vec(dim, a, xi);
    let ag = mat_vec(dim, a, g);
    let t2 = tau * tau;
    let mut q = 4.0 * (bilinear(dim, h, &axi, &axi) + t2 * bilinear(dim, h, &ag, &ag));
    for k in 0..dim {
        let d = &da[k];
        q -= 2.0 * ag[k] * (bilinear(dim, d, xi, xi) - t2 * bilinear(dim, d, g, g));
        q += 4.0 * axi[k] * bilinear(dim, d, xi, g);
    }
    q
}

fn spatial_derivs(model: &dyn CoefficientModel, dim: usize, t: f64, x: Vec2) -> [Mat2; 2] {
    let mut da = [[[0.0; 2]; 2]; 2];
    for (k, d) in da.iter_mut().enumerate().take(dim) {
        *d = model.principal_dx(t, x, k);
    }
    da
}

/// Closed-form pseudo-convexity symbol of `psi` at `(t, x, xi', tau)`.
pub fn q_psi_closed(model: &dyn CoefficientModel, psi: &WeightFunctionPsi, t: f64, x: &[f64], xi: &[f64], tau: f64) -> Result<f64> {
    let (dim, xp) = point(x)?;
    let xi = pack(dim, xi)?;
    let a = model.principal(t, xp);
    let da = spatial_derivs(model, dim, t, xp);
    Ok(q_from_jet(dim, &a, &da, &psi.grad(xp), &psi.hess(xp), &xi, tau))
}

/// The time-derivative contribution `-2 a_(0)(xi', grad psi)` carried by the
/// bracket but absent from the closed form; zero for time-independent `a`.
pub fn q_psi_time_term(model: &dyn CoefficientModel, psi: &WeightFunctionPsi, t: f64, x: &[f64], xi: &[f64]) -> Result<f64> {
    let (dim, xp) = point(x)?;
    let xi = pack(dim, xi)?;
    Ok(-2.0 * bilinear(dim, &model.principal_dt(t, xp), &xi, &psi.grad(xp)))
}

/// Poisson bracket `{p(xi - i tau grad psi), p(xi + i tau grad psi)} / (2 i tau)`
/// with exact derivatives in `xi` and central differences in `(t, x)`.
#[allow(clippy::too_many_arguments)]
pub fn bracket_oracle(
    model: &dyn CoefficientModel,
    psi: &WeightFunctionPsi,
    t: f64,
    x: &[f64],
    xi0: f64,
    xi: &[f64],
    tau: f64,
    fd_step: f64,
) -> Result<f64> {
    if tau <= 0.0 || fd_step <= 0.0 {
        return Err(LabError::InvalidArgument("tau and fd_step must be positive".into()));
    }
    let (dim, xp) = point(x)?;
    let xi = pack(dim, xi)?;
    let zeta = |x: Vec2, sign: f64| -> [C64; 2] {
        let g = psi.grad(x);
        [C64::new(xi[0], sign * tau * g[0]), C64::new(xi[1], sign * tau * g[1])]
    };
    let symbol = |t: f64, x: Vec2, sign: f64| -> C64 {
        let a = model.principal(t, x);
        let z = zeta(x, sign);
        let mut s = C64::new(-xi0, 0.0);
        for k in 0..dim {
            for j in 0..dim {
                s += z[k] * z[j] * a[k][j];
            }
        }
        s
    };
    // derivative in variable k (0 = t) of the symbol with the given sign
    let d_var = |k: usize, sign: f64| -> C64 {
        let (mut tp, mut tm, mut xp_, mut xm) = (t, t, xp, xp);
        if k == 0 {
            tp += fd_step;
            tm -= fd_step;
        } else {
            xp_[k - 1] += fd_step;
            xm[k - 1] -= fd_step;
        }
        (symbol(tp, xp_, sign) - symbol(tm, xm, sign)) / (2.0 * fd_step)
    };
    let a = model.principal(t, xp);
    let d_xi = |k: usize, sign: f64| -> C64 {
        if k == 0 {
            return C64::new(-1.0, 0.0);
        }
        let z = zeta(xp, sign);
        (0..dim).map(|j| z[j] * (2.0 * a[k - 1][j])).sum()
    };
    let mut bracket = C64::new(0.0, 0.0);
    for k in 0..=dim {
        bracket += d_xi(k, -1.0) * d_var(k, 1.0) - d_var(k, -1.0) * d_xi(k, 1.0);
    }
    let val = bracket / C64::new(0.0, 2.0 * tau);
    if val.im.abs() > 1e-8 * val.re.abs().max(1.0) {
        return Err(LabError::BracketResidual { residual: val.im });
    }
    Ok(val.re)
}

/// Sample points `(level, node)` of a grid, every level from `first`.
fn samples(grid: &SpaceTimeGrid, first: usize) -> Vec<(f64, Vec2)> {
    let mut out = Vec::with_capacity((grid.n_levels() - first) * grid.n_nodes());
    for level in first..grid.n_levels() {
        for node in 0..grid.n_nodes() {
            out.push((grid.time(level), grid.coord(node)));
        }
    }
    out
}

/// Unit vector Euclidean-orthogonal to `a grad psi` (2D only).
fn tangent(a: &Mat2, g: &Vec2) -> Vec2 {
    let v = mat_vec(2, a, g);
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    [-v[1] / n, v[0] / n]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtremumResult {
    pub value: f64,
    pub vacuous: bool,
    pub t: Option<f64>,
    pub x: Option<Vec2>,
    pub samples: usize,
}

/// Minimum over grid samples of the closed-form symbol at `tau = 0` on the
/// unit vectors `xi'` with `a(grad psi, xi') = 0`.
pub fn check_ramsai(model: &dyn CoefficientModel, psi: &WeightFunctionPsi, grid: &SpaceTimeGrid) -> Result<ExtremumResult> {
    let dim = grid.dim();
    if dim == 1 {
        return Ok(ExtremumResult {
            value: f64::INFINITY,
            vacuous: true,
            t: None,
            x: None,
            samples: 0,
        });
    }
    let pts = samples(grid, 0);
    let vals = pts
        .par_iter()
        .map(|&(t, x)| {
            let g = psi.grad(x);
            if g[0] == 0.0 && g[1] == 0.0 {
                return Err(LabError::DegenerateWeight(x));
            }
            let a = model.principal(t, x);
            let e = tangent(&a, &g);
            let da = spatial_derivs(model, dim, t, x);
            Ok((q_from_jet(dim, &a, &da, &g, &psi.hess(x), &e, 0.0), t, x))
        })
        .collect::<Result<Vec<_>>>()?;
    let best = vals
        .iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .copied()
        .expect("non-empty grid");
    Ok(ExtremumResult {
        value: best.0,
        vacuous: false,
        t: Some(best.1),
        x: Some(best.2),
        samples: vals.len(),
    })
}

/// Maximum of `a(t, x, nu, grad psi)` over the unobserved faces and all levels.
pub fn check_condition1(model: &dyn CoefficientModel, psi: &WeightFunctionPsi, grid: &SpaceTimeGrid) -> Result<ExtremumResult> {
    let dim = grid.dim();
    let mut best = ExtremumResult {
        value: f64::NEG_INFINITY,
        vacuous: true,
        t: None,
        x: None,
        samples: 0,
    };
    for face in grid.domain.unobserved() {
        let nu = outward_normal(&grid.domain, face)?;
        for node in grid.face_nodes(face)? {
            let x = grid.coord(node);
            for level in 0..grid.n_levels() {
                let t = grid.time(level);
                let v = bilinear(dim, &model.principal(t, x), &nu, &psi.grad(x));
                best.samples += 1;
                best.vacuous = false;
                if v > best.value {
                    best.value = v;
                    best.t = Some(t);
                    best.x = Some(x);
                }
            }
        }
    }
    Ok(best)
}

/// Sampling of the pseudo-convexity set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SetSampling {
    /// Angles `theta` in `[0, pi/2]` with `(|xi'|, tau) ~ (cos, sin)`.
    pub n_angles: usize,
    /// Use every `stride`-th time level.
    pub level_stride: usize,
}

impl Default for SetSampling {
    fn default() -> Self {
        Self {
            n_angles: 17,
            level_stride: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LambdaSearch {
    pub lambda: Option<f64>,
    /// `(lambda, min q, max |q|)` for each grid value examined.
    pub sweep: Vec<(f64, f64, f64)>,
    pub samples: usize,
}

/// Minimum and maximum modulus of `q` for `exp(lambda psi)` on the sampled
/// pseudo-convexity set. The weight is rescaled at each point by
/// `exp(-lambda psi(x))`, which multiplies `q` by a positive factor.
fn composed_extremes(
    model: &dyn CoefficientModel,
    psi: &WeightFunctionPsi,
    pts: &[(f64, Vec2)],
    dim: usize,
    lambda: f64,
    n_angles: usize,
) -> (f64, f64) {
    pts.par_iter()
        .map(|&(t, x)| {
            let g0 = psi.grad(x);
            let h0 = psi.hess(x);
            let g = [lambda * g0[0], lambda * g0[1]];
            let mut h = [[0.0; 2]; 2];
            for k in 0..dim {
                for l in 0..dim {
                    h[k][l] = lambda * (h0[k][l] + lambda * g0[k] * g0[l]);
                }
            }
            let a = model.principal(t, x);
            let da = spatial_derivs(model, dim, t, x);
            let mut lo = f64::INFINITY;
            let mut hi: f64 = 0.0;
            let dirs: Vec<(Vec2, f64)> = if dim == 1 {
                vec![([0.0, 0.0], 1.0)]
            } else {
                let e = tangent(&a, &g);
                let n = n_angles.max(2);
                (0..n)
                    .map(|i| {
                        let th = std::f64::consts::FRAC_PI_2 * i as f64 / (n - 1) as f64;
                        ([e[0] * th.cos(), e[1] * th.cos()], th.sin())
                    })
                    .collect()
            };
            for (xi, tau) in dirs {
                let xi0 = bilinear(dim, &a, &xi, &xi) - tau * tau * bilinear(dim, &a, &g, &g);
                let s2 = 1.0 / (xi0.abs() + xi[0] * xi[0] + xi[1] * xi[1] + tau * tau);
                let s = s2.sqrt();
                let q = q_from_jet(dim, &a, &da, &g, &h, &[xi[0] * s, xi[1] * s], tau * s);
                lo = lo.min(q);
                hi = hi.max(q.abs());
            }
            (lo, hi)
        })
        .reduce(|| (f64::INFINITY, 0.0), |a, b| (a.0.min(b.0), a.1.max(b.1)))
}

/// Relative floor below which a sampled minimum counts as zero.
const POSITIVITY_FLOOR: f64 = 1e-10;

/// Smallest `lambda` on the grid for which `exp(lambda psi)` has a strictly
/// positive symbol on every sample of the pseudo-convexity set.
pub fn find_min_lambda(
    model: &dyn CoefficientModel,
    psi: &WeightFunctionPsi,
    grid: &SpaceTimeGrid,
    lambda_grid: &[f64],
    sampling: SetSampling,
) -> Result<LambdaSearch> {
    if lambda_grid.is_empty() || lambda_grid.iter().any(|l| *l <= 0.0) || lambda_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::InvalidArgument("lambda grid must be positive and increasing".into()));
    }
    let dim = grid.dim();
    let pts: Vec<(f64, Vec2)> = samples(grid, 0)
        .into_iter()
        .enumerate()
        .filter(|(i, _)| (i / grid.n_nodes()) % sampling.level_stride.max(1) == 0)
        .map(|(_, p)| p)
        .collect();
    let mut sweep = Vec::new();
    let mut found = None;
    for &lambda in lambda_grid {
        let (lo, hi) = composed_extremes(model, psi, &pts, dim, lambda, sampling.n_angles);
        sweep.push((lambda, lo, hi));
        if found.is_none() && lo > POSITIVITY_FLOOR * hi {
            found = Some(lambda);
        }
    }
    Ok(LambdaSearch {
        lambda: found,
        sweep,
        samples: pts.len(),
    })
}

pub fn default_lambda_grid() -> Vec<f64> {
    (0..=10).map(|k| 2f64.powi(k)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GardingEstimate {
    pub constant: f64,
    /// Largest relative change of the ratio when `(xi', tau)` is doubled.
    pub homogeneity_deviation: f64,
    pub samples: usize,
}

/// `min q_alpha / (|xi'|^2 + tau^2 phi^2)` over grid samples (levels from the
/// first positive time), the given `tau` values and a fan of `xi'`.
pub fn estimate_garding_constant(
    model: &dyn CoefficientModel,
    psi: &WeightFunctionPsi,
    grid: &SpaceTimeGrid,
    lambda: f64,
    taus: &[f64],
    n_directions: usize,
) -> Result<GardingEstimate> {
    let dim = grid.dim();
    let pts = samples(grid, 1);
    let mags = [0.0, 0.1, 1.0, 10.0];
    let dirs: Vec<Vec2> = if dim == 1 {
        vec![[1.0, 0.0], [-1.0, 0.0]]
    } else {
        let n = n_directions.max(1);
        (0..n)
            .map(|i| {
                let th = std::f64::consts::PI * i as f64 / n as f64;
                [th.cos(), th.sin()]
            })
            .collect()
    };
    let eval = |t: f64, x: Vec2, xi: Vec2, tau: f64| -> f64 {
        let phi = (lambda * psi.value(x)).exp() / t;
        let g0 = psi.grad(x);
        let h0 = psi.hess(x);
        let g = [lambda * phi * g0[0], lambda * phi * g0[1]];
        let mut h = [[0.0; 2]; 2];
        for k in 0..dim {
            for l in 0..dim {
                h[k][l] = lambda * phi * (h0[k][l] + lambda * g0[k] * g0[l]);
            }
        }
        let a = model.principal(t, x);
        let da = spatial_derivs(model, dim, t, x);
        let q = q_from_jet(dim, &a, &da, &g, &h, &xi, tau);
        q / (xi[0] * xi[0] + xi[1] * xi[1] + tau * tau * phi * phi)
    };
    let (c, dev, count) = pts
        .par_iter()
        .map(|&(t, x)| {
            let mut c = f64::INFINITY;
            let mut dev: f64 = 0.0;
            let mut count = 0usize;
            for &tau in taus {
                for &m in &mags {
                    if m == 0.0 && tau == 0.0 {
                        continue;
                    }
                    let dl: &[Vec2] = if m == 0.0 { &dirs[..1] } else { &dirs };
                    for d in dl {
                        let xi = [m * d[0], m * d[1]];
                        let r = eval(t, x, xi, tau);
                        let r2 = eval(t, x, [2.0 * xi[0], 2.0 * xi[1]], 2.0 * tau);
                        dev = dev.max((r2 - r).abs() / r.abs().max(f64::MIN_POSITIVE));
                        c = c.min(r);
                        count += 1;
                    }
                }
            }
            (c, dev, count)
        })
        .reduce(|| (f64::INFINITY, 0.0, 0), |a, b| (a.0.min(b.0), a.1.max(b.1), a.2 + b.2));
    Ok(GardingEstimate {
        constant: c,
        homogeneity_deviation: dev,
        samples: count,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PseudoconvexityReport {
    pub ramsai_min: f64,
    pub ramsai_vacuous: bool,
    pub condition1_max: f64,
    pub condition1_vacuous: bool,
    pub garding_constant: Option<f64>,
    pub lambda: Option<f64>,
    pub lambda_sweep: Vec<(f64, f64, f64)>,
    pub sample_count: usize,
    pub verdict: bool,
}

/// Runs every weight check on one configuration.
pub fn pseudoconvexity_report(
    model: &dyn CoefficientModel,
    psi: &WeightFunctionPsi,
    grid: &SpaceTimeGrid,
    lambda_grid: &[f64],
    sampling: SetSampling,
    garding_taus: &[f64],
) -> Result<PseudoconvexityReport> {
    let ramsai = check_ramsai(model, psi, grid)?;
    let cond = check_condition1(model, psi, grid)?;
    let search = find_min_lambda(model, psi, grid, lambda_grid, sampling)?;
    let garding = match search.lambda {
        Some(l) => Some(estimate_garding_constant(model, psi, grid, l, garding_taus, 8)?.constant),
        None => None,
    };
    Ok(PseudoconvexityReport {
        verdict: ramsai.value > 0.0 && cond.value < 0.0,
        ramsai_min: ramsai.value,
        ramsai_vacuous: ramsai.vacuous,
        condition1_max: cond.value,
        condition1_vacuous: cond.vacuous,
        garding_constant: garding,
        lambda: search.lambda,
        lambda_sweep: search.sweep,
        sample_count: ramsai.samples + cond.samples + search.samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, Face, SpatialDomain};
    use crate::model::{AnalyticCoefficients, ConstantPrincipal, PolynomialA11, TimeRamp};
    use crate::weight::{DistanceSquared, Linear};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn grid(dim: usize, observed: &[Face]) -> SpaceTimeGrid {
        let d = if dim == 1 {
            SpatialDomain::interval(0.0, 1.0, observed).unwrap()
        } else {
            SpatialDomain::rectangle([0.0, 1.0], [0.0, 1.0], observed).unwrap()
        };
        build_grid(d, 10, 8, 1.0).unwrap()
    }

    fn shifted_square(g: &SpaceTimeGrid) -> WeightFunctionPsi {
        WeightFunctionPsi::new(
            Arc::new(DistanceSquared {
                dim: g.dim(),
                center: [-1.0, -1.0],
            }),
            g,
        )
        .unwrap()
    }

    #[test]
    fn quadratic_forms() {
        let id = AnalyticCoefficients::identity();
        assert_eq!(quad_form(&id, 0.0, &[0.5, 0.5], &[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        let m = AnalyticCoefficients::new(Arc::new(ConstantPrincipal([[2.0, 1.0], [1.0, 2.0]])));
        assert_eq!(quad_form(&m, 0.0, &[0.5, 0.5], &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(quad_form(&m, 0.0, &[0.5, 0.5], &[0.0, 0.0], &[3.0, 1.0]).unwrap(), 0.0);
        assert!(quad_form(&m, 0.0, &[0.5, 0.5], &[1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn derivative_forms() {
        let c = AnalyticCoefficients::identity();
        assert_eq!(derivative_form(&c, 1, 0.3, &[0.2], &[1.0], &[1.0]).unwrap(), 0.0);
        let lin = AnalyticCoefficients::new(Arc::new(PolynomialA11 { c0: 1.0, c1: 1.0, c2: 0.0 }));
        assert_eq!(derivative_form(&lin, 1, 0.3, &[0.2], &[1.0], &[1.0]).unwrap(), 1.0);
        let ramp = AnalyticCoefficients::new(Arc::new(TimeRamp { base: 0.0, rate: 1.0 }));
        assert_eq!(derivative_form(&ramp, 0, 0.3, &[0.2], &[1.0], &[1.0]).unwrap(), 1.0);
        assert!(derivative_form(&ramp, 2, 0.3, &[0.2], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn principal_symbol_values() {
        let id = AnalyticCoefficients::identity();
        assert_eq!(principal_symbol(&id, 0.0, &[0.1, 0.2], 1.0, &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(principal_symbol(&id, 0.0, &[0.1, 0.2], 2.5, &[0.0, 0.0]).unwrap(), -2.5);
        assert!(principal_symbol(&id, 0.0, &[0.1], PI * PI, &[PI]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn closed_form_hand_values() {
        let g = grid(1, &[Face::Right]);
        let psi = shifted_square(&g);
        let id = AnalyticCoefficients::identity();
        assert_eq!(q_psi_closed(&id, &psi, 0.0, &[0.0], &[1.0], 0.0).unwrap(), 8.0);
        assert_eq!(q_psi_closed(&id, &psi, 0.0, &[0.0], &[0.0], 1.0).unwrap(), 32.0);
        let g2 = grid(2, &[Face::XHi]);
        let lin = WeightFunctionPsi::new(
            Arc::new(Linear {
                dim: 2,
                slope: [1.0, 2.0],
                offset: 0.0,
            }),
            &g2,
        )
        .unwrap();
        let m = AnalyticCoefficients::new(Arc::new(ConstantPrincipal([[2.0, 1.0], [1.0, 2.0]])));
        assert_eq!(q_psi_closed(&m, &lin, 0.3, &[0.2, 0.7], &[0.4, -1.0], 2.0).unwrap(), 0.0);
    }

    #[test]
    fn oracle_matches_closed_form() {
        let g = grid(1, &[Face::Right]);
        let psi = shifted_square(&g);
        let id = AnalyticCoefficients::identity();
        let q = q_psi_closed(&id, &psi, 0.5, &[0.3], &[0.7], 1.2).unwrap();
        let o = bracket_oracle(&id, &psi, 0.5, &[0.3], 0.0, &[0.7], 1.2, 1e-5).unwrap();
        assert!((q - o).abs() <= 1e-6 * (1.0 + q.abs()), "{q} vs {o}");
        let var = AnalyticCoefficients::new(Arc::new(PolynomialA11 { c0: 1.0, c1: 0.0, c2: 0.5 }));
        let q = q_psi_closed(&var, &psi, 0.5, &[0.6], &[-0.4], 0.8).unwrap();
        let o = bracket_oracle(&var, &psi, 0.5, &[0.6], 1.0, &[-0.4], 0.8, 1e-5).unwrap();
        assert!((q - o).abs() <= 1e-6 * (1.0 + q.abs()), "{q} vs {o}");
    }

    #[test]
    fn oracle_includes_time_term_for_time_dependent_matrix() {
        let g = grid(2, &[Face::XHi]);
        let psi = shifted_square(&g);
        let m = AnalyticCoefficients::new(Arc::new(crate::model::Anisotropic { kappa: 0.25, eps: 0.3 }));
        let (t, x, xi, tau) = (0.4, [0.3, 0.8], [0.5, -0.9], 1.7);
        let q = q_psi_closed(&m, &psi, t, &x, &xi, tau).unwrap() + q_psi_time_term(&m, &psi, t, &x, &xi).unwrap();
        let o = bracket_oracle(&m, &psi, t, &x, 0.0, &xi, tau, 1e-5).unwrap();
        assert!((q - o).abs() <= 1e-6 * (1.0 + q.abs()), "{q} vs {o}");
    }

    #[test]
    fn unit_square_minimum_is_eight() {
        let g = grid(2, &[Face::XHi]);
        let psi = shifted_square(&g);
        let r = check_ramsai(&AnalyticCoefficients::identity(), &psi, &g).unwrap();
        assert!((r.value - 8.0).abs() < 1e-12);
        let one = grid(1, &[Face::Right]);
        let r1 = check_ramsai(&AnalyticCoefficients::identity(), &shifted_square(&one), &one).unwrap();
        assert!(r1.vacuous && r1.value.is_infinite());
    }

    #[test]
    fn condition1_signs() {
        let id = AnalyticCoefficients::identity();
        let g = grid(1, &[Face::Right]);
        assert_eq!(check_condition1(&id, &shifted_square(&g), &g).unwrap().value, -2.0);
        let g = grid(1, &[Face::Left]);
        assert_eq!(check_condition1(&id, &shifted_square(&g), &g).unwrap().value, 4.0);
        let g = grid(1, &[Face::Left, Face::Right]);
        let r = check_condition1(&id, &shifted_square(&g), &g).unwrap();
        assert!(r.vacuous && r.value == f64::NEG_INFINITY);
    }

    #[test]
    fn lambda_search() {
        let g = grid(2, &[Face::XHi]);
        let id = AnalyticCoefficients::identity();
        let s = find_min_lambda(&id, &shifted_square(&g), &g, &default_lambda_grid(), SetSampling::default()).unwrap();
        assert_eq!(s.lambda, Some(1.0));
        assert!(s.sweep.iter().all(|(_, lo, _)| *lo > 0.0));
        let lin = WeightFunctionPsi::new(
            Arc::new(Linear {
                dim: 2,
                slope: [1.0, 0.5],
                offset: 0.0,
            }),
            &g,
        )
        .unwrap();
        let s = find_min_lambda(&id, &lin, &g, &default_lambda_grid(), SetSampling::default()).unwrap();
        assert_eq!(s.lambda, None);
    }

    #[test]
    fn garding_constant_is_positive_and_homogeneous() {
        let g = grid(1, &[Face::Right]);
        let e = estimate_garding_constant(&AnalyticCoefficients::identity(), &shifted_square(&g), &g, 2.0, &[1.0, 10.0], 8).unwrap();
        assert!(e.constant > 0.0);
        assert!(e.homogeneity_deviation < 1e-12);
    }
}
