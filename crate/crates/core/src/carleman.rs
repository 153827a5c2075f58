//! Carleman weights, the conjugated operators `P1`/`P2`, both sides of the
//! parabolic-type Carleman estimate, the `Re(P1 w, P2 w)` identity, the
//! per-slice elliptic estimate and the `H^{3,tau}` norm.
//!
//! Quadratic quantities carrying `exp(2 tau alpha)` are reported multiplied by
//! `exp(-log_scale)`, with `log_scale = 2 tau max(alpha)`, so that the largest
//! weight is one and nothing underflows. Ratios are unaffected.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::{sample_coefficients, CoefficientSet};
use crate::error::{LabError, Result};
use crate::fd::{multi_indices, time_derivative, SpatialDerivatives};
use crate::field::{spatial_inner, ComplexGridFunction};
use crate::geometry::{build_grid, outward_normal, SpaceTimeGrid, SpatialDomain};
use crate::linalg::{bilinear, fitted_order, frobenius, mat_vec, Mat2, Vec2, C64};
use crate::model::CoefficientModel;
use crate::series::SineSeries;
use crate::solver::{neumann_trace, sine_bump, solve_ivp, AnalyticField, Direction, ProductField};
use crate::weight::{WeightFunction, WeightFunctionPsi};

const CZERO: C64 = C64::new(0.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// `phi = exp(lambda psi) / t` and `alpha = (exp(lambda psi) - exp(2 lambda |psi|)) / t`
/// sampled on levels `1..=n_t` (level 0 holds NaN).
#[derive(Clone, Debug)]
pub struct CarlemanWeights {
    pub psi: WeightFunctionPsi,
    pub lambda: f64,
    pub tau: f64,
    pub grid: SpaceTimeGrid,
    pub phi: Vec<f64>,
    pub alpha: Vec<f64>,
    /// `exp(tau alpha)`; may underflow to zero near the first level.
    pub exp_factor: Vec<f64>,
    pub alpha_max: f64,
}

pub fn build_weights(psi: &WeightFunctionPsi, lambda: f64, tau: f64, grid: &SpaceTimeGrid) -> Result<CarlemanWeights> {
    if !(lambda > 0.0 && tau > 0.0) {
        return Err(LabError::InvalidArgument(format!(
            "lambda and tau must be positive, got {lambda} and {tau}"
        )));
    }
    let nn = grid.n_nodes();
    let total = grid.n_levels() * nn;
    let mut phi = vec![f64::NAN; total];
    let mut alpha = vec![f64::NAN; total];
    let mut exp_factor = vec![0.0; total];
    let cap = (2.0 * lambda * psi.sup_norm).exp();
    let mut alpha_max = f64::NEG_INFINITY;
    for level in 1..grid.n_levels() {
        let t = grid.time(level);
        for node in 0..nn {
            let e = (lambda * psi.value(grid.coord(node))).exp();
            let k = level * nn + node;
            phi[k] = e / t;
            alpha[k] = (e - cap) / t;
            assert!(phi[k] > 0.0 && alpha[k] < 0.0, "weight sign invariant");
            exp_factor[k] = (tau * alpha[k]).exp();
            alpha_max = alpha_max.max(alpha[k]);
        }
    }
    Ok(CarlemanWeights {
        psi: psi.clone(),
        lambda,
        tau,
        grid: grid.clone(),
        phi,
        alpha,
        exp_factor,
        alpha_max,
    })
}

impl CarlemanWeights {
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        if tau <= 0.0 {
            return Err(LabError::InvalidArgument(format!("tau must be positive, got {tau}")));
        }
        let mut w = self.clone();
        w.tau = tau;
        for (e, a) in w.exp_factor.iter_mut().zip(&self.alpha) {
            *e = if a.is_nan() { 0.0 } else { (tau * a).exp() };
        }
        Ok(w)
    }

    pub fn log_scale(&self) -> f64 {
        2.0 * self.tau * self.alpha_max
    }

    /// `exp(tau (alpha - max alpha))` at a flat index.
    fn scaled_exp(&self, k: usize) -> f64 {
        (self.tau * (self.alpha[k] - self.alpha_max)).exp()
    }

}

/// Point data of the coefficients and weight used by the conjugated operators.
struct PointData {
    a: Mat2,
    g: Vec2,
    big_g: f64,
    d: f64,
}

fn point_data(model: &dyn CoefficientModel, dim: usize, psi: &WeightFunctionPsi, t: f64, x: Vec2) -> PointData {
    let a = model.principal(t, x);
    let g = psi.grad(x);
    let e = model.principal_divergence(dim, t, x);
    PointData {
        big_g: bilinear(dim, &a, &g, &g),
        d: (0..dim).map(|k| e[k] * g[k]).sum(),
        a,
        g,
    }
}

fn level_model_samples(model: &dyn CoefficientModel, grid: &SpaceTimeGrid, psi: &WeightFunctionPsi, level: usize) -> Vec<PointData> {
    let t = grid.time(level);
    (0..grid.n_nodes())
        .map(|node| point_data(model, grid.dim(), psi, t, grid.coord(node)))
        .collect()
}

fn a_grad(dim: usize, a: &Mat2, g: &Vec2, grad: &[C64; 2]) -> C64 {
    let v = mat_vec(dim, a, g);
    (0..dim).map(|k| grad[k] * v[k]).sum()
}

/// `(P1 v, P2 v)` by finite differences on levels `1..=n_t`, all nodes.
pub fn apply_conjugated_operators(
    coeffs: &CoefficientSet,
    weights: &CarlemanWeights,
    v: &ComplexGridFunction,
) -> Result<(ComplexGridFunction, ComplexGridFunction)> {
    let grid = &v.grid;
    let dim = grid.dim();
    let nn = grid.n_nodes();
    let ops = SpatialDerivatives::new(grid, 2)?;
    let vt = time_derivative(&v.values, grid.n_levels(), nn, grid.dt())?;
    let (lam, tau) = (weights.lambda, weights.tau);
    let mut p1 = ComplexGridFunction::zeros(grid);
    let mut p2 = ComplexGridFunction::zeros(grid);
    for level in 1..grid.n_levels() {
        let u = v.level(level);
        let grad = ops.gradient(u);
        let hess = ops.hessian(u);
        let pts = level_model_samples(coeffs.model.as_ref(), grid, &weights.psi, level);
        for node in 0..nn {
            let k = level * nn + node;
            let pd = &pts[node];
            let phi = weights.phi[k];
            let gr = [grad[0][node], if dim == 2 { grad[1][node] } else { CZERO }];
            let ag = a_grad(dim, &pd.a, &pd.g, &gr);
            p1.values[k] = 2.0 * tau * phi * lam * ag + tau * lam * phi * (lam * pd.big_g + pd.d) * u[node];
            let mut lap = CZERO;
            for l in 0..dim {
                for j in 0..dim {
                    lap += hess[l][j][node] * pd.a[l][j];
                }
            }
            p2.values[k] = I * vt[k] - lap - lam * lam * tau * tau * phi * phi * pd.big_g * u[node];
        }
    }
    Ok((p1, p2))
}

/// One row of the Carleman budget.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CarlemanRow {
    pub member: usize,
    pub tau: f64,
    pub lhs_volume: f64,
    pub lhs_p1p2: f64,
    pub rhs_final: f64,
    pub rhs_source: f64,
    pub rhs_boundary: f64,
    pub empirical_c: Option<f64>,
    pub log_scale: f64,
}

impl CarlemanRow {
    pub fn terms(&self) -> [f64; 5] {
        [self.lhs_volume, self.lhs_p1p2, self.rhs_final, self.rhs_source, self.rhs_boundary]
    }
}

/// Every term of the weighted estimate for `z` with source `g`; the boundary
/// integral runs over the observed faces.
pub fn carleman_budget(
    coeffs: &CoefficientSet,
    weights: &CarlemanWeights,
    z: &ComplexGridFunction,
    g: &ComplexGridFunction,
) -> Result<CarlemanRow> {
    let grid = &z.grid;
    let scale = z.max_abs().max(1.0);
    z.ensure_dirichlet(1e-12 * scale)?;
    let dim = grid.dim();
    let nn = grid.n_nodes();
    let nl = grid.n_levels();
    let (lam, tau) = (weights.lambda, weights.tau);
    let ops = SpatialDerivatives::new(grid, 2)?;
    let zt = time_derivative(&z.values, nl, nn, grid.dt())?;
    let tw = grid.time_weights(1, grid.n_t);
    let sw = grid.space_weights();

    let mut lhs_volume = 0.0;
    let mut lhs_p1p2 = 0.0;
    let mut rhs_source = 0.0;
    let mut rhs_final = 0.0;
    for level in 1..nl {
        let t = grid.time(level);
        let u = z.level(level);
        let grad = ops.gradient(u);
        let hess = ops.hessian(u);
        let pts = level_model_samples(coeffs.model.as_ref(), grid, &weights.psi, level);
        let mut final_pair = CZERO;
        for node in 0..nn {
            let k = level * nn + node;
            let x = grid.coord(node);
            let pd = &pts[node];
            let phi = weights.phi[k];
            let e = weights.scaled_exp(k);
            let e2 = e * e;
            let (gpsi, hpsi) = (weights.psi.grad(x), weights.psi.hess(x));
            let da = [lam * phi * gpsi[0], lam * phi * gpsi[1]];
            let mut dda = [[0.0; 2]; 2];
            for l in 0..dim {
                for j in 0..dim {
                    dda[l][j] = lam * phi * (hpsi[l][j] + lam * gpsi[l] * gpsi[j]);
                }
            }
            let alpha_t = -weights.alpha[k] / t;
            let zn = u[node];
            let gz = [grad[0][node], if dim == 2 { grad[1][node] } else { CZERO }];
            let grad_z2: f64 = (0..dim).map(|l| gz[l].norm_sqr()).sum();
            lhs_volume += tw[level] * sw[node] * (tau * phi * grad_z2 + (tau * phi).powi(3) * zn.norm_sqr()) * e2;
            rhs_source += tw[level] * sw[node] * g.values[k].norm_sqr() * e2;

            // derivatives of v = z exp(tau alpha), scaled
            let vv = zn * e;
            let gv = [(gz[0] + tau * zn * da[0]) * e, (gz[1] + tau * zn * da[1]) * e];
            let vt = (zt[k] + tau * alpha_t * zn) * e;
            let mut lap = CZERO;
            for l in 0..dim {
                for j in 0..dim {
                    let hz = hess[l][j][node];
                    let hv = hz + tau * (da[l] * gz[j] + da[j] * gz[l]) + zn * (tau * dda[l][j] + tau * tau * da[l] * da[j]);
                    lap += hv * pd.a[l][j] * e;
                }
            }
            let p1 = 2.0 * tau * phi * lam * a_grad(dim, &pd.a, &pd.g, &gv) + tau * lam * phi * (lam * pd.big_g + pd.d) * vv;
            let p2 = I * vt - lap - lam * lam * tau * tau * phi * phi * pd.big_g * vv;
            lhs_p1p2 += tw[level] * sw[node] * (p1.norm_sqr() + p2.norm_sqr());
            if level == grid.n_t {
                final_pair += I * vv * p1.conj() * sw[node];
            }
        }
        if level == grid.n_t {
            rhs_final = final_pair.re.abs();
        }
    }

    let mut rhs_boundary = 0.0;
    for &face in grid.domain.observed() {
        let tr = neumann_trace(z, face, 0)?;
        let nodes = grid.face_nodes(face)?;
        let fw = grid.face_weights(face);
        for level in 1..nl {
            for (j, &node) in nodes.iter().enumerate() {
                let k = level * nn + node;
                let e = weights.scaled_exp(k);
                rhs_boundary += tw[level] * fw[j] * tau * weights.phi[k] * tr.at(level, j).norm_sqr() * e * e;
            }
        }
    }
    let lhs = lhs_volume + lhs_p1p2;
    let rhs = rhs_final + rhs_source + rhs_boundary;
    Ok(CarlemanRow {
        member: 0,
        tau,
        lhs_volume,
        lhs_p1p2,
        rhs_final,
        rhs_source,
        rhs_boundary,
        empirical_c: if rhs > 0.0 { Some(lhs / rhs) } else { None },
        log_scale: weights.log_scale(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TauSummary {
    pub tau: f64,
    pub max_c: Option<f64>,
    /// Largest `max_c` over this and all smaller `tau` of the sweep.
    pub running_max: Option<f64>,
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CarlemanReport {
    pub lambda: f64,
    pub rows: Vec<CarlemanRow>,
    pub per_tau: Vec<TauSummary>,
    /// Smallest `tau` from which the running maximum varies by at most 10%.
    pub tau0_star: Option<f64>,
    /// Running maximum at the end of the sweep.
    pub stabilized_c: Option<f64>,
    /// Relative spread `(max - min) / max` of the running maximum over the
    /// upper half of the sweep.
    pub upper_half_variation: Option<f64>,
    /// Same spread for the per-`tau` maxima themselves.
    pub upper_half_pointwise_variation: Option<f64>,
    pub all_terms_nonnegative: bool,
}

/// Relative spread `(max - min) / max` of a slice.
fn spread(v: &[f64]) -> f64 {
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    (hi - lo) / hi
}

/// Runs the budget for every `(tau, member)` pair.
pub fn carleman_sweep(
    coeffs: &CoefficientSet,
    psi: &WeightFunctionPsi,
    lambda: f64,
    members: &[(ComplexGridFunction, ComplexGridFunction)],
    taus: &[f64],
) -> Result<CarlemanReport> {
    if taus.is_empty() || taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::InvalidArgument("tau grid must be increasing and non-empty".into()));
    }
    let base = build_weights(psi, lambda, taus[0], &coeffs.grid)?;
    let jobs: Vec<(usize, usize)> = (0..taus.len())
        .flat_map(|i| (0..members.len()).map(move |m| (i, m)))
        .collect();
    let mut rows = jobs
        .par_iter()
        .map(|&(i, m)| {
            let w = base.with_tau(taus[i])?;
            let mut row = carleman_budget(coeffs, &w, &members[m].0, &members[m].1)?;
            row.member = m;
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.tau.total_cmp(&b.tau).then(a.member.cmp(&b.member)));

    let mut running: Option<f64> = None;
    let per_tau: Vec<TauSummary> = taus
        .iter()
        .map(|&tau| {
            let sel: Vec<&CarlemanRow> = rows.iter().filter(|r| r.tau == tau).collect();
            let vals: Vec<f64> = sel.iter().filter_map(|r| r.empirical_c).collect();
            let max_c = vals.iter().cloned().reduce(f64::max);
            running = match (running, max_c) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            };
            TauSummary {
                tau,
                max_c,
                running_max: running,
                excluded: sel.len() - vals.len(),
            }
        })
        .collect();
    let maxima: Vec<Option<f64>> = per_tau.iter().map(|s| s.max_c).collect();
    let runs: Vec<Option<f64>> = per_tau.iter().map(|s| s.running_max).collect();
    let mut tau0_star = None;
    for k in 0..runs.len() {
        let tail: Option<Vec<f64>> = runs[k..].iter().cloned().collect();
        if tail.is_some_and(|t| spread(&t) <= 0.1) {
            tau0_star = Some(taus[k]);
            break;
        }
    }
    let half = maxima.len() / 2;
    let upper: Option<Vec<f64>> = runs[half..].iter().cloned().collect();
    let upper_pointwise: Option<Vec<f64>> = maxima[half..].iter().cloned().collect();
    let stabilized_c = tau0_star.and(*runs.last().unwrap());
    Ok(CarlemanReport {
        lambda,
        all_terms_nonnegative: rows.iter().all(|r| r.terms().iter().all(|v| *v >= 0.0)),
        rows,
        per_tau,
        tau0_star,
        stabilized_c,
        upper_half_variation: upper.map(|u| spread(&u)),
        upper_half_pointwise_variation: upper_pointwise.map(|u| spread(&u)),
    })
}

/// Solutions driven by random smooth sources `g = f(x) exp(i w t)` from random
/// smooth initial states.
pub fn carleman_ensemble(
    coeffs: &CoefficientSet,
    count: usize,
    band_limit: u32,
    seed: u64,
) -> Result<Vec<(ComplexGridFunction, ComplexGridFunction)>> {
    let grid = &coeffs.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs: Vec<(SineSeries, SineSeries, f64)> = (0..count)
        .map(|_| {
            let f = SineSeries::random(grid, band_limit, &mut rng);
            let z0 = SineSeries::random(grid, band_limit, &mut rng);
            let w = rng.random_range(0.0..2.0 * std::f64::consts::PI);
            (f, z0, w)
        })
        .collect();
    specs
        .par_iter()
        .map(|(f, z0, w)| {
            let fv = f.sample(grid);
            let nn = grid.n_nodes();
            let g = ComplexGridFunction::from_values(
                grid,
                (0..grid.n_levels() * nn)
                    .map(|k| C64::from_polar(fv[k % nn], w * grid.time(k / nn)))
                    .collect(),
            )?;
            let init: Vec<C64> = z0.sample(grid).into_iter().map(|v| C64::new(v, 0.0)).collect();
            let z = solve_ivp(coeffs, Some(&g), &init, Direction::Forward)?;
            Ok((z, g))
        })
        .collect()
}

/// Both sides of the `Re(P1 w, P2 w)` identity over levels `1..=n_t`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyIdentity {
    pub lhs: f64,
    pub rhs: f64,
    pub relative_discrepancy: f64,
    /// Named right-hand contributions, in summation order.
    pub terms: Vec<(String, f64)>,
    /// Lateral time-derivative term; zero under the Dirichlet condition.
    pub boundary_dt_term: f64,
}

pub fn energy_identity_check(coeffs: &CoefficientSet, weights: &CarlemanWeights, w: &ComplexGridFunction) -> Result<EnergyIdentity> {
    let grid = &w.grid;
    let dim = grid.dim();
    let nn = grid.n_nodes();
    let nl = grid.n_levels();
    let model = coeffs.model.as_ref();
    let (lam, tau) = (weights.lambda, weights.tau);
    let s = tau * lam;
    let (p1, p2) = apply_conjugated_operators(coeffs, weights, w)?;
    let lhs = p1.inner(&p2, 1, grid.n_t).re;

    let ops = SpatialDerivatives::new(grid, 1)?;
    let wt = time_derivative(&w.values, nl, nn, grid.dt())?;
    let tw = grid.time_weights(1, grid.n_t);
    let sw = grid.space_weights();
    let step = 1e-5 * grid.domain.diameter();

    let mu_at = |t: f64, x: Vec2| -> f64 {
        let phi = (lam * weights.psi.value(x)).exp() / t;
        let pd = point_data(model, dim, &weights.psi, t, x);
        s * phi * (lam * pd.big_g + pd.d)
    };

    let names = ["final", "x1", "x2", "x3", "x4", "x5", "x6", "b1", "x7", "x8", "x9", "x10", "x11"];
    let mut acc = [0.0f64; 13];
    let mut b0 = 0.0;
    let final_term = |level: usize| -> f64 {
        let pair = spatial_inner(&sw, &w.level(level).iter().map(|v| I * v).collect::<Vec<_>>(), p1.level(level));
        0.5 * pair.re
    };
    acc[0] = final_term(grid.n_t) - final_term(1);

    for level in 1..nl {
        let t = grid.time(level);
        let u = w.level(level);
        let grad = ops.gradient(u);
        for node in 0..nn {
            let k = level * nn + node;
            let x = grid.coord(node);
            let q = tw[level] * sw[node];
            let phi = weights.phi[k];
            let a = model.principal(t, x);
            let at = model.principal_dt(t, x);
            let mut dax = [[[0.0; 2]; 2]; 2];
            for (l, d) in dax.iter_mut().enumerate().take(dim) {
                *d = model.principal_dx(t, x, l);
            }
            let e = model.principal_divergence(dim, t, x);
            let g = weights.psi.grad(x);
            let h = weights.psi.hess(x);
            let v = mat_vec(dim, &a, &g);
            let big_g = bilinear(dim, &a, &g, &g);
            let d: f64 = (0..dim).map(|j| e[j] * g[j]).sum();
            let tr_h = frobenius(dim, &a, &h);
            let div_v = d + tr_h;
            let f = [2.0 * s * phi * v[0], 2.0 * s * phi * v[1]];
            let div_f = 2.0 * s * phi * (lam * big_g + div_v);
            let atg = mat_vec(dim, &at, &g);
            let f_t = [2.0 * s * (-phi / t * v[0] + phi * atg[0]), 2.0 * s * (-phi / t * v[1] + phi * atg[1])];
            // d_l F_k
            let mut df = [[0.0; 2]; 2];
            for l in 0..dim {
                for kk in 0..dim {
                    let dv: f64 = (0..dim).map(|j| dax[l][kk][j] * g[j] + a[kk][j] * h[l][j]).sum();
                    df[l][kk] = 2.0 * s * (lam * phi * g[l] * v[kk] + phi * dv);
                }
            }
            let mut grad_g = [0.0; 2];
            let hv = mat_vec(dim, &h, &v);
            for kk in 0..dim {
                grad_g[kk] = bilinear(dim, &dax[kk], &g, &g) + 2.0 * hv[kk];
            }
            let v_grad_g: f64 = (0..dim).map(|kk| v[kk] * grad_g[kk]).sum();
            let mu = s * phi * (lam * big_g + d);
            let kappa = lam * lam * tau * tau * phi * phi * big_g;
            let mut grad_mu = [0.0; 2];
            for l in 0..dim {
                let (mut xp, mut xm) = (x, x);
                xp[l] += step;
                xm[l] -= step;
                grad_mu[l] = (mu_at(t, xp) - mu_at(t, xm)) / (2.0 * step);
            }

            let wn = u[node];
            let gw = [grad[0][node], if dim == 2 { grad[1][node] } else { CZERO }];
            let aw = [
                (0..dim).map(|j| gw[j] * a[0][j]).sum::<C64>(),
                (0..dim).map(|j| gw[j] * a[1][j]).sum::<C64>(),
            ];
            let a_ww: f64 = (0..dim).map(|l| (aw[l] * gw[l].conj()).re).sum();
            let f_gw: C64 = (0..dim).map(|l| gw[l] * f[l]).sum();
            let ft_gw: C64 = (0..dim).map(|l| gw[l] * f_t[l]).sum();
            let e_gw: C64 = (0..dim).map(|l| gw[l] * e[l]).sum();

            acc[1] += q * 0.5 * (I * wn.conj() * ft_gw).re;
            acc[2] -= q * (s * phi * tr_h * I * wt[k] * wn.conj()).re;
            let mut x3 = CZERO;
            for l in 0..dim {
                for kk in 0..dim {
                    x3 += aw[l] * df[l][kk] * gw[kk].conj();
                }
            }
            acc[3] += q * x3.re;
            acc[4] -= q * 0.5 * div_f * a_ww;
            let mut x5 = 0.0;
            for kk in 0..dim {
                let mut form = CZERO;
                for l in 0..dim {
                    for j in 0..dim {
                        form += gw[l] * gw[j].conj() * dax[kk][l][j];
                    }
                }
                x5 += f[kk] * form.re;
            }
            acc[5] -= q * 0.5 * x5;
            acc[6] += q * (e_gw * f_gw.conj()).re;
            acc[8] += q * lam.powi(3) * tau.powi(3) * phi.powi(3) * (3.0 * lam * big_g * big_g + v_grad_g + big_g * div_v) * wn.norm_sqr();
            acc[9] -= q * kappa * mu * wn.norm_sqr();
            acc[10] += q * mu * a_ww;
            let aw_gmu: C64 = (0..dim).map(|l| aw[l] * grad_mu[l]).sum();
            acc[11] += q * (wn.conj() * aw_gmu).re;
            acc[12] += q * (mu * wn.conj() * e_gw).re;
        }
    }

    for &face in grid.domain.faces() {
        let nu = outward_normal(&grid.domain, face)?;
        let tr = neumann_trace(w, face, 0)?;
        let nodes = grid.face_nodes(face)?;
        let fw = grid.face_weights(face);
        for level in 1..nl {
            let t = grid.time(level);
            for (j, &node) in nodes.iter().enumerate() {
                let x = grid.coord(node);
                let k = level * nn + node;
                let a = model.principal(t, x);
                let phi = weights.phi[k];
                let q = tw[level] * fw[j];
                acc[7] -= q * s * phi * bilinear(dim, &a, &nu, &nu) * bilinear(dim, &a, &weights.psi.grad(x), &nu) * tr.at(level, j).norm_sqr();
                let f_nu = 2.0 * s * phi * bilinear(dim, &a, &weights.psi.grad(x), &nu);
                b0 += q * (I * f_nu * wt[k].conj() * w.values[k]).re;
            }
        }
    }
    let rhs: f64 = acc.iter().sum::<f64>() + b0;
    let denom = lhs.abs().max(rhs.abs());
    Ok(EnergyIdentity {
        lhs,
        rhs,
        relative_discrepancy: if denom > 0.0 { (lhs - rhs).abs() / denom } else { 0.0 },
        terms: names.iter().zip(acc).map(|(n, v)| (n.to_string(), v)).collect(),
        boundary_dt_term: b0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SliceCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: Option<f64>,
    pub log_scale: f64,
}

/// Weighted elliptic estimate on the slice `t = t_level`: left side against
/// `int (|q|^2 + |w_t|^2) e^{2 tau alpha} + int_Gamma tau phi |d_nu w|^2 e^{2 tau alpha}`.
pub fn elliptic_slice_check(
    weights: &CarlemanWeights,
    level: usize,
    w_slice: &[C64],
    q_slice: &[C64],
    wt_slice: &[C64],
) -> Result<SliceCheck> {
    let grid = &weights.grid;
    let nn = grid.n_nodes();
    if level == 0 || level > grid.n_t {
        return Err(LabError::InvalidArgument(format!("level {level} outside 1..={}", grid.n_t)));
    }
    for s in [w_slice, q_slice, wt_slice] {
        if s.len() != nn {
            return Err(LabError::DimensionMismatch { expected: nn, got: s.len() });
        }
    }
    let dim = grid.dim();
    let tau = weights.tau;
    let base = level * nn;
    let amax = weights.alpha[base..base + nn].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e2 = |node: usize| (2.0 * tau * (weights.alpha[base + node] - amax)).exp();
    let ops = SpatialDerivatives::new(grid, 2)?;
    let grad = ops.gradient(w_slice);
    let hess = ops.hessian(w_slice);
    let sw = grid.space_weights();
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for node in 0..nn {
        let tp = tau * weights.phi[base + node];
        let h2: f64 = (0..dim).flat_map(|l| (0..dim).map(move |j| (l, j))).map(|(l, j)| hess[l][j][node].norm_sqr()).sum();
        let g2: f64 = (0..dim).map(|l| grad[l][node].norm_sqr()).sum();
        lhs += sw[node] * (h2 / tp + tp * g2 + tp.powi(3) * w_slice[node].norm_sqr()) * e2(node);
        rhs += sw[node] * (q_slice[node].norm_sqr() + wt_slice[node].norm_sqr()) * e2(node);
    }
    let mut tmp = ComplexGridFunction::zeros(grid);
    tmp.level_mut(level).copy_from_slice(w_slice);
    for &face in grid.domain.observed() {
        let tr = neumann_trace(&tmp, face, 0)?;
        let fw = grid.face_weights(face);
        for (j, &node) in grid.face_nodes(face)?.iter().enumerate() {
            rhs += fw[j] * tau * weights.phi[base + node] * tr.at(level, j).norm_sqr() * e2(node);
        }
    }
    Ok(SliceCheck {
        lhs,
        rhs,
        ratio: if rhs > 0.0 { Some(lhs / rhs) } else { None },
        log_scale: 2.0 * tau * amax,
    })
}

/// Full `H^3` norm (all multi-indices up to order three).
pub fn h3_norm(grid: &SpaceTimeGrid, v: &[C64]) -> Result<f64> {
    let ops = SpatialDerivatives::new(grid, 3)?;
    let sw = grid.space_weights();
    let mut s = 0.0;
    for alpha in multi_indices(grid.dim(), 3) {
        let d = ops.apply(v, alpha);
        s += sw.iter().zip(&d).map(|(w, x)| w * x.norm_sqr()).sum::<f64>();
    }
    Ok(s.sqrt())
}

/// `|v|_{H^3} + tau^3 |v|_{L^2}`.
pub fn h3tau_norm(grid: &SpaceTimeGrid, v: &[C64], tau: f64) -> Result<f64> {
    if v.len() != grid.n_nodes() {
        return Err(LabError::DimensionMismatch {
            expected: grid.n_nodes(),
            got: v.len(),
        });
    }
    let l2 = crate::field::spatial_norm(&grid.space_weights(), v);
    Ok(h3_norm(grid, v)? + tau.powi(3) * l2)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyIdentityLevel {
    pub n: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub relative_discrepancy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyIdentityStudy {
    pub levels: Vec<EnergyIdentityLevel>,
    pub order: f64,
    pub max_boundary_dt_term: f64,
}

/// Identity discrepancy for `w = t^2 exp(i t) X(x)` (`X` the sine bump times
/// `1 + x/2` along the first axis) on `n x n` grids.
pub fn energy_identity_study(
    model: Arc<dyn CoefficientModel>,
    psi_fn: Arc<dyn WeightFunction>,
    domain: &SpatialDomain,
    lambda: f64,
    tau: f64,
    levels: &[usize],
    final_time: f64,
) -> Result<EnergyIdentityStudy> {
    if levels.len() < 2 {
        return Err(LabError::InvalidArgument("at least two grid levels are needed".into()));
    }
    let out = levels
        .par_iter()
        .map(|&n| {
            let grid = build_grid(domain.clone(), n, n, final_time)?;
            let set = sample_coefficients(model.clone(), &grid)?;
            let psi = WeightFunctionPsi::new(psi_fn.clone(), &grid)?;
            let weights = build_weights(&psi, lambda, tau, &grid)?;
            let field = tilted_bump(&grid);
            let w = ComplexGridFunction::from_fn(&grid, |t, x| field.value(t, x));
            let e = energy_identity_check(&set, &weights, &w)?;
            Ok((
                EnergyIdentityLevel {
                    n,
                    lhs: e.lhs,
                    rhs: e.rhs,
                    relative_discrepancy: e.relative_discrepancy,
                },
                e.boundary_dt_term.abs(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let hs: Vec<f64> = levels.iter().map(|&n| domain.length(0) / n as f64).collect();
    let ds: Vec<f64> = out.iter().map(|o| o.0.relative_discrepancy).collect();
    Ok(EnergyIdentityStudy {
        order: fitted_order(&hs, &ds),
        max_boundary_dt_term: out.iter().map(|o| o.1).fold(0.0, f64::max),
        levels: out.into_iter().map(|o| o.0).collect(),
    })
}

/// `t^2 exp(i t) X(x) (1 + (x_0 - lo_0) / 2)` with `X` the sine bump.
pub fn tilted_bump(grid: &SpaceTimeGrid) -> ProductField {
    let bump = sine_bump(grid);
    let lo = grid.domain.bounds(0)[0];
    ProductField {
        power: 2,
        omega: 1.0,
        spatial: Arc::new(move |x: Vec2| {
            let (s, g, h) = bump(x);
            let m = 1.0 + 0.5 * (x[0] - lo);
            (
                s * m,
                [g[0] * m + 0.5 * s, g[1] * m],
                [[h[0][0] * m + g[0], h[0][1] * m + 0.5 * g[1]], [h[1][0] * m + 0.5 * g[1], h[1][1] * m]],
            )
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Face;
    use crate::model::{AnalyticCoefficients, PolynomialA11};
    use crate::weight::DistanceSquared;
    use std::f64::consts::PI;

    fn grid_1d(n: usize) -> SpaceTimeGrid {
        build_grid(SpatialDomain::interval(0.0, 1.0, &[Face::Right]).unwrap(), n, n, 1.0).unwrap()
    }

    fn psi(grid: &SpaceTimeGrid) -> WeightFunctionPsi {
        WeightFunctionPsi::new(
            Arc::new(DistanceSquared {
                dim: grid.dim(),
                center: [-1.0, -1.0],
            }),
            grid,
        )
        .unwrap()
    }

    #[test]
    fn weight_values_at_final_time() {
        let grid = grid_1d(10);
        let w = build_weights(&psi(&grid), 1.0, 1.0, &grid).unwrap();
        let k = grid.n_t * grid.n_nodes() + grid.n_x;
        assert!((w.alpha[k] - (4f64.exp() - 8f64.exp())).abs() < 1e-9);
        assert!((w.alpha[k] + 2926.36).abs() < 0.01);
        assert!((w.phi[k] - 54.598).abs() < 1e-3);
        assert!(w.alpha.iter().skip(grid.n_nodes()).all(|a| *a < 0.0));
    }

    #[test]
    fn conjugated_operators_vanish_on_zero_and_match_hand_formula() {
        let grid = grid_1d(64);
        let set = sample_coefficients(AnalyticCoefficients::identity().shared(), &grid).unwrap();
        let w = build_weights(&psi(&grid), 0.5, 2.0, &grid).unwrap();
        let (p1, p2) = apply_conjugated_operators(&set, &w, &ComplexGridFunction::zeros(&grid)).unwrap();
        assert_eq!(p1.max_abs() + p2.max_abs(), 0.0);
        let v = ComplexGridFunction::from_fn(&grid, |t, x| C64::from_polar(1.0, t) * (PI * x[0]).sin());
        let (p1, _) = apply_conjugated_operators(&set, &w, &v).unwrap();
        let (lam, tau) = (0.5, 2.0);
        let (mut err, mut top): (f64, f64) = (0.0, 0.0);
        for level in 1..grid.n_levels() {
            let t = grid.time(level);
            for node in 1..grid.n_x {
                let x = grid.coord(node)[0];
                let phi = (lam * (x + 1.0).powi(2)).exp() / t;
                let g = 2.0 * (x + 1.0);
                let e = C64::from_polar(1.0, t);
                let exact = e * (2.0 * tau * phi * lam * g * PI * (PI * x).cos() + tau * lam * lam * phi * g * g * (PI * x).sin());
                err = err.max((p1.level(level)[node] - exact).norm());
                top = top.max(exact.norm());
            }
        }
        assert!(err < 1e-3 * top, "{err} {top}");
    }

    #[test]
    fn budget_is_zero_for_zero_and_quadratic_in_scale() {
        let grid = grid_1d(32);
        let set = sample_coefficients(AnalyticCoefficients::identity().shared(), &grid).unwrap();
        let w = build_weights(&psi(&grid), 0.2, 2.0, &grid).unwrap();
        let zero = ComplexGridFunction::zeros(&grid);
        let row = carleman_budget(&set, &w, &zero, &zero).unwrap();
        assert!(row.terms().iter().all(|v| *v == 0.0));
        assert_eq!(row.empirical_c, None);
        let ens = carleman_ensemble(&set, 1, 4, 7).unwrap();
        let (z, g) = &ens[0];
        let r1 = carleman_budget(&set, &w, z, g).unwrap();
        let r2 = carleman_budget(&set, &w, &z.scaled(C64::new(2.0, 0.0)), &g.scaled(C64::new(2.0, 0.0))).unwrap();
        for (a, b) in r1.terms().iter().zip(r2.terms()) {
            assert!((4.0 * a - b).abs() <= 1e-12 * b.abs().max(1e-300));
            assert!(*a >= 0.0);
        }
        assert!(r1.empirical_c.unwrap().is_finite());
    }

    #[test]
    fn energy_identity_converges() {
        let mut disc = Vec::new();
        for n in [16, 32, 64] {
            let grid = grid_1d(n);
            let model = AnalyticCoefficients::new(Arc::new(PolynomialA11 { c0: 1.0, c1: 0.0, c2: 0.5 }));
            let set = sample_coefficients(model.shared(), &grid).unwrap();
            let wts = build_weights(&psi(&grid), 0.5, 1.0, &grid).unwrap();
            let f = tilted_bump(&grid);
            let w = ComplexGridFunction::from_fn(&grid, |t, x| f.value(t, x));
            let e = energy_identity_check(&set, &wts, &w).unwrap();
            assert!(e.boundary_dt_term.abs() <= 1e-12);
            disc.push(e.relative_discrepancy);
        }
        assert!(disc[2] < disc[1] && disc[1] < disc[0], "{disc:?}");
        assert!((disc[0] / disc[2]).log2() / 2.0 >= 1.0, "{disc:?}");
    }

    #[test]
    fn energy_identity_with_time_dependent_two_dimensional_matrix() {
        let mut disc = Vec::new();
        for n in [12, 24] {
            let d = SpatialDomain::rectangle([0.0, 1.0], [0.0, 1.0], &[Face::XHi]).unwrap();
            let grid = build_grid(d, n, n, 1.0).unwrap();
            let model = AnalyticCoefficients::new(Arc::new(crate::model::Anisotropic { kappa: 0.25, eps: 0.3 }));
            let set = sample_coefficients(model.shared(), &grid).unwrap();
            let wts = build_weights(&psi(&grid), 0.5, 1.0, &grid).unwrap();
            let f = tilted_bump(&grid);
            let w = ComplexGridFunction::from_fn(&grid, |t, x| f.value(t, x));
            disc.push(energy_identity_check(&set, &wts, &w).unwrap().relative_discrepancy);
        }
        assert!(disc[1] < 0.5 * disc[0], "{disc:?}");
    }

    #[test]
    fn energy_identity_study_orders() {
        let d = SpatialDomain::interval(0.0, 1.0, &[Face::Right]).unwrap();
        let model = AnalyticCoefficients::new(Arc::new(PolynomialA11 { c0: 1.0, c1: 0.0, c2: 0.5 })).shared();
        let psi_fn = Arc::new(DistanceSquared {
            dim: 1,
            center: [-1.0, -1.0],
        });
        let s = energy_identity_study(model, psi_fn, &d, 0.5, 1.0, &[16, 32, 64], 1.0).unwrap();
        assert!(s.order > 1.5, "{s:?}");
        assert!(s.max_boundary_dt_term <= 1e-12);
    }

    #[test]
    fn slice_check_is_scale_invariant() {
        let grid = grid_1d(32);
        let w = build_weights(&psi(&grid), 0.5, 2.0, &grid).unwrap();
        let v: Vec<C64> = (0..grid.n_nodes()).map(|p| C64::new((PI * grid.coord(p)[0]).sin(), 0.0)).collect();
        let q: Vec<C64> = v.iter().map(|x| x * 3.0).collect();
        let r1 = elliptic_slice_check(&w, 16, &v, &q, &v).unwrap();
        let v2: Vec<C64> = v.iter().map(|x| x * 5.0).collect();
        let q2: Vec<C64> = q.iter().map(|x| x * 5.0).collect();
        let r2 = elliptic_slice_check(&w, 16, &v2, &q2, &v2).unwrap();
        assert!((r1.ratio.unwrap() - r2.ratio.unwrap()).abs() < 1e-12 * r1.ratio.unwrap());
        let z = vec![CZERO; grid.n_nodes()];
        assert_eq!(elliptic_slice_check(&w, 16, &z, &z, &z).unwrap().ratio, None);
    }

    #[test]
    fn h3_norm_of_sine() {
        let grid = grid_1d(128);
        let v: Vec<C64> = (0..grid.n_nodes()).map(|p| C64::new((PI * grid.coord(p)[0]).sin(), 0.0)).collect();
        let exact = ((1.0 + PI.powi(2) + PI.powi(4) + PI.powi(6)) / 2.0).sqrt();
        let n0 = h3tau_norm(&grid, &v, 0.0).unwrap();
        assert!((n0 - exact).abs() / exact < 1e-3, "{n0} vs {exact}");
        let n1 = h3tau_norm(&grid, &v, 1.0).unwrap();
        assert!((n1 - n0 - 0.5f64.sqrt()).abs() < 1e-4);
        assert_eq!(h3tau_norm(&grid, &vec![CZERO; grid.n_nodes()], 2.0).unwrap(), 0.0);
    }

    #[test]
    fn sweep_reports_bounded_constant() {
        let grid = grid_1d(32);
        let model = AnalyticCoefficients::new(Arc::new(PolynomialA11 { c0: 1.0, c1: 0.0, c2: 0.5 }));
        let set = sample_coefficients(model.shared(), &grid).unwrap();
        let mut ens = carleman_ensemble(&set, 3, 2, 5).unwrap();
        ens.push((ComplexGridFunction::zeros(&grid), ComplexGridFunction::zeros(&grid)));
        let taus: Vec<f64> = (0..8).map(|k| 2f64.powf(k as f64 / 2.0)).collect();
        let rep = carleman_sweep(&set, &psi(&grid), 0.05, &ens, &taus).unwrap();
        assert_eq!(rep.rows.len(), 32);
        assert!(rep.all_terms_nonnegative);
        assert!(rep.per_tau.iter().all(|s| s.excluded == 1 && s.max_c.unwrap() < 10.0));
        assert!(carleman_sweep(&set, &psi(&grid), 0.05, &ens, &[2.0, 1.0]).is_err());
    }
}
