//! Inverse source problem: synthetic data, CG reconstruction, the stability
//! ratio sweeps, the `R`-transformation check and the reduction of the
//! coefficient problem to a source problem.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

use crate::carleman::h3_norm;
use crate::coefficients::sample_coefficients;
use crate::error::{LabError, Result};
use crate::field::{real_norm, ComplexGridFunction};
use crate::geometry::{build_grid, Face, SpaceTimeGrid, SpatialDomain};
use crate::linalg::{fitted_order, Vec2, C64};
use crate::model::{AnalyticCoefficients, CoefficientModel, PrincipalPart, ScalarProfile, TransformedCoefficients};
use crate::series::SineSeries;
use crate::solver::{apply_model_operator, manufactured_source, sine_bump, solve_with_boundary, AnalyticField, DataVector, Direction, ForwardMap, ProductField};

const I: C64 = C64::new(0.0, 1.0);

#[derive(Clone, Debug)]
pub struct InverseData {
    pub data: DataVector,
    pub noise_level: f64,
}

/// Adds `sigma * rms(channel) * xi` to every channel, `xi` complex standard
/// normal with unit variance.
pub fn add_noise<R: Rng + ?Sized>(data: &DataVector, sigma: f64, rng: &mut R) -> DataVector {
    let mut out = data.clone();
    if sigma == 0.0 {
        return out;
    }
    for ch in out.channels_mut() {
        if ch.is_empty() {
            continue;
        }
        let rms = (ch.iter().map(|v| v.norm_sqr()).sum::<f64>() / ch.len() as f64).sqrt();
        for v in ch.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v += sigma * rms * C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
        }
    }
    out
}

pub fn synthesize_data(fwd: &ForwardMap, f: &[f64], noise_level: f64, seed: u64) -> Result<InverseData> {
    if !(noise_level >= 0.0 && noise_level.is_finite()) {
        return Err(LabError::InvalidArgument(format!("noise level must be finite and non-negative, got {noise_level}")));
    }
    let clean = fwd.apply(f)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(InverseData {
        data: add_noise(&clean, noise_level, &mut rng),
        noise_level,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CgOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub regularization: f64,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-10,
            regularization: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Reconstruction {
    pub f: Vec<f64>,
    pub iterations: usize,
    /// Final normal-equation residual relative to the right-hand side.
    pub relative_residual: f64,
    pub data_misfit: f64,
    pub converged: bool,
    pub flags: Vec<String>,
}

/// Conjugate gradients on `Re(F* F) f + reg f = Re(F* d)` in the weighted
/// `L^2` inner product.
pub fn reconstruct_source(fwd: &ForwardMap, data: &DataVector, opts: &CgOptions) -> Result<Reconstruction> {
    let w = fwd.grid().space_weights();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).zip(&w).map(|((x, y), w)| x * y * w).sum::<f64>();
    let normal = |p: &[f64]| -> Result<Vec<f64>> {
        let mut out = fwd.adjoint_apply(&fwd.apply(p)?)?;
        for (o, v) in out.iter_mut().zip(p) {
            *o += opts.regularization * v;
        }
        Ok(out)
    };
    let b = fwd.adjoint_apply(data)?;
    let b_norm = dot(&b, &b).sqrt();
    let mut x = vec![0.0; b.len()];
    let mut flags = Vec::new();
    if b_norm == 0.0 {
        return Ok(Reconstruction {
            f: x,
            iterations: 0,
            relative_residual: 0.0,
            data_misfit: fwd.norm(data),
            converged: true,
            flags,
        });
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        if rr.sqrt() <= opts.tolerance * b_norm {
            converged = true;
            break;
        }
        let ap = normal(&p)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            flags.push("breakdown".to_string());
            break;
        }
        let a = rr / pap;
        for k in 0..x.len() {
            x[k] += a * p[k];
            r[k] -= a * ap[k];
        }
        let rr_new = dot(&r, &r);
        for k in 0..p.len() {
            p[k] = r[k] + rr_new / rr * p[k];
        }
        rr = rr_new;
        iterations += 1;
    }
    if !converged && rr.sqrt() <= opts.tolerance * b_norm {
        converged = true;
    }
    if !converged {
        flags.push("not_converged".to_string());
    }
    let misfit = fwd.norm(&fwd.apply(&x)?.sub(data));
    Ok(Reconstruction {
        f: x,
        iterations,
        relative_residual: rr.sqrt() / b_norm,
        data_misfit: misfit,
        converged,
        flags,
    })
}

pub fn relative_error(grid: &SpaceTimeGrid, approx: &[f64], exact: &[f64]) -> f64 {
    let w = grid.space_weights();
    let diff: Vec<f64> = approx.iter().zip(exact).map(|(a, b)| a - b).collect();
    let n = real_norm(&w, exact);
    if n == 0.0 {
        real_norm(&w, &diff)
    } else {
        real_norm(&w, &diff) / n
    }
}

pub const FLAG_IDENTICAL: &str = "identical_pair";
pub const FLAG_VIOLATION: &str = "violation";
pub const FLAG_NONFINITE: &str = "nonfinite";
pub const FLAG_DEGENERATE: &str = "degenerate_factor";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityPair {
    pub pair_id: usize,
    pub num: f64,
    pub h3_term: f64,
    pub boundary_terms: f64,
    pub ratio: Option<f64>,
    pub flags: Vec<String>,
}

impl StabilityPair {
    fn new(pair_id: usize, num: f64, h3_term: f64, boundary_terms: f64) -> Self {
        let den = h3_term + boundary_terms;
        let mut flags = Vec::new();
        let ratio = if !(num.is_finite() && den.is_finite()) {
            flags.push(FLAG_NONFINITE.to_string());
            None
        } else if den == 0.0 && num == 0.0 {
            flags.push(FLAG_IDENTICAL.to_string());
            None
        } else if den == 0.0 {
            flags.push(FLAG_VIOLATION.to_string());
            None
        } else {
            Some(num / den)
        };
        Self {
            pair_id,
            num,
            h3_term,
            boundary_terms,
            ratio,
            flags,
        }
    }
}

/// Denominator pieces for a data difference: `|d u(T)|_{H^3}` and the sum of
/// the trace norms.
pub fn data_terms(fwd: &ForwardMap, d: &DataVector) -> Result<(f64, f64)> {
    let grid = fwd.grid();
    Ok((h3_norm(grid, &d.u_final)?, d.traces.iter().map(|t| t.norm(grid)).sum()))
}

pub fn stability_pair_ratio(fwd: &ForwardMap, pair_id: usize, f1: &[f64], f2: &[f64]) -> Result<StabilityPair> {
    let grid = fwd.grid();
    let diff: Vec<f64> = f1.iter().zip(f2).map(|(a, b)| a - b).collect();
    let num = real_norm(&grid.space_weights(), &diff);
    let d = fwd.apply(&diff)?;
    let (h3, bd) = data_terms(fwd, &d)?;
    Ok(StabilityPair::new(pair_id, num, h3, bd))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    pub pairs: Vec<StabilityPair>,
    pub finite_count: usize,
    pub max_ratio: Option<f64>,
    pub median_ratio: Option<f64>,
    pub violations: usize,
}

impl StabilityReport {
    pub fn from_pairs(mut pairs: Vec<StabilityPair>) -> Self {
        pairs.sort_by_key(|p| p.pair_id);
        let mut ratios: Vec<f64> = pairs.iter().filter_map(|p| p.ratio).collect();
        ratios.sort_by(f64::total_cmp);
        let median = if ratios.is_empty() {
            None
        } else if ratios.len() % 2 == 1 {
            Some(ratios[ratios.len() / 2])
        } else {
            Some(0.5 * (ratios[ratios.len() / 2 - 1] + ratios[ratios.len() / 2]))
        };
        Self {
            finite_count: ratios.len(),
            max_ratio: ratios.last().copied(),
            median_ratio: median,
            violations: pairs.iter().filter(|p| p.flags.iter().any(|f| f == FLAG_VIOLATION)).count(),
            pairs,
        }
    }
}

fn pair_rng(seed: u64, pair_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pair_id as u64);
    rng
}

/// Random band-limited source pairs; pair 0 is a duplicate when
/// `include_identical` is set.
pub fn stability_sweep(fwd: &ForwardMap, n_pairs: usize, band_limit: u32, seed: u64, include_identical: bool) -> Result<StabilityReport> {
    let grid = fwd.grid();
    let pairs = (0..n_pairs)
        .into_par_iter()
        .map(|id| {
            let mut rng = pair_rng(seed, id);
            let f1 = SineSeries::random(grid, band_limit, &mut rng).sample(grid);
            let f2 = if include_identical && id == 0 {
                f1.clone()
            } else {
                SineSeries::random(grid, band_limit, &mut rng).sample(grid)
            };
            stability_pair_ratio(fwd, id, &f1, &f2)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StabilityReport::from_pairs(pairs))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransformationCheck {
    pub n_x: usize,
    pub n_t: usize,
    pub relative_residual: f64,
}

/// Compares the transformed operator applied to `i conj(R) w` with
/// `i |R|^2 q`, where `q = P w / R`.
pub fn verify_transformation(model: Arc<dyn CoefficientModel>, grid: &SpaceTimeGrid, w: &dyn AnalyticField) -> Result<TransformationCheck> {
    let nn = grid.n_nodes();
    let pw = manufactured_source(model.as_ref(), w, grid);
    for k in 0..pw.values.len() {
        let r = model.source_factor(grid.time(k / nn), grid.coord(k % nn));
        if r.norm() == 0.0 {
            return Err(LabError::VanishingFactor(0.0));
        }
    }
    let tilde = TransformedCoefficients::new(model.clone(), grid.dim());
    let wt = ComplexGridFunction::from_fn(grid, |t, x| I * model.source_factor(t, x).conj() * w.value(t, x));
    let lhs = apply_model_operator(&tilde, &wt)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for level in 1..grid.n_t {
        let t = grid.time(level);
        for node in 0..nn {
            if grid.is_boundary(node) {
                continue;
            }
            let k = level * nn + node;
            let x = grid.coord(node);
            let r = model.source_factor(t, x);
            let q = pw.values[k] / r;
            let target = I * r.norm_sqr() * q;
            num += (lhs.values[k] - target).norm_sqr();
            den += target.norm_sqr();
        }
    }
    Ok(TransformationCheck {
        n_x: grid.n_x,
        n_t: grid.n_t,
        relative_residual: if den > 0.0 { (num / den).sqrt() } else { num.sqrt() },
    })
}

/// Two solutions with potentials `c1`, `c2`, initial value `u0` and lateral
/// Dirichlet data `v`, and the source problem for `w = u1 - u2`:
/// `P1 w = (c2 - c1) u2`.
#[derive(Clone, Debug)]
pub struct CoefficientReduction {
    pub u1: ComplexGridFunction,
    pub u2: ComplexGridFunction,
    pub w: ComplexGridFunction,
    /// `c2 - c1` on the nodes.
    pub f: Vec<f64>,
    /// `|P1 w - (c2 - c1) u2| / |(c2 - c1) u2|` on interior nodes.
    pub relative_residual: f64,
    pub min_abs_u2: f64,
    pub max_abs_u2: f64,
}

pub struct CoefficientProblem<'a> {
    pub grid: SpaceTimeGrid,
    pub principal: Arc<dyn PrincipalPart>,
    pub u0: &'a (dyn Fn(Vec2) -> C64 + Sync),
    pub v: &'a (dyn Fn(f64, Vec2) -> C64 + Sync),
}

impl CoefficientProblem<'_> {
    fn model(&self, c: &ScalarProfile) -> Arc<dyn CoefficientModel> {
        AnalyticCoefficients::new(self.principal.clone()).with_potential(c.clone()).shared()
    }

    pub fn solve(&self, c: &ScalarProfile) -> Result<(Arc<dyn CoefficientModel>, ComplexGridFunction)> {
        let model = self.model(c);
        let set = sample_coefficients(model.clone(), &self.grid)?;
        let init: Vec<C64> = (0..self.grid.n_nodes()).map(|p| (self.u0)(self.grid.coord(p))).collect();
        let u = solve_with_boundary(&set, None, &init, Direction::Forward, Some(self.v))?;
        Ok((model, u))
    }

    pub fn reduce(&self, c1: &ScalarProfile, c2: &ScalarProfile) -> Result<CoefficientReduction> {
        if !(c1.is_time_independent() && c2.is_time_independent()) {
            return Err(LabError::InvalidArgument("potentials must be time independent".into()));
        }
        let grid = &self.grid;
        let nn = grid.n_nodes();
        let (m1, u1) = self.solve(c1)?;
        let (m2, u2) = self.solve(c2)?;
        let w = u1.sub(&u2);
        let f: Vec<f64> = (0..nn)
            .map(|p| (c2.value(0.0, grid.coord(p)) - c1.value(0.0, grid.coord(p))).re)
            .collect();
        let r1 = apply_model_operator(m1.as_ref(), &u1)?;
        let r2 = apply_model_operator(m2.as_ref(), &u2)?;
        let mut num = 0.0;
        let mut den = 0.0;
        for level in 1..grid.n_t {
            for node in 0..nn {
                if grid.is_boundary(node) {
                    continue;
                }
                let k = level * nn + node;
                num += (r1.values[k] - r2.values[k]).norm_sqr();
                den += (f[node] * u2.values[k]).norm_sqr();
            }
        }
        let mags: Vec<f64> = u2.values.iter().map(|v| v.norm()).collect();
        Ok(CoefficientReduction {
            relative_residual: if den > 0.0 { (num / den).sqrt() } else { num.sqrt() },
            min_abs_u2: mags.iter().cloned().fold(f64::INFINITY, f64::min),
            max_abs_u2: mags.iter().cloned().fold(0.0, f64::max),
            u1,
            u2,
            w,
            f,
        })
    }

    /// Stability ratio `|c1 - c2| / (|w(T)|_{H^3} + traces of w)`.
    pub fn pair_ratio(&self, faces: &[Face], pair_id: usize, c1: &ScalarProfile, c2: &ScalarProfile) -> Result<StabilityPair> {
        let red = self.reduce(c1, c2)?;
        let set = sample_coefficients(self.model(c1), &self.grid)?;
        let fwd = ForwardMap::new(&set, faces)?;
        let d = fwd.observe(&red.w)?;
        let (h3, bd) = data_terms(&fwd, &d)?;
        let num = real_norm(&self.grid.space_weights(), &red.f);
        let mut pair = StabilityPair::new(pair_id, num, h3, bd);
        if red.min_abs_u2 < 0.1 * red.max_abs_u2 {
            pair.flags.push(FLAG_DEGENERATE.to_string());
        }
        Ok(pair)
    }

    /// `c2 = c1 + amplitude * (random unit series)`; pair 0 uses `c2 = c1`.
    pub fn sweep(&self, faces: &[Face], c1_offset: f64, n_pairs: usize, amplitude: f64, band_limit: u32, seed: u64) -> Result<StabilityReport> {
        let c1 = ScalarProfile::real(c1_offset);
        let pairs = (0..n_pairs)
            .into_par_iter()
            .map(|id| {
                let c2 = if id == 0 {
                    c1.clone()
                } else {
                    let mut rng = pair_rng(seed, id);
                    ScalarProfile::Sines {
                        offset: c1_offset,
                        series: SineSeries::random(&self.grid, band_limit, &mut rng).scaled(amplitude),
                    }
                };
                self.pair_ratio(faces, id, &c1, &c2)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StabilityReport::from_pairs(pairs))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseRow {
    pub noise: f64,
    pub relative_error: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseSweep {
    pub rows: Vec<NoiseRow>,
    /// Log-log slope of error against noise over the positive levels.
    pub slope: Option<f64>,
    pub noiseless_error: Option<f64>,
}

/// Reconstructs `f` from data at each noise level; every level scales the
/// same seeded noise draw.
pub fn noise_sweep(fwd: &ForwardMap, f: &[f64], levels: &[f64], opts: &CgOptions, seed: u64) -> Result<NoiseSweep> {
    let grid = fwd.grid();
    let rows = levels
        .par_iter()
        .map(|&sigma| {
            let data = synthesize_data(fwd, f, sigma, seed)?;
            let rec = reconstruct_source(fwd, &data.data, opts)?;
            Ok(NoiseRow {
                noise: sigma,
                relative_error: relative_error(grid, &rec.f, f),
                iterations: rec.iterations,
                converged: rec.converged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pos: Vec<&NoiseRow> = rows.iter().filter(|r| r.noise > 0.0).collect();
    let slope = (pos.len() >= 2).then(|| {
        fitted_order(
            &pos.iter().map(|r| r.noise).collect::<Vec<_>>(),
            &pos.iter().map(|r| r.relative_error).collect::<Vec<_>>(),
        )
    });
    Ok(NoiseSweep {
        noiseless_error: rows.iter().find(|r| r.noise == 0.0).map(|r| r.relative_error),
        slope,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderStudy {
    pub n: Vec<usize>,
    pub residual: Vec<f64>,
    pub order: f64,
}

fn order_study(domain: &SpatialDomain, levels: &[usize], final_time: f64, run: impl Fn(&SpaceTimeGrid) -> Result<f64> + Sync) -> Result<OrderStudy> {
    if levels.len() < 2 {
        return Err(LabError::InvalidArgument("at least two grid levels are needed".into()));
    }
    let residual = levels
        .par_iter()
        .map(|&n| run(&build_grid(domain.clone(), n, n, final_time)?))
        .collect::<Result<Vec<_>>>()?;
    let hs: Vec<f64> = levels.iter().map(|&n| domain.length(0) / n as f64).collect();
    Ok(OrderStudy {
        n: levels.to_vec(),
        order: fitted_order(&hs, &residual),
        residual,
    })
}

/// Transformation residual for `w = t^2 exp(i t) X(x)` on refined grids.
pub fn transformation_study(model: Arc<dyn CoefficientModel>, domain: &SpatialDomain, levels: &[usize], final_time: f64) -> Result<OrderStudy> {
    order_study(domain, levels, final_time, |grid| {
        let w = ProductField {
            power: 2,
            omega: 1.0,
            spatial: sine_bump(grid),
        };
        Ok(verify_transformation(model.clone(), grid, &w)?.relative_residual)
    })
}

/// Reduction residual of the coefficient problem on refined grids.
pub fn reduction_study(
    principal: Arc<dyn PrincipalPart>,
    u0: &(dyn Fn(Vec2) -> C64 + Sync),
    v: &(dyn Fn(f64, Vec2) -> C64 + Sync),
    c1: &ScalarProfile,
    c2: &(dyn Fn(&SpaceTimeGrid) -> ScalarProfile + Sync),
    domain: &SpatialDomain,
    levels: &[usize],
    final_time: f64,
) -> Result<OrderStudy> {
    order_study(domain, levels, final_time, |grid| {
        let prob = CoefficientProblem {
            grid: grid.clone(),
            principal: principal.clone(),
            u0,
            v,
        };
        Ok(prob.reduce(c1, &c2(grid))?.relative_residual)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, SpatialDomain};
    use crate::model::PolynomialA11;

    fn setup(n: usize) -> (SpaceTimeGrid, crate::coefficients::CoefficientSet) {
        let grid = build_grid(SpatialDomain::interval(0.0, 1.0, &[Face::Right]).unwrap(), n, n, 1.0).unwrap();
        let model = AnalyticCoefficients::new(Arc::new(PolynomialA11 { c0: 1.0, c1: 0.0, c2: 0.5 }))
            .with_source_factor(ScalarProfile::Phase {
                amplitude: C64::new(1.0, 0.0),
                omega: 1.0,
            })
            .shared();
        let set = sample_coefficients(model, &grid).unwrap();
        (grid, set)
    }

    #[test]
    fn noiseless_reconstruction_recovers_source() {
        let (grid, set) = setup(24);
        let fwd = ForwardMap::new(&set, &[Face::Right]).unwrap();
        let f = SineSeries::random(&grid, 3, &mut ChaCha8Rng::seed_from_u64(3)).sample(&grid);
        let data = synthesize_data(&fwd, &f, 0.0, 1).unwrap();
        let rec = reconstruct_source(&fwd, &data.data, &CgOptions::default()).unwrap();
        let err = relative_error(&grid, &rec.f, &f);
        assert!(err < 1e-3, "{err} {:?}", rec.flags);
    }

    #[test]
    fn noise_is_seeded_and_scaled() {
        let (grid, set) = setup(16);
        let fwd = ForwardMap::new(&set, &[Face::Right]).unwrap();
        let f = SineSeries::fundamental(&grid, 1.0).sample(&grid);
        let a = synthesize_data(&fwd, &f, 0.1, 9).unwrap();
        let b = synthesize_data(&fwd, &f, 0.1, 9).unwrap();
        assert_eq!(a.data, b.data);
        let clean = synthesize_data(&fwd, &f, 0.0, 9).unwrap();
        let rms = |v: &[C64]| (v.iter().map(|z| z.norm_sqr()).sum::<f64>() / v.len() as f64).sqrt();
        let diff = a.data.sub(&clean.data);
        let rel = rms(&diff.u_final) / rms(&clean.data.u_final);
        assert!(rel > 0.05 && rel < 0.2, "{rel}");
        assert!(synthesize_data(&fwd, &f, -1.0, 9).is_err());
    }

    #[test]
    fn stability_flags_and_scale_invariance() {
        let (grid, set) = setup(16);
        let fwd = ForwardMap::new(&set, &[Face::Right]).unwrap();
        let rep = stability_sweep(&fwd, 6, 3, 4, true).unwrap();
        assert_eq!(rep.pairs[0].flags, vec![FLAG_IDENTICAL.to_string()]);
        assert_eq!(rep.finite_count, 5);
        assert_eq!(rep.violations, 0);
        let again = stability_sweep(&fwd, 6, 3, 4, true).unwrap();
        assert_eq!(rep, again);
        let f1 = SineSeries::fundamental(&grid, 1.0).sample(&grid);
        let f2 = vec![0.0; grid.n_nodes()];
        let r1 = stability_pair_ratio(&fwd, 0, &f1, &f2).unwrap().ratio.unwrap();
        let f3: Vec<f64> = f1.iter().map(|v| v * 1e3).collect();
        let r2 = stability_pair_ratio(&fwd, 0, &f3, &f2).unwrap().ratio.unwrap();
        assert!((r1 - r2).abs() <= 1e-8 * r1);
        let p = StabilityPair::new(1, 1.0, 0.0, 0.0);
        assert_eq!(p.flags, vec![FLAG_VIOLATION.to_string()]);
    }

    #[test]
    fn transformation_residual_is_second_order() {
        let mut errs = Vec::new();
        let mut hs = Vec::new();
        for n in [16, 32, 64] {
            let (grid, set) = setup(n);
            let w = ProductField {
                power: 2,
                omega: 1.0,
                spatial: sine_bump(&grid),
            };
            let c = verify_transformation(set.model.clone(), &grid, &w).unwrap();
            errs.push(c.relative_residual);
            hs.push(grid.h(0));
        }
        let order = fitted_order(&hs, &errs);
        assert!(order > 1.8, "{errs:?}");
    }

    #[test]
    fn coefficient_reduction_is_consistent() {
        let mut errs = Vec::new();
        let mut hs = Vec::new();
        for n in [16, 32, 64] {
            let grid = build_grid(SpatialDomain::interval(0.0, 1.0, &[Face::Right]).unwrap(), n, n, 1.0).unwrap();
            let prob = CoefficientProblem {
                grid: grid.clone(),
                principal: Arc::new(crate::model::ConstantPrincipal(crate::linalg::IDENTITY)),
                u0: &|_| C64::new(1.0, 0.0),
                v: &|t, _| C64::from_polar(1.0, t),
            };
            let c1 = ScalarProfile::real(1.0);
            let c2 = ScalarProfile::Sines {
                offset: 1.0,
                series: SineSeries::fundamental(&grid, 0.1),
            };
            let red = prob.reduce(&c1, &c2).unwrap();
            let exact = ComplexGridFunction::from_fn(&grid, |t, _| C64::from_polar(1.0, t));
            assert!(red.u1.sub(&exact).max_abs() < 1e-3);
            assert!(red.min_abs_u2 > 0.5);
            errs.push(red.relative_residual);
            hs.push(grid.h(0));
        }
        assert!(fitted_order(&hs, &errs) > 1.8, "{errs:?}");
    }

    #[test]
    fn noise_sweep_is_linear_in_noise() {
        let (grid, set) = setup(16);
        let fwd = ForwardMap::new(&set, &[Face::Right]).unwrap();
        let f = SineSeries::fundamental(&grid, 1.0).sample(&grid);
        let s = noise_sweep(&fwd, &f, &[0.0, 1e-4, 1e-3, 1e-2], &CgOptions::default(), 3).unwrap();
        assert!(s.noiseless_error.unwrap() < 1e-6);
        let slope = s.slope.unwrap();
        assert!((slope - 1.0).abs() < 0.1, "{s:?}");
    }

    #[test]
    fn coefficient_sweep_excludes_identical_pair() {
        let grid = build_grid(SpatialDomain::interval(0.0, 1.0, &[Face::Right]).unwrap(), 16, 16, 1.0).unwrap();
        let prob = CoefficientProblem {
            grid,
            principal: Arc::new(crate::model::ConstantPrincipal(crate::linalg::IDENTITY)),
            u0: &|_| C64::new(1.0, 0.0),
            v: &|t, _| C64::from_polar(1.0, t),
        };
        let rep = prob.sweep(&[Face::Right], 1.0, 4, 0.1, 2, 7).unwrap();
        assert_eq!(rep.pairs[0].flags, vec![FLAG_IDENTICAL.to_string()]);
        assert_eq!(rep.finite_count, 3);
        assert!(rep.pairs[1..].iter().all(|p| p.ratio.unwrap().is_finite()));
    }
}
