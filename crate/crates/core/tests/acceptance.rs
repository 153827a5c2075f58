//! Numbered acceptance criteria. Prints one PASS/FAIL line each and exits
//! non-zero if any fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use carleman_lab::carleman::{carleman_ensemble, carleman_sweep, energy_identity_study, CarlemanReport};
use carleman_lab::coefficients::sample_coefficients;
use carleman_lab::geometry::{build_grid, Face, SpaceTimeGrid, SpatialDomain};
use carleman_lab::inversion::{
    noise_sweep, reduction_study, stability_pair_ratio, stability_sweep, transformation_study, CgOptions, CoefficientProblem, FLAG_IDENTICAL,
};
use carleman_lab::linalg::Vec2;
use carleman_lab::model::{build_principal, AnalyticCoefficients, CoefficientModel, ScalarProfile};
use carleman_lab::params::{ParamValue, Params};
use carleman_lab::series::SineSeries;
use carleman_lab::solver::{adjoint_check, conservation_drift, convergence_study, sine_bump, ForwardMap};
use carleman_lab::symbols::{bracket_oracle, check_condition1, check_ramsai, default_lambda_grid, find_min_lambda, q_psi_closed, q_psi_time_term, SetSampling};
use carleman_lab::weight::{build_weight, WeightFunction, WeightFunctionPsi};
use carleman_lab::{Result, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn interval(observed: &[Face]) -> SpatialDomain {
    SpatialDomain::interval(0.0, 1.0, observed).unwrap()
}

fn square(observed: &[Face]) -> SpatialDomain {
    SpatialDomain::rectangle([0.0, 1.0], [0.0, 1.0], observed).unwrap()
}

fn shifted_square(dim: usize) -> Arc<dyn WeightFunction> {
    let mut p = Params::new();
    p.insert("center".into(), ParamValue::Vector(vec![-1.0; dim]));
    build_weight("distance_squared", dim, &p).unwrap()
}

fn model(principal: &str) -> Arc<dyn CoefficientModel> {
    AnalyticCoefficients::new(build_principal(principal, &Params::new()).unwrap())
        .with_source_factor(ScalarProfile::Phase {
            amplitude: C64::new(1.0, 0.0),
            omega: 1.0,
        })
        .shared()
}

fn oracle() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut samples = 0;
    for dim in [1, 2] {
        let domain = if dim == 1 { interval(&[Face::Right]) } else { square(&[Face::XHi]) };
        let grid = build_grid(domain, 8, 8, 1.0)?;
        let psi = WeightFunctionPsi::new(shifted_square(dim), &grid)?;
        for name in ["identity", "a11_polynomial"] {
            let m = model(name);
            for _ in 0..300 {
                let t = rng.random_range(0.0..1.0);
                let x: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
                let xi: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
                let xi0 = rng.random_range(-5.0..5.0);
                let tau = rng.random_range(0.1..10.0);
                let q = q_psi_closed(m.as_ref(), &psi, t, &x, &xi, tau)? + q_psi_time_term(m.as_ref(), &psi, t, &x, &xi)?;
                let o = bracket_oracle(m.as_ref(), &psi, t, &x, xi0, &xi, tau, 1e-5)?;
                worst = worst.max((q - o).abs() / (1.0 + q.abs()));
                samples += 1;
            }
        }
    }
    Ok(verdict(worst <= 1e-6 && samples >= 1000, format!("{samples} samples, worst scaled error {worst:.3e}")))
}

fn positivity() -> Result<Verdict> {
    let grid = build_grid(square(&[Face::XHi, Face::YHi]), 16, 8, 1.0)?;
    let psi = WeightFunctionPsi::new(shifted_square(2), &grid)?;
    let id = AnalyticCoefficients::identity();
    let r = check_ramsai(&id, &psi, &grid)?;
    let l = find_min_lambda(&id, &psi, &grid, &default_lambda_grid(), SetSampling::default())?;
    let finite = l.lambda.is_some_and(f64::is_finite);
    Ok(verdict((r.value - 8.0).abs() <= 1e-9 && finite, format!("min = {}, lambda* = {:?}", r.value, l.lambda)))
}

fn condition1() -> Result<Verdict> {
    let id = AnalyticCoefficients::identity();
    let value = |face: Face| -> Result<f64> {
        let grid = build_grid(interval(&[face]), 16, 8, 1.0)?;
        let psi = WeightFunctionPsi::new(shifted_square(1), &grid)?;
        Ok(check_condition1(&id, &psi, &grid)?.value)
    };
    let right = value(Face::Right)?;
    let left = value(Face::Left)?;
    let ok = (right + 2.0).abs() <= 1e-12 && (left - 4.0).abs() <= 1e-12;
    Ok(verdict(ok, format!("observed right: {right}, observed left: {left}")))
}

fn solver() -> Result<Verdict> {
    let m = model("a11_polynomial");
    let study = convergence_study(m.clone(), &interval(&[Face::Right]), &[32, 64, 128, 256], 1.0)?;
    let grid = build_grid(interval(&[Face::Right]), 64, 64, 1.0)?;
    let set = sample_coefficients(m, &grid)?;
    let bump = sine_bump(&grid);
    let u0: Vec<C64> = (0..grid.n_nodes()).map(|p| C64::new(bump(grid.coord(p)).0, 0.0)).collect();
    let drift = conservation_drift(&set, &u0)?;
    let fwd = ForwardMap::new(&set, &[Face::Right])?;
    let defect = adjoint_check(&fwd, 100, 7)?;
    let ok = (1.8..=2.2).contains(&study.order) && drift <= 1e-10 && defect <= 1e-10;
    Ok(verdict(ok, format!("order {:.4}, drift {drift:.2e}, adjoint defect {defect:.2e}", study.order)))
}

fn energy() -> Result<Verdict> {
    let study = energy_identity_study(model("a11_polynomial"), shifted_square(1), &interval(&[Face::Right]), 0.5, 1.0, &[64, 128, 256], 1.0)?;
    let finest = study.levels.last().map_or(f64::INFINITY, |l| l.relative_discrepancy);
    Ok(verdict(study.order >= 1.0 && finest <= 1e-3, format!("order {:.3}, finest discrepancy {finest:.3e}", study.order)))
}

fn carleman_run(n: usize, taus: &[f64]) -> Result<CarlemanReport> {
    let grid = build_grid(interval(&[Face::Right]), n, n, 1.0)?;
    let set = sample_coefficients(model("a11_polynomial"), &grid)?;
    let psi = WeightFunctionPsi::new(shifted_square(1), &grid)?;
    let members = carleman_ensemble(&set, 10, 2, 11)?;
    carleman_sweep(&set, &psi, 0.05, &members, taus)
}

fn carleman() -> Result<Verdict> {
    let taus: Vec<f64> = (0..=12).map(|k| 2f64.powf(k as f64 / 2.0)).collect();
    let fine = carleman_run(64, &taus)?;
    let coarse = carleman_run(32, &taus)?;
    let end = |r: &CarlemanReport| r.per_tau.last().and_then(|s| s.running_max);
    let drift = match (end(&fine), end(&coarse)) {
        (Some(a), Some(b)) => (a / b).max(b / a),
        _ => f64::INFINITY,
    };
    let members = fine.rows.iter().map(|r| r.member).max().map_or(0, |m| m + 1);
    let variation = fine.upper_half_variation.unwrap_or(f64::INFINITY);
    let ok = members >= 10 && taus.len() >= 8 && fine.all_terms_nonnegative && variation <= 0.1 && drift <= 2.0;
    Ok(verdict(
        ok,
        format!(
            "{members} members x {} taus, nonnegative {}, variation {variation:.3}, drift x{drift:.3}",
            taus.len(),
            fine.all_terms_nonnegative
        ),
    ))
}

fn transformation() -> Result<Verdict> {
    let study = transformation_study(model("a11_polynomial"), &interval(&[Face::Right]), &[32, 64, 128], 1.0)?;
    Ok(verdict(study.order >= 1.8, format!("order {:.4}", study.order)))
}

fn stability() -> Result<Verdict> {
    let grid = build_grid(interval(&[Face::Right]), 64, 64, 1.0)?;
    let set = sample_coefficients(model("a11_polynomial"), &grid)?;
    let fwd = ForwardMap::new(&set, &[Face::Right])?;
    let rep = stability_sweep(&fwd, 50, 4, 1, false)?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f1 = SineSeries::random(&grid, 4, &mut rng);
    let f2 = SineSeries::random(&grid, 4, &mut rng);
    let base = stability_pair_ratio(&fwd, 0, &f1.sample(&grid), &f2.sample(&grid))?.ratio;
    let scaled = stability_pair_ratio(&fwd, 0, &f1.scaled(1e3).sample(&grid), &f2.scaled(1e3).sample(&grid))?.ratio;
    let scale_dev = match (base, scaled) {
        (Some(a), Some(b)) => (a - b).abs() / a,
        _ => f64::INFINITY,
    };

    let f = SineSeries::random(&grid, 4, &mut ChaCha8Rng::seed_from_u64(3)).sample(&grid);
    let sweep = noise_sweep(&fwd, &f, &[0.0, 1e-4, 1e-3, 1e-2, 1e-1], &CgOptions::default(), 3)?;
    let slope = sweep.slope.unwrap_or(f64::NAN);
    let noiseless = sweep.noiseless_error.unwrap_or(f64::INFINITY);

    let ok = rep.pairs.len() >= 50
        && rep.finite_count == rep.pairs.len()
        && rep.violations == 0
        && scale_dev <= 1e-8
        && (0.7..=1.3).contains(&slope)
        && noiseless <= 1e-2;
    Ok(verdict(
        ok,
        format!(
            "{} pairs, {} finite, {} violations, scale {scale_dev:.1e}, noise slope {slope:.4}, noiseless error {noiseless:.2e}",
            rep.pairs.len(),
            rep.finite_count,
            rep.violations
        ),
    ))
}

fn coefficient() -> Result<Verdict> {
    let principal = build_principal("identity", &Params::new())?;
    let u0 = |_x: Vec2| C64::new(1.0, 0.0);
    let v = |t: f64, _x: Vec2| C64::from_polar(1.0, t);
    let c2 = |g: &SpaceTimeGrid| ScalarProfile::Sines {
        offset: 1.0,
        series: SineSeries::fundamental(g, 0.1),
    };
    let study = reduction_study(principal.clone(), &u0, &v, &ScalarProfile::real(1.0), &c2, &interval(&[Face::Right]), &[32, 64, 128], 1.0)?;
    let prob = CoefficientProblem {
        grid: build_grid(interval(&[Face::Right]), 32, 32, 1.0)?,
        principal,
        u0: &u0,
        v: &v,
    };
    let rep = prob.sweep(&[Face::Right], 1.0, 21, 0.1, 2, 5)?;
    let excluded = rep.pairs[0].ratio.is_none() && rep.pairs[0].flags.iter().any(|f| f == FLAG_IDENTICAL);
    let finite = rep.pairs[1..].iter().filter(|p| p.ratio.is_some_and(f64::is_finite) && p.flags.is_empty()).count();
    let ok = study.order >= 1.8 && finite >= 20 && excluded;
    Ok(verdict(ok, format!("reduction order {:.4}, {finite} finite ratios, identical pair excluded {excluded}", study.order)))
}

type Criterion = fn() -> Result<Verdict>;

fn main() -> ExitCode {
    let criteria: [(&str, Criterion, Duration); 9] = [
        ("symbol oracle", oracle, Duration::from_secs(10)),
        ("positivity on the square", positivity, Duration::from_secs(10)),
        ("boundary sign condition", condition1, Duration::from_secs(10)),
        ("forward solver", solver, Duration::from_secs(60)),
        ("energy identity", energy, Duration::from_secs(300)),
        ("weighted estimate", carleman, Duration::from_secs(300)),
        ("source transformation", transformation, Duration::from_secs(300)),
        ("source stability", stability, Duration::from_secs(300)),
        ("coefficient problem", coefficient, Duration::from_secs(300)),
    ];
    let mut failures = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let (passed, detail) = match outcome {
            Ok(v) => (v.passed && elapsed <= *budget, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failures += 1;
        }
        println!(
            "criterion {}: {} {name}: {detail} ({:.2} s, budget {} s)",
            i + 1,
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
