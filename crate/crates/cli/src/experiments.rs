//! Subcommands, one registry entry each.

use std::sync::Arc;

use anyhow::{Context as _, Result};
use carleman_lab::carleman::{carleman_ensemble, carleman_sweep, energy_identity_study, CarlemanReport};
use carleman_lab::coefficients::sample_coefficients;
use carleman_lab::geometry::{build_grid, Face, SpaceTimeGrid, SpatialDomain};
use carleman_lab::inversion::{
    noise_sweep, reduction_study, stability_pair_ratio, stability_sweep, transformation_study, CgOptions, CoefficientProblem, StabilityReport, FLAG_IDENTICAL,
};
use carleman_lab::model::{CoefficientModel, ScalarProfile};
use carleman_lab::registry::{Named, Registry};
use carleman_lab::series::SineSeries;
use carleman_lab::solver::{adjoint_check, conservation_drift, convergence_study, sine_bump, solve_ivp, Direction, ForwardMap};
use carleman_lab::symbols::{pseudoconvexity_report, SetSampling};
use carleman_lab::weight::{WeightFunction, WeightFunctionPsi};
use carleman_lab::C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::output::{Cell, Table};

/// Everything built from the configuration before a run starts.
pub struct Context {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub domain: SpatialDomain,
    pub grid: SpaceTimeGrid,
    pub model: Arc<dyn CoefficientModel>,
    pub psi: Arc<dyn WeightFunction>,
    pub faces: Vec<Face>,
}

impl Context {
    pub fn new(config: ExperimentConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            domain: config.domain()?,
            grid: config.grid()?,
            model: config.model()?,
            psi: config.psi()?,
            faces: config.observed_faces()?,
            config,
            seed,
        })
    }

    fn cg_options(&self) -> CgOptions {
        CgOptions {
            max_iterations: self.config.checks.cg_max_iterations,
            tolerance: self.config.checks.cg_tolerance,
            regularization: self.config.checks.regularization,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub value: Option<f64>,
    pub requirement: String,
    pub passed: bool,
}

fn check(name: &'static str, value: Option<f64>, requirement: &str, passed: bool) -> Check {
    Check {
        name,
        value,
        requirement: requirement.to_string(),
        passed,
    }
}

fn within(name: &'static str, value: Option<f64>, lo: f64, hi: f64) -> Check {
    let passed = value.is_some_and(|v| v >= lo && v <= hi);
    check(name, value, &format!("in [{lo}, {hi}]"), passed)
}

fn at_most(name: &'static str, value: Option<f64>, hi: f64) -> Check {
    check(name, value, &format!("<= {hi:e}"), value.is_some_and(|v| v <= hi))
}

fn at_least(name: &'static str, value: Option<f64>, lo: f64) -> Check {
    check(name, value, &format!(">= {lo}"), value.is_some_and(|v| v >= lo))
}

pub struct Outcome {
    pub checks: Vec<Check>,
    pub result: Value,
    pub table: Table,
    /// Additional plot-ready files.
    pub extra: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub trait Experiment: Named + Send + Sync {
    fn summary(&self) -> &'static str;
    fn run(&self, ctx: &Context) -> Result<Outcome>;
}

pub fn registry() -> Registry<dyn Experiment> {
    let mut r: Registry<dyn Experiment> = Registry::new("subcommand");
    r.register(Box::new(CheckWeight))
        .register(Box::new(ForwardConvergence))
        .register(Box::new(CarlemanVerify))
        .register(Box::new(EnergyIdentity))
        .register(Box::new(InvertSource))
        .register(Box::new(StabilitySweep))
        .register(Box::new(InvertCoefficient));
    r
}

fn stability_table(rep: &StabilityReport) -> Table {
    let mut t = Table::new(&["pair_id", "num", "h3_term", "boundary_terms", "ratio", "flags"]);
    for p in &rep.pairs {
        t.push(vec![
            p.pair_id.into(),
            p.num.into(),
            p.h3_term.into(),
            p.boundary_terms.into(),
            Cell::opt(p.ratio),
            Cell::Text(p.flags.join(";")),
        ]);
    }
    t
}

pub struct CheckWeight;

impl Named for CheckWeight {
    fn name(&self) -> &'static str {
        "check-weight"
    }
}

impl Experiment for CheckWeight {
    fn summary(&self) -> &'static str {
        "pseudo-convexity of psi, the sign condition on the unobserved boundary and the smallest admissible lambda"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome> {
        let cfg = &ctx.config;
        let psi = WeightFunctionPsi::new(ctx.psi.clone(), &ctx.grid)?;
        let sampling = SetSampling {
            n_angles: cfg.weight.n_angles,
            level_stride: 1,
        };
        let rep = pseudoconvexity_report(ctx.model.as_ref(), &psi, &ctx.grid, &cfg.weight.lambda_grid, sampling, &cfg.weight.taus)?;
        let mut table = Table::new(&["lambda", "q_min", "q_scale"]);
        for &(l, m, s) in &rep.lambda_sweep {
            table.push(vec![l.into(), m.into(), s.into()]);
        }
        let checks = vec![
            check(
                "ramsai_min_positive",
                (!rep.ramsai_vacuous).then_some(rep.ramsai_min),
                "> 0 (vacuous in one dimension)",
                rep.ramsai_vacuous || rep.ramsai_min > 0.0,
            ),
            check(
                "condition1_max_negative",
                (!rep.condition1_vacuous).then_some(rep.condition1_max),
                "< 0 on every unobserved face",
                rep.condition1_vacuous || rep.condition1_max < 0.0,
            ),
            check("lambda_found", rep.lambda, "finite lambda on the grid", rep.lambda.is_some()),
        ];
        Ok(Outcome {
            checks,
            result: serde_json::to_value(&rep)?,
            table,
            extra: Vec::new(),
        })
    }
}

pub struct ForwardConvergence;

impl Named for ForwardConvergence {
    fn name(&self) -> &'static str {
        "forward-convergence"
    }
}

impl Experiment for ForwardConvergence {
    fn summary(&self) -> &'static str {
        "manufactured-solution convergence, norm conservation and the discrete adjoint identity"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome> {
        let cfg = &ctx.config;
        let study = convergence_study(ctx.model.clone(), &ctx.domain, &cfg.checks.levels, cfg.grid.final_time)?;
        let set = sample_coefficients(ctx.model.clone(), &ctx.grid)?;
        let bump = sine_bump(&ctx.grid);
        let u0: Vec<C64> = (0..ctx.grid.n_nodes()).map(|p| C64::new(bump(ctx.grid.coord(p)).0, 0.0)).collect();
        let drift = conservation_drift(&set, &u0)?;
        let fwd = ForwardMap::new(&set, &ctx.faces)?;
        let adjoint = adjoint_check(&fwd, cfg.checks.adjoint_trials, ctx.seed)?;
        let mut solution = Vec::new();
        solve_ivp(&set, None, &u0, Direction::Forward)?.write_csv(&mut solution)?;

        let mut table = Table::new(&["n", "h", "error"]);
        for r in &study.rows {
            table.push(vec![r.n.into(), r.h.into(), r.error.into()]);
        }
        Ok(Outcome {
            checks: vec![
                within("convergence_order", Some(study.order), 1.8, 2.2),
                at_most("conservation_drift_per_step", Some(drift), 1e-10),
                at_most("adjoint_defect", Some(adjoint), 1e-10),
            ],
            result: json!({
                "convergence": study,
                "conservation_drift_per_step": drift,
                "adjoint_trials": cfg.checks.adjoint_trials,
                "adjoint_defect": adjoint,
            }),
            table,
            extra: vec![("solution.csv".into(), solution)],
        })
    }
}

pub struct CarlemanVerify;

impl Named for CarlemanVerify {
    fn name(&self) -> &'static str {
        "carleman-verify"
    }
}

fn carleman_run(ctx: &Context, grid: &SpaceTimeGrid) -> Result<CarlemanReport> {
    let cfg = &ctx.config;
    let set = sample_coefficients(ctx.model.clone(), grid)?;
    let psi = WeightFunctionPsi::new(ctx.psi.clone(), grid)?;
    let members = carleman_ensemble(&set, cfg.ensemble.count, cfg.ensemble.band_limit, ctx.seed)?;
    Ok(carleman_sweep(&set, &psi, cfg.weight.lambda, &members, &cfg.weight.taus)?)
}

impl Experiment for CarlemanVerify {
    fn summary(&self) -> &'static str {
        "both sides of the weighted estimate over an ensemble and a tau sweep"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome> {
        let cfg = &ctx.config;
        let fine = carleman_run(ctx, &ctx.grid)?;
        let end = |r: &CarlemanReport| r.per_tau.last().and_then(|s| s.running_max);
        let mut checks = vec![
            check("all_terms_nonnegative", None, "every term >= 0", fine.all_terms_nonnegative),
            at_most("upper_half_variation", fine.upper_half_variation, 0.1),
        ];
        let coarse = if cfg.checks.compare_coarse {
            let g = build_grid(ctx.domain.clone(), (cfg.grid.n_x / 2).max(4), (cfg.grid.n_t / 2).max(8), cfg.grid.final_time)?;
            let c = carleman_run(ctx, &g)?;
            let drift = match (end(&fine), end(&c)) {
                (Some(a), Some(b)) => Some((a / b).max(b / a)),
                _ => None,
            };
            checks.push(at_most("resolution_drift_factor", drift, 2.0));
            Some(c)
        } else {
            None
        };
        let mut table = Table::new(&[
            "tau",
            "lhs_volume",
            "lhs_p1p2",
            "rhs_final",
            "rhs_source",
            "rhs_boundary",
            "empirical_C",
            "member",
        ]);
        for r in &fine.rows {
            table.push(vec![
                r.tau.into(),
                r.lhs_volume.into(),
                r.lhs_p1p2.into(),
                r.rhs_final.into(),
                r.rhs_source.into(),
                r.rhs_boundary.into(),
                Cell::opt(r.empirical_c),
                r.member.into(),
            ]);
        }
        let coarse_summary = coarse.map(|c| {
            json!({
                "n_x": (cfg.grid.n_x / 2).max(4),
                "per_tau": c.per_tau,
                "tau0_star": c.tau0_star,
                "stabilized_c": c.stabilized_c,
                "upper_half_variation": c.upper_half_variation,
            })
        });
        Ok(Outcome {
            checks,
            result: json!({ "report": fine, "coarse": coarse_summary }),
            table,
            extra: Vec::new(),
        })
    }
}

pub struct EnergyIdentity;

impl Named for EnergyIdentity {
    fn name(&self) -> &'static str {
        "energy-identity"
    }
}

impl Experiment for EnergyIdentity {
    fn summary(&self) -> &'static str {
        "the Re(P1 w, P2 w) identity under refinement"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome> {
        let cfg = &ctx.config;
        let study = energy_identity_study(
            ctx.model.clone(),
            ctx.psi.clone(),
            &ctx.domain,
            cfg.weight.lambda,
            cfg.weight.taus[0],
            &cfg.checks.levels,
            cfg.grid.final_time,
        )?;
        let mut table = Table::new(&["n", "lhs", "rhs", "relative_discrepancy"]);
        for l in &study.levels {
            table.push(vec![l.n.into(), l.lhs.into(), l.rhs.into(), l.relative_discrepancy.into()]);
        }
        let finest = study.levels.last().map(|l| l.relative_discrepancy);
        Ok(Outcome {
            checks: vec![
                at_least("discrepancy_order", Some(study.order), 1.0),
                at_most("finest_relative_discrepancy", finest, 1e-3),
                at_most("lateral_time_term", Some(study.max_boundary_dt_term), 1e-12),
            ],
            result: serde_json::to_value(&study)?,
            table,
            extra: Vec::new(),
        })
    }
}

pub struct InvertSource;

impl Named for InvertSource {
    fn name(&self) -> &'static str {
        "invert-source"
    }
}

impl Experiment for InvertSource {
    fn summary(&self) -> &'static str {
        "CG reconstruction of the source factor over a noise sweep, plus the R-transformation check"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome> {
        let cfg = &ctx.config;
        let set = sample_coefficients(ctx.model.clone(), &ctx.grid)?;
        let fwd = ForwardMap::new(&set, &ctx.faces)?;
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        let f = SineSeries::random(&ctx.grid, cfg.ensemble.band_limit, &mut rng).sample(&ctx.grid);
        let sweep = noise_sweep(&fwd, &f, &cfg.ensemble.noise_levels, &ctx.cg_options(), ctx.seed)?;
        let transform = transformation_study(ctx.model.clone(), &ctx.domain, &cfg.checks.levels, cfg.grid.final_time)?;

        let mut checks = vec![check(
            "cg_converged",
            None,
            "every reconstruction converged",
            sweep.rows.iter().all(|r| r.converged),
        )];
        if sweep.noiseless_error.is_some() {
            checks.push(at_most("noiseless_relative_error", sweep.noiseless_error, 1e-2));
        }
        if sweep.slope.is_some() {
            checks.push(within("noise_slope", sweep.slope, 0.7, 1.3));
        }
        checks.push(at_least("transformation_order", Some(transform.order), 1.8));
        let mut table = Table::new(&["noise", "relative_error", "iterations", "converged"]);
        for r in &sweep.rows {
            table.push(vec![
                r.noise.into(),
                r.relative_error.into(),
                r.iterations.into(),
                Cell::Text(r.converged.to_string()),
            ]);
        }
        Ok(Outcome {
            checks,
            result: json!({ "noise_sweep": sweep, "transformation": transform }),
            table,
            extra: Vec::new(),
        })
    }
}

pub struct StabilitySweep;

impl Named for StabilitySweep {
    fn name(&self) -> &'static str {
        "stability-sweep"
    }
}

impl Experiment for StabilitySweep {
    fn summary(&self) -> &'static str {
        "Lipschitz stability ratios over random source pairs"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome> {
        let cfg = &ctx.config;
        let set = sample_coefficients(ctx.model.clone(), &ctx.grid)?;
        let fwd = ForwardMap::new(&set, &ctx.faces)?;
        let rep = stability_sweep(&fwd, cfg.ensemble.pairs, cfg.ensemble.band_limit, ctx.seed, false)?;

        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        let f1 = SineSeries::random(&ctx.grid, cfg.ensemble.band_limit, &mut rng);
        let f2 = SineSeries::random(&ctx.grid, cfg.ensemble.band_limit, &mut rng);
        let base = stability_pair_ratio(&fwd, 0, &f1.sample(&ctx.grid), &f2.sample(&ctx.grid))?;
        let scaled = stability_pair_ratio(&fwd, 0, &f1.scaled(1e3).sample(&ctx.grid), &f2.scaled(1e3).sample(&ctx.grid))?;
        let scale_dev = match (base.ratio, scaled.ratio) {
            (Some(a), Some(b)) => Some((a - b).abs() / a),
            _ => None,
        };
        let all_finite = rep.finite_count == rep.pairs.len();
        Ok(Outcome {
            checks: vec![
                check("ratios_finite", Some(rep.finite_count as f64), "every pair finite", all_finite && !rep.pairs.is_empty()),
                check("violations", Some(rep.violations as f64), "== 0", rep.violations == 0),
                at_most("scale_invariance", scale_dev, 1e-8),
            ],
            table: stability_table(&rep),
            result: json!({ "report": rep, "scale_invariance": scale_dev }),
            extra: Vec::new(),
        })
    }
}

pub struct InvertCoefficient;

impl Named for InvertCoefficient {
    fn name(&self) -> &'static str {
        "invert-coefficient"
    }
}

impl Experiment for InvertCoefficient {
    fn summary(&self) -> &'static str {
        "reduction of the potential problem to a source problem and its stability ratios"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome> {
        let cfg = &ctx.config;
        let c1v = cfg.checks.c1;
        let amp = cfg.checks.perturbation;
        let principal = carleman_lab::model::build_principal(&cfg.coefficients.principal, &cfg.coefficients.params)
            .context("`coefficients`")?;
        let u0 = |_x: carleman_lab::linalg::Vec2| C64::new(1.0, 0.0);
        let v = move |t: f64, _x: carleman_lab::linalg::Vec2| C64::from_polar(1.0, c1v * t);
        let c1 = ScalarProfile::real(c1v);
        let c2 = move |g: &SpaceTimeGrid| ScalarProfile::Sines {
            offset: c1v,
            series: SineSeries::fundamental(g, amp),
        };
        let residual = reduction_study(principal.clone(), &u0, &v, &c1, &c2, &ctx.domain, &cfg.checks.levels, cfg.grid.final_time)?;
        let prob = CoefficientProblem {
            grid: ctx.grid.clone(),
            principal,
            u0: &u0,
            v: &v,
        };
        let rep = prob.sweep(&ctx.faces, c1v, cfg.ensemble.pairs.max(2), amp, cfg.ensemble.band_limit, ctx.seed)?;
        let identical_flagged = rep.pairs[0].ratio.is_none() && rep.pairs[0].flags.iter().any(|f| f == FLAG_IDENTICAL);
        let others_clean = rep.pairs[1..].iter().all(|p| p.ratio.is_some_and(f64::is_finite) && p.flags.is_empty());
        Ok(Outcome {
            checks: vec![
                at_least("reduction_order", Some(residual.order), 1.8),
                check("identical_pair_excluded", None, "c1 = c2 pair flagged and excluded", identical_flagged),
                check("ratios_finite", Some(rep.finite_count as f64), "every perturbed pair finite and unflagged", others_clean),
            ],
            table: stability_table(&rep),
            result: json!({ "reduction": residual, "report": rep }),
            extra: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_str;

    fn ctx(text: &str) -> Context {
        Context::new(parse_str(text).unwrap(), 1).unwrap()
    }

    #[test]
    fn registry_lists_every_subcommand() {
        let names = registry().names();
        assert_eq!(names.len(), 7);
        assert!(registry().get("invert-source").is_ok());
        assert!(registry().get("nope").is_err());
    }

    #[test]
    fn condition_one_failure_is_reported() {
        let c = ctx("[domain]\nobserved = [\"left\"]\n[grid]\nn_x = 8\nn_t = 8\n");
        let out = CheckWeight.run(&c).unwrap();
        assert!(!out.passed());
        assert_eq!(out.checks[1].value, Some(4.0));
    }

    #[test]
    fn small_stability_sweep_passes() {
        let c = ctx("[grid]\nn_x = 12\nn_t = 12\n[ensemble]\npairs = 4\n");
        let out = StabilitySweep.run(&c).unwrap();
        assert!(out.passed(), "{:?}", out.checks);
        assert_eq!(out.table.rows.len(), 4);
    }
}
