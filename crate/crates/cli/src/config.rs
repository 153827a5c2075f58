//! Experiment configuration files.
//!
//! One TOML file describes one experiment. Every key is optional; unknown keys
//! are rejected.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context as _, Result};
use carleman_lab::geometry::{build_grid, Face, SpaceTimeGrid, SpatialDomain};
use carleman_lab::model::{build_principal, AnalyticCoefficients, CoefficientModel, ScalarProfile};
use carleman_lab::params::Params;
use carleman_lab::symbols::default_lambda_grid;
use carleman_lab::weight::{build_weight, WeightFunction};
use carleman_lab::C64;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Output directory; `--out` takes precedence.
    pub output_dir: Option<PathBuf>,
    pub domain: DomainSpec,
    pub grid: GridSpec,
    pub coefficients: CoefficientSpec,
    pub weight: WeightSpec,
    pub ensemble: EnsembleSpec,
    pub checks: CheckSpec,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    #[default]
    Interval,
    Rectangle,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub x: [f64; 2],
    pub y: [f64; 2],
    /// Observed faces. Defaults to `["right"]` on an interval and
    /// `["x_hi", "y_hi"]` on a rectangle.
    pub observed: Option<Vec<String>>,
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self {
            kind: DomainKind::Interval,
            x: [0.0, 1.0],
            y: [0.0, 1.0],
            observed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub n_x: usize,
    pub n_t: usize,
    pub final_time: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_x: 32,
            n_t: 32,
            final_time: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoefficientSpec {
    pub principal: String,
    pub params: Params,
    /// Real constant potential `c`.
    pub potential: f64,
    /// Source factor `R = exp(i omega t)`.
    pub source_omega: f64,
}

impl Default for CoefficientSpec {
    fn default() -> Self {
        Self {
            principal: "identity".into(),
            params: Params::new(),
            potential: 0.0,
            source_omega: 1.0,
        }
    }
}

fn default_taus() -> Vec<f64> {
    (0..=12).map(|k| 2f64.powf(k as f64 / 2.0)).collect()
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightSpec {
    pub psi: String,
    pub params: Params,
    pub lambda: f64,
    pub lambda_grid: Vec<f64>,
    pub taus: Vec<f64>,
    pub n_angles: usize,
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self {
            psi: "distance_squared".into(),
            params: Params::new(),
            lambda: 0.05,
            lambda_grid: default_lambda_grid(),
            taus: default_taus(),
            n_angles: 17,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSpec {
    pub count: usize,
    pub seed: u64,
    pub band_limit: u32,
    pub noise_levels: Vec<f64>,
    pub pairs: usize,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            count: 10,
            seed: 0,
            band_limit: 2,
            noise_levels: vec![0.0, 1e-4, 1e-3, 1e-2, 1e-1],
            pairs: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSpec {
    /// Grid sizes (`n_x = n_t = n`) for refinement studies.
    pub levels: Vec<usize>,
    pub adjoint_trials: usize,
    /// Also run the Carleman sweep at half resolution.
    pub compare_coarse: bool,
    pub cg_max_iterations: usize,
    pub cg_tolerance: f64,
    pub regularization: f64,
    /// Amplitude of `c2 - c1` in the coefficient problem.
    pub perturbation: f64,
    pub c1: f64,
}

impl Default for CheckSpec {
    fn default() -> Self {
        Self {
            levels: vec![32, 64, 128, 256],
            adjoint_trials: 100,
            compare_coarse: true,
            cg_max_iterations: 500,
            cg_tolerance: 1e-10,
            regularization: 0.0,
            perturbation: 0.1,
            c1: 1.0,
        }
    }
}

pub fn parse_config(path: &Path) -> Result<(ExperimentConfig, Vec<u8>)> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let text = std::str::from_utf8(&bytes).with_context(|| format!("config {} is not UTF-8", path.display()))?;
    let cfg = parse_str(text).with_context(|| format!("invalid config {}", path.display()))?;
    Ok((cfg, bytes))
}

pub fn parse_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

fn positive(key: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        bail!("`{key}` must be a positive finite number, got {v}");
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(obs) = &self.domain.observed {
            if obs.is_empty() {
                bail!("`domain.observed` is empty; at least one observed face is required");
            }
        }
        if self.grid.n_x < 4 || self.grid.n_t < 1 {
            bail!("`grid.n_x` must be at least 4 and `grid.n_t` at least 1");
        }
        positive("grid.final_time", self.grid.final_time)?;
        positive("weight.lambda", self.weight.lambda)?;
        if self.weight.taus.is_empty() || self.weight.taus.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            bail!("`weight.taus` must be a non-empty list of positive numbers");
        }
        if self.weight.taus.windows(2).any(|w| w[1] <= w[0]) {
            bail!("`weight.taus` must be increasing");
        }
        if self.weight.lambda_grid.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            bail!("`weight.lambda_grid` must contain positive numbers");
        }
        if self.weight.n_angles < 2 {
            bail!("`weight.n_angles` must be at least 2");
        }
        if self.ensemble.noise_levels.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            bail!("`ensemble.noise_levels` must be non-negative");
        }
        if self.checks.levels.iter().any(|n| *n < 4) {
            bail!("`checks.levels` entries must be at least 4");
        }
        positive("checks.cg_tolerance", self.checks.cg_tolerance)?;
        if !(self.checks.regularization.is_finite() && self.checks.regularization >= 0.0) {
            bail!("`checks.regularization` must be non-negative");
        }
        if !self.coefficients.potential.is_finite() || !self.coefficients.source_omega.is_finite() {
            bail!("`coefficients.potential` and `coefficients.source_omega` must be finite");
        }
        Ok(())
    }

    pub fn observed_faces(&self) -> Result<Vec<Face>> {
        let names = match (&self.domain.observed, self.domain.kind) {
            (Some(v), _) => v.clone(),
            (None, DomainKind::Interval) => vec!["right".into()],
            (None, DomainKind::Rectangle) => vec!["x_hi".into(), "y_hi".into()],
        };
        names
            .iter()
            .map(|n| Face::parse(n).with_context(|| format!("`domain.observed`: unknown face `{n}`")))
            .collect()
    }

    pub fn domain(&self) -> Result<SpatialDomain> {
        let faces = self.observed_faces()?;
        let d = match self.domain.kind {
            DomainKind::Interval => SpatialDomain::interval(self.domain.x[0], self.domain.x[1], &faces),
            DomainKind::Rectangle => SpatialDomain::rectangle(self.domain.x, self.domain.y, &faces),
        };
        d.context("`domain`")
    }

    pub fn grid(&self) -> Result<SpaceTimeGrid> {
        build_grid(self.domain()?, self.grid.n_x, self.grid.n_t, self.grid.final_time).context("`grid`")
    }

    pub fn dim(&self) -> usize {
        match self.domain.kind {
            DomainKind::Interval => 1,
            DomainKind::Rectangle => 2,
        }
    }

    pub fn model(&self) -> Result<Arc<dyn CoefficientModel>> {
        Ok(self.analytic(ScalarProfile::real(self.coefficients.potential))?.shared())
    }

    /// Coefficients with the configured principal part and source factor and
    /// the given potential.
    pub fn analytic(&self, potential: ScalarProfile) -> Result<AnalyticCoefficients> {
        let c = &self.coefficients;
        let principal = build_principal(&c.principal, &c.params).context("`coefficients`")?;
        Ok(AnalyticCoefficients::new(principal)
            .with_potential(potential)
            .with_source_factor(ScalarProfile::Phase {
                amplitude: C64::new(1.0, 0.0),
                omega: c.source_omega,
            }))
    }

    pub fn psi(&self) -> Result<Arc<dyn WeightFunction>> {
        build_weight(&self.weight.psi, self.dim(), &self.weight.params).context("`weight`")
    }
}
