//! Analytic coefficient models for the Schrodinger operator
//!
//! `P u = i u_t - div(a grad u) + b . grad u + c u`, with source factor `R`.
//!
//! The principal part is a pluggable strategy looked up by name in
//! [`principal_registry`]; lower-order terms and the source factor are simple
//! closed-form profiles.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::linalg::{CVec2, Mat2, Vec2, C64, IDENTITY, ZERO_MAT};
use crate::params::{ParamReader, Params};
use crate::registry::{Named, Registry};
use crate::series::SineSeries;

const CZERO: C64 = C64::new(0.0, 0.0);

/// The symmetric matrix field `a_{lj}(t, x)` with its first derivatives.
pub trait PrincipalPart: Send + Sync + fmt::Debug {
    fn value(&self, t: f64, x: Vec2) -> Mat2;
    fn dt(&self, t: f64, x: Vec2) -> Mat2;
    fn dx(&self, t: f64, x: Vec2, axis: usize) -> Mat2;
    fn is_time_independent(&self) -> bool;
}

/// Builds a principal part from named parameters.
pub trait PrincipalFactory: Named + Send + Sync {
    fn summary(&self) -> &'static str;
    fn build(&self, params: &Params) -> Result<Arc<dyn PrincipalPart>>;
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantPrincipal(pub Mat2);

impl PrincipalPart for ConstantPrincipal {
    fn value(&self, _t: f64, _x: Vec2) -> Mat2 {
        self.0
    }
    fn dt(&self, _t: f64, _x: Vec2) -> Mat2 {
        ZERO_MAT
    }
    fn dx(&self, _t: f64, _x: Vec2, _axis: usize) -> Mat2 {
        ZERO_MAT
    }
    fn is_time_independent(&self) -> bool {
        true
    }
}

/// `a_11 = c0 + c1 x_1 + c2 x_1^2`, `a_22 = 1`, `a_12 = 0`.
#[derive(Debug, Clone, Copy)]
pub struct PolynomialA11 {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl PrincipalPart for PolynomialA11 {
    fn value(&self, _t: f64, x: Vec2) -> Mat2 {
        [[self.c0 + self.c1 * x[0] + self.c2 * x[0] * x[0], 0.0], [0.0, 1.0]]
    }
    fn dt(&self, _t: f64, _x: Vec2) -> Mat2 {
        ZERO_MAT
    }
    fn dx(&self, _t: f64, x: Vec2, axis: usize) -> Mat2 {
        if axis == 0 {
            [[self.c1 + 2.0 * self.c2 * x[0], 0.0], [0.0, 0.0]]
        } else {
            ZERO_MAT
        }
    }
    fn is_time_independent(&self) -> bool {
        true
    }
}

/// `a = (base + rate t) I`.
#[derive(Debug, Clone, Copy)]
pub struct TimeRamp {
    pub base: f64,
    pub rate: f64,
}

impl PrincipalPart for TimeRamp {
    fn value(&self, t: f64, _x: Vec2) -> Mat2 {
        let s = self.base + self.rate * t;
        [[s, 0.0], [0.0, s]]
    }
    fn dt(&self, _t: f64, _x: Vec2) -> Mat2 {
        [[self.rate, 0.0], [0.0, self.rate]]
    }
    fn dx(&self, _t: f64, _x: Vec2, _axis: usize) -> Mat2 {
        ZERO_MAT
    }
    fn is_time_independent(&self) -> bool {
        self.rate == 0.0
    }
}

/// Spatially varying, time-modulated anisotropic matrix with a mixed term:
/// `a_11 = 1 + x^2/2`, `a_22 = 1 + y/2`, `a_12 = kappa x y`, all scaled by
/// `1 + eps sin(pi t)`.
#[derive(Debug, Clone, Copy)]
pub struct Anisotropic {
    pub kappa: f64,
    pub eps: f64,
}

impl Anisotropic {
    fn base(&self, x: Vec2) -> Mat2 {
        let m = self.kappa * x[0] * x[1];
        [[1.0 + 0.5 * x[0] * x[0], m], [m, 1.0 + 0.5 * x[1]]]
    }
    fn modulation(&self, t: f64) -> f64 {
        1.0 + self.eps * (PI * t).sin()
    }
}

impl PrincipalPart for Anisotropic {
    fn value(&self, t: f64, x: Vec2) -> Mat2 {
        scale(&self.base(x), self.modulation(t))
    }
    fn dt(&self, t: f64, x: Vec2) -> Mat2 {
        scale(&self.base(x), self.eps * PI * (PI * t).cos())
    }
    fn dx(&self, t: f64, x: Vec2, axis: usize) -> Mat2 {
        let d = if axis == 0 {
            let m = self.kappa * x[1];
            [[x[0], m], [m, 0.0]]
        } else {
            let m = self.kappa * x[0];
            [[0.0, m], [m, 0.5]]
        };
        scale(&d, self.modulation(t))
    }
    fn is_time_independent(&self) -> bool {
        self.eps == 0.0
    }
}

fn scale(m: &Mat2, s: f64) -> Mat2 {
    [[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]]
}

struct IdentityFactory;
struct ConstantFactory;
struct PolynomialFactory;
struct TimeRampFactory;
struct AnisotropicFactory;

impl Named for IdentityFactory {
    fn name(&self) -> &'static str {
        "identity"
    }
}
impl PrincipalFactory for IdentityFactory {
    fn summary(&self) -> &'static str {
        "a = I"
    }
    fn build(&self, params: &Params) -> Result<Arc<dyn PrincipalPart>> {
        ParamReader::new(self.name(), params, &[])?;
        Ok(Arc::new(ConstantPrincipal(IDENTITY)))
    }
}

impl Named for ConstantFactory {
    fn name(&self) -> &'static str {
        "constant"
    }
}
impl PrincipalFactory for ConstantFactory {
    fn summary(&self) -> &'static str {
        "constant matrix from a11, a12, a21, a22 (a21 defaults to a12)"
    }
    fn build(&self, params: &Params) -> Result<Arc<dyn PrincipalPart>> {
        let r = ParamReader::new(self.name(), params, &["a11", "a12", "a21", "a22"])?;
        let a12 = r.scalar("a12", 0.0)?;
        let m = [
            [r.scalar("a11", 1.0)?, a12],
            [r.scalar("a21", a12)?, r.scalar("a22", 1.0)?],
        ];
        Ok(Arc::new(ConstantPrincipal(m)))
    }
}

impl Named for PolynomialFactory {
    fn name(&self) -> &'static str {
        "a11_polynomial"
    }
}
impl PrincipalFactory for PolynomialFactory {
    fn summary(&self) -> &'static str {
        "a11 = c0 + c1 x1 + c2 x1^2 (defaults 1, 0, 0.5), a22 = 1"
    }
    fn build(&self, params: &Params) -> Result<Arc<dyn PrincipalPart>> {
        let r = ParamReader::new(self.name(), params, &["c0", "c1", "c2"])?;
        Ok(Arc::new(PolynomialA11 {
            c0: r.scalar("c0", 1.0)?,
            c1: r.scalar("c1", 0.0)?,
            c2: r.scalar("c2", 0.5)?,
        }))
    }
}

impl Named for TimeRampFactory {
    fn name(&self) -> &'static str {
        "time_ramp"
    }
}
impl PrincipalFactory for TimeRampFactory {
    fn summary(&self) -> &'static str {
        "a = (base + rate t) I (defaults 1, 0.5)"
    }
    fn build(&self, params: &Params) -> Result<Arc<dyn PrincipalPart>> {
        let r = ParamReader::new(self.name(), params, &["base", "rate"])?;
        Ok(Arc::new(TimeRamp {
            base: r.scalar("base", 1.0)?,
            rate: r.scalar("rate", 0.5)?,
        }))
    }
}

impl Named for AnisotropicFactory {
    fn name(&self) -> &'static str {
        "anisotropic"
    }
}
impl PrincipalFactory for AnisotropicFactory {
    fn summary(&self) -> &'static str {
        "a11 = 1 + x^2/2, a22 = 1 + y/2, a12 = kappa x y, times 1 + eps sin(pi t)"
    }
    fn build(&self, params: &Params) -> Result<Arc<dyn PrincipalPart>> {
        let r = ParamReader::new(self.name(), params, &["kappa", "eps"])?;
        Ok(Arc::new(Anisotropic {
            kappa: r.scalar("kappa", 0.25)?,
            eps: r.scalar("eps", 0.0)?,
        }))
    }
}

/// Registry of built-in principal parts.
pub fn principal_registry() -> Registry<dyn PrincipalFactory> {
    let mut r: Registry<dyn PrincipalFactory> = Registry::new("principal part");
    r.register(Box::new(IdentityFactory))
        .register(Box::new(ConstantFactory))
        .register(Box::new(PolynomialFactory))
        .register(Box::new(TimeRampFactory))
        .register(Box::new(AnisotropicFactory));
    r
}

/// Closed-form complex scalar field used for `c` and `R`.
#[derive(Clone, Debug, PartialEq)]
pub enum ScalarProfile {
    Constant(C64),
    /// `amplitude * exp(i omega t)`
    Phase { amplitude: C64, omega: f64 },
    /// `offset + slope . x` (real)
    Affine { offset: f64, slope: Vec2 },
    /// `offset + series(x)` (real)
    Sines { offset: f64, series: SineSeries },
}

impl ScalarProfile {
    pub fn real(v: f64) -> Self {
        ScalarProfile::Constant(C64::new(v, 0.0))
    }

    pub fn value(&self, t: f64, x: Vec2) -> C64 {
        match self {
            ScalarProfile::Constant(c) => *c,
            ScalarProfile::Phase { amplitude, omega } => amplitude * C64::from_polar(1.0, omega * t),
            ScalarProfile::Affine { offset, slope } => {
                C64::new(offset + slope[0] * x[0] + slope[1] * x[1], 0.0)
            }
            ScalarProfile::Sines { offset, series } => C64::new(offset + series.value(x), 0.0),
        }
    }

    pub fn dt(&self, t: f64, _x: Vec2) -> C64 {
        match self {
            ScalarProfile::Phase { amplitude, omega } => {
                amplitude * C64::new(0.0, *omega) * C64::from_polar(1.0, omega * t)
            }
            _ => CZERO,
        }
    }

    pub fn grad(&self, _t: f64, x: Vec2) -> CVec2 {
        match self {
            ScalarProfile::Affine { slope, .. } => [C64::new(slope[0], 0.0), C64::new(slope[1], 0.0)],
            ScalarProfile::Sines { series, .. } => {
                let (_, g, _) = series.jet(x);
                [C64::new(g[0], 0.0), C64::new(g[1], 0.0)]
            }
            _ => [CZERO; 2],
        }
    }

    pub fn hess(&self, _t: f64, x: Vec2) -> [[C64; 2]; 2] {
        match self {
            ScalarProfile::Sines { series, .. } => {
                let (_, _, h) = series.jet(x);
                let c = |v: f64| C64::new(v, 0.0);
                [[c(h[0][0]), c(h[0][1])], [c(h[1][0]), c(h[1][1])]]
            }
            _ => [[CZERO; 2]; 2],
        }
    }

    pub fn is_time_independent(&self) -> bool {
        !matches!(self, ScalarProfile::Phase { omega, .. } if *omega != 0.0)
    }
}

/// Everything the solver and the checks need to know about the operator.
pub trait CoefficientModel: Send + Sync + fmt::Debug {
    fn principal(&self, t: f64, x: Vec2) -> Mat2;
    fn principal_dt(&self, t: f64, x: Vec2) -> Mat2;
    fn principal_dx(&self, t: f64, x: Vec2, axis: usize) -> Mat2;

    fn drift(&self, _t: f64, _x: Vec2) -> CVec2 {
        [CZERO; 2]
    }
    fn potential(&self, _t: f64, _x: Vec2) -> C64 {
        CZERO
    }
    fn source_factor(&self, _t: f64, _x: Vec2) -> C64 {
        C64::new(1.0, 0.0)
    }
    fn source_factor_dt(&self, _t: f64, _x: Vec2) -> C64 {
        CZERO
    }
    fn source_factor_grad(&self, _t: f64, _x: Vec2) -> CVec2 {
        [CZERO; 2]
    }
    fn source_factor_hess(&self, _t: f64, _x: Vec2) -> [[C64; 2]; 2] {
        [[CZERO; 2]; 2]
    }
    /// True when `a`, `b` and `c` do not depend on time (the source factor may).
    fn is_time_independent(&self) -> bool;

    /// `e_j = sum_l d_l a_lj`.
    fn principal_divergence(&self, dim: usize, t: f64, x: Vec2) -> Vec2 {
        let mut e = [0.0; 2];
        for l in 0..dim {
            let d = self.principal_dx(t, x, l);
            for (j, ej) in e.iter_mut().enumerate().take(dim) {
                *ej += d[l][j];
            }
        }
        e
    }
}

/// Principal part from the registry plus closed-form lower-order terms.
#[derive(Clone, Debug)]
pub struct AnalyticCoefficients {
    pub principal: Arc<dyn PrincipalPart>,
    pub drift: CVec2,
    pub potential: ScalarProfile,
    pub source_factor: ScalarProfile,
}

impl AnalyticCoefficients {
    pub fn new(principal: Arc<dyn PrincipalPart>) -> Self {
        Self {
            principal,
            drift: [CZERO; 2],
            potential: ScalarProfile::real(0.0),
            source_factor: ScalarProfile::real(1.0),
        }
    }

    pub fn identity() -> Self {
        Self::new(Arc::new(ConstantPrincipal(IDENTITY)))
    }

    pub fn with_drift(mut self, drift: CVec2) -> Self {
        self.drift = drift;
        self
    }

    pub fn with_potential(mut self, potential: ScalarProfile) -> Self {
        self.potential = potential;
        self
    }

    pub fn with_source_factor(mut self, r: ScalarProfile) -> Self {
        self.source_factor = r;
        self
    }

    pub fn shared(self) -> Arc<dyn CoefficientModel> {
        Arc::new(self)
    }
}

impl CoefficientModel for AnalyticCoefficients {
    fn principal(&self, t: f64, x: Vec2) -> Mat2 {
        self.principal.value(t, x)
    }
    fn principal_dt(&self, t: f64, x: Vec2) -> Mat2 {
        self.principal.dt(t, x)
    }
    fn principal_dx(&self, t: f64, x: Vec2, axis: usize) -> Mat2 {
        self.principal.dx(t, x, axis)
    }
    fn drift(&self, _t: f64, _x: Vec2) -> CVec2 {
        self.drift
    }
    fn potential(&self, t: f64, x: Vec2) -> C64 {
        self.potential.value(t, x)
    }
    fn source_factor(&self, t: f64, x: Vec2) -> C64 {
        self.source_factor.value(t, x)
    }
    fn source_factor_dt(&self, t: f64, x: Vec2) -> C64 {
        self.source_factor.dt(t, x)
    }
    fn source_factor_grad(&self, t: f64, x: Vec2) -> CVec2 {
        self.source_factor.grad(t, x)
    }
    fn source_factor_hess(&self, t: f64, x: Vec2) -> [[C64; 2]; 2] {
        self.source_factor.hess(t, x)
    }
    fn is_time_independent(&self) -> bool {
        self.principal.is_time_independent() && self.potential.is_time_independent()
    }
}

/// The operator `r -> conj(R) P(r / conj(R))` acting on `i conj(R) w`.
///
/// With `S = conj(R)`:
/// `b~ = b + 2 a grad S / S` and
/// `c~ = c - i S_t / S + div(a grad S) / S - 2 a(grad S, grad S) / S^2 - b . grad S / S`.
#[derive(Debug, Clone)]
pub struct TransformedCoefficients {
    base: Arc<dyn CoefficientModel>,
    dim: usize,
}

impl TransformedCoefficients {
    pub fn new(base: Arc<dyn CoefficientModel>, dim: usize) -> Self {
        Self { base, dim }
    }

    fn factor_jet(&self, t: f64, x: Vec2) -> (C64, C64, CVec2, [[C64; 2]; 2]) {
        let s = self.base.source_factor(t, x).conj();
        let st = self.base.source_factor_dt(t, x).conj();
        let g = self.base.source_factor_grad(t, x);
        let h = self.base.source_factor_hess(t, x);
        (
            s,
            st,
            [g[0].conj(), g[1].conj()],
            [[h[0][0].conj(), h[0][1].conj()], [h[1][0].conj(), h[1][1].conj()]],
        )
    }
}

impl CoefficientModel for TransformedCoefficients {
    fn principal(&self, t: f64, x: Vec2) -> Mat2 {
        self.base.principal(t, x)
    }
    fn principal_dt(&self, t: f64, x: Vec2) -> Mat2 {
        self.base.principal_dt(t, x)
    }
    fn principal_dx(&self, t: f64, x: Vec2, axis: usize) -> Mat2 {
        self.base.principal_dx(t, x, axis)
    }
    fn drift(&self, t: f64, x: Vec2) -> CVec2 {
        let (s, _, gs, _) = self.factor_jet(t, x);
        let a = self.base.principal(t, x);
        let mut b = self.base.drift(t, x);
        for (l, bl) in b.iter_mut().enumerate().take(self.dim) {
            let ags: C64 = (0..self.dim).map(|j| gs[j] * a[l][j]).sum();
            *bl += 2.0 * ags / s;
        }
        b
    }
    fn potential(&self, t: f64, x: Vec2) -> C64 {
        let (s, st, gs, hs) = self.factor_jet(t, x);
        let a = self.base.principal(t, x);
        let e = self.base.principal_divergence(self.dim, t, x);
        let b = self.base.drift(t, x);
        let mut div_ags = C64::new(0.0, 0.0);
        let mut a_gs_gs = C64::new(0.0, 0.0);
        let mut b_gs = C64::new(0.0, 0.0);
        for j in 0..self.dim {
            div_ags += gs[j] * e[j];
            b_gs += b[j] * gs[j];
            for l in 0..self.dim {
                div_ags += hs[l][j] * a[l][j];
                a_gs_gs += gs[l] * gs[j] * a[l][j];
            }
        }
        self.base.potential(t, x) - C64::i() * st / s + div_ags / s - 2.0 * a_gs_gs / (s * s) - b_gs / s
    }
    fn is_time_independent(&self) -> bool {
        false
    }
}

/// Looks up a principal part by name and builds it.
pub fn build_principal(name: &str, params: &Params) -> Result<Arc<dyn PrincipalPart>> {
    principal_registry().get(name)?.build(params)
}

/// Convenience check used by the config layer.
pub fn ensure_finite(label: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(LabError::InvalidCoefficients(format!("{label} is not finite")))
    }
}
