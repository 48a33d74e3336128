//! Planar slow–fast models `a' = eps f(a,b,eps) + b h(a,b,eps)`,
//! `b' = b g(a,b,eps)`, plus structural validation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extended-real domain bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Finite(f64),
    Infinite,
}

impl Bound {
    pub fn finite(self) -> Option<f64> {
        match self {
            Bound::Finite(x) => Some(x),
            Bound::Infinite => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub a_min: Bound,
    pub a_max: Bound,
    pub a_bar: f64,
}

impl Domain {
    pub fn new(a_min: Bound, a_max: Bound, a_bar: f64) -> Self {
        Domain { a_min, a_max, a_bar }
    }

    pub fn contains(&self, a: f64) -> bool {
        let lo = self.a_min.finite().map_or(true, |m| a > m);
        let hi = self.a_max.finite().map_or(true, |m| a < m);
        lo && hi
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureFlags {
    /// f = a f~(b,eps) and h = a h~(b,eps)
    pub separable_fh: bool,
    pub h_independent_of_a: bool,
    /// g = phi(b) G(a,b,eps) with phi(0) != 0
    pub g_factorizable: bool,
}

pub trait SlowFastModel: Send + Sync {
    fn name(&self) -> &str;
    fn f(&self, a: f64, b: f64, eps: f64) -> f64;
    fn g(&self, a: f64, b: f64, eps: f64) -> f64;
    fn h(&self, a: f64, b: f64, eps: f64) -> f64;
    fn domain(&self) -> Domain;

    fn df_da(&self, _a: f64, _b: f64, _eps: f64) -> Option<f64> {
        None
    }
    fn dh_da(&self, _a: f64, _b: f64, _eps: f64) -> Option<f64> {
        None
    }
    fn dg_db(&self, _a: f64, _b: f64, _eps: f64) -> Option<f64> {
        None
    }
    fn structure(&self) -> StructureFlags {
        StructureFlags::default()
    }
    fn phi(&self, _b: f64) -> Option<f64> {
        None
    }
    fn big_g(&self, _a: f64, _b: f64, _eps: f64) -> Option<f64> {
        None
    }
    /// a-coordinate of the peak of the limiting orbit reaching height `b`
    /// (where g(a,b,0) = 0 on the repelling-to-attracting turn), when known.
    fn peak_a(&self, _b: f64) -> Option<f64> {
        None
    }
}

pub fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// Central difference with relative step `1e-6 max(1,|x|)`.
pub fn central_diff(fun: impl Fn(f64) -> f64, x: f64) -> f64 {
    central_diff_step(fun, x, fd_step(x))
}

pub fn central_diff_step(fun: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (fun(x + h) - fun(x - h)) / (2.0 * h)
}

/// Derivative in b, one-sided second order when the central stencil would
/// cross the invariant axis b = 0.
pub fn diff_b(fun: impl Fn(f64) -> f64, b: f64) -> f64 {
    let h = fd_step(b);
    if b - h < 0.0 {
        (-3.0 * fun(b) + 4.0 * fun(b + h) - fun(b + 2.0 * h)) / (2.0 * h)
    } else {
        central_diff_step(fun, b, h)
    }
}

pub fn df_da(m: &dyn SlowFastModel, a: f64, b: f64, eps: f64) -> f64 {
    m.df_da(a, b, eps).unwrap_or_else(|| central_diff(|x| m.f(x, b, eps), a))
}

pub fn dh_da(m: &dyn SlowFastModel, a: f64, b: f64, eps: f64) -> f64 {
    m.dh_da(a, b, eps).unwrap_or_else(|| central_diff(|x| m.h(x, b, eps), a))
}

pub fn dg_db(m: &dyn SlowFastModel, a: f64, b: f64, eps: f64) -> f64 {
    m.dg_db(a, b, eps).unwrap_or_else(|| diff_b(|x| m.g(a, x, eps), b))
}

pub fn dbig_g_db(m: &dyn SlowFastModel, a: f64, b: f64, eps: f64) -> Result<f64> {
    if m.big_g(a, b, eps).is_none() {
        return Err(Error::FlagNotSet("g_factorizable"));
    }
    Ok(diff_b(|x| m.big_g(a, x, eps).unwrap_or(f64::NAN), b))
}

type Eval = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
type Eval1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Closure-backed model for custom systems.
#[derive(Clone)]
pub struct FnModel {
    name: String,
    f: Eval,
    g: Eval,
    h: Eval,
    df_da: Option<Eval>,
    dh_da: Option<Eval>,
    dg_db: Option<Eval>,
    phi: Option<Eval1>,
    big_g: Option<Eval>,
    domain: Domain,
    flags: StructureFlags,
}

impl FnModel {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        g: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        h: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        domain: Domain,
    ) -> Self {
        FnModel {
            name: name.into(),
            f: Arc::new(f),
            g: Arc::new(g),
            h: Arc::new(h),
            df_da: None,
            dh_da: None,
            dg_db: None,
            phi: None,
            big_g: None,
            domain,
            flags: StructureFlags::default(),
        }
    }

    pub fn with_df_da(mut self, e: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.df_da = Some(Arc::new(e));
        self
    }

    pub fn with_dh_da(mut self, e: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.dh_da = Some(Arc::new(e));
        self
    }

    pub fn with_dg_db(mut self, e: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.dg_db = Some(Arc::new(e));
        self
    }

    pub fn with_flags(mut self, flags: StructureFlags) -> Self {
        self.flags = flags;
        self
    }

    pub fn with_factor(
        mut self,
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        big_g: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.phi = Some(Arc::new(phi));
        self.big_g = Some(Arc::new(big_g));
        self.flags.g_factorizable = true;
        self
    }
}

impl SlowFastModel for FnModel {
    fn name(&self) -> &str {
        &self.name
    }
    fn f(&self, a: f64, b: f64, eps: f64) -> f64 {
        (self.f)(a, b, eps)
    }
    fn g(&self, a: f64, b: f64, eps: f64) -> f64 {
        (self.g)(a, b, eps)
    }
    fn h(&self, a: f64, b: f64, eps: f64) -> f64 {
        (self.h)(a, b, eps)
    }
    fn domain(&self) -> Domain {
        self.domain
    }
    fn df_da(&self, a: f64, b: f64, eps: f64) -> Option<f64> {
        self.df_da.as_ref().map(|e| e(a, b, eps))
    }
    fn dh_da(&self, a: f64, b: f64, eps: f64) -> Option<f64> {
        self.dh_da.as_ref().map(|e| e(a, b, eps))
    }
    fn dg_db(&self, a: f64, b: f64, eps: f64) -> Option<f64> {
        self.dg_db.as_ref().map(|e| e(a, b, eps))
    }
    fn structure(&self) -> StructureFlags {
        self.flags
    }
    fn phi(&self, b: f64) -> Option<f64> {
        self.phi.as_ref().map(|e| e(b))
    }
    fn big_g(&self, a: f64, b: f64, eps: f64) -> Option<f64> {
        self.big_g.as_ref().map(|e| e(a, b, eps))
    }
}

/// Rectangle `[a_lo, a_hi] x [0, b_hi]` sampled at `n_a` cell midpoints in a
/// (the turning conditions live on open intervals) and `n_b` nodes in b
/// including the axis row b = 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub a_lo: f64,
    pub a_hi: f64,
    pub b_hi: f64,
    pub n_a: usize,
    pub n_b: usize,
}

impl SampleGrid {
    pub fn new(a_lo: f64, a_hi: f64, b_hi: f64) -> Self {
        SampleGrid { a_lo, a_hi, b_hi, n_a: 200, n_b: 200 }
    }

    pub fn a_values(&self) -> impl Iterator<Item = f64> + '_ {
        let da = (self.a_hi - self.a_lo) / self.n_a as f64;
        (0..self.n_a).map(move |i| self.a_lo + (i as f64 + 0.5) * da)
    }

    pub fn b_values(&self) -> impl Iterator<Item = f64> + '_ {
        let db = self.b_hi / (self.n_b.max(2) - 1) as f64;
        (0..self.n_b.max(2)).map(move |j| j as f64 * db)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Finite,
    TurningF,
    TurningH,
    TurningG,
    Partials,
    SeparableFh,
    HIndependentOfA,
    GFactorizable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub a: f64,
    pub b: f64,
    pub value: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub condition: Condition,
    pub passed: bool,
    pub checked: usize,
    pub first_violation: Option<Violation>,
}

impl ConditionResult {
    fn new(condition: Condition) -> Self {
        ConditionResult { condition, passed: true, checked: 0, first_violation: None }
    }

    fn check(&mut self, ok: bool, a: f64, b: f64, value: f64, detail: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok && self.passed {
            self.passed = false;
            self.first_violation = Some(Violation { a, b, value, detail: detail() });
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub model: String,
    pub grid: SampleGrid,
    pub conditions: Vec<ConditionResult>,
    /// h < 0 on the axis row b = 0 alone (orbits live in b > 0).
    pub boundary_row_passed: bool,
    pub flags: Vec<ConditionResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.conditions.iter().chain(&self.flags).all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&ConditionResult> {
        self.conditions.iter().chain(&self.flags).find(|c| !c.passed)
    }

    pub fn result(&self, c: Condition) -> Option<&ConditionResult> {
        self.conditions.iter().chain(&self.flags).find(|r| r.condition == c)
    }
}

fn partial_agrees(an: f64, fd: f64, fscale: f64) -> bool {
    (an - fd).abs() <= 1e-6 * an.abs().max(fd.abs()) + 1e-9 * (1.0 + fscale)
}

/// Checks the turning conditions, supplied partials and declared structure
/// flags on a finite sample grid. Passing is necessary, not sufficient.
pub fn validate_model(model: &dyn SlowFastModel, grid: &SampleGrid) -> Result<ValidationReport> {
    let dom = model.domain();
    if !(grid.a_lo < grid.a_hi && grid.b_hi > 0.0 && grid.n_a >= 2 && grid.n_b >= 2) {
        return Err(Error::Precondition(format!("degenerate sample grid {grid:?}")));
    }
    let inside = |a: f64| {
        dom.a_min.finite().map_or(true, |m| a >= m) && dom.a_max.finite().map_or(true, |m| a <= m)
    };
    if !(inside(grid.a_lo) && inside(grid.a_hi)) {
        return Err(Error::Precondition(format!(
            "grid [{}, {}] outside declared domain {:?}",
            grid.a_lo, grid.a_hi, dom
        )));
    }

    let mut finite = ConditionResult::new(Condition::Finite);
    let mut tf = ConditionResult::new(Condition::TurningF);
    let mut th = ConditionResult::new(Condition::TurningH);
    let mut tg = ConditionResult::new(Condition::TurningG);
    let mut partials = ConditionResult::new(Condition::Partials);
    let mut boundary_ok = true;
    let abar = dom.a_bar;

    for a in grid.a_values() {
        let f0 = model.f(a, 0.0, 0.0);
        let g0 = model.g(a, 0.0, 0.0);
        finite.check(f0.is_finite() && g0.is_finite(), a, 0.0, f0 + g0, || "non-finite f or g on axis".into());
        tf.check(f0 > 0.0, a, 0.0, f0, || format!("f(a,0,0) = {f0:e} <= 0"));
        if a < abar {
            tg.check(g0 < 0.0, a, 0.0, g0, || format!("g(a,0,0) = {g0:e} >= 0 left of a_bar"));
        } else if a > abar {
            tg.check(g0 > 0.0, a, 0.0, g0, || format!("g(a,0,0) = {g0:e} <= 0 right of a_bar"));
        }
        for (j, b) in grid.b_values().enumerate() {
            let hv = model.h(a, b, 0.0);
            finite.check(hv.is_finite(), a, b, hv, || "non-finite h".into());
            th.check(hv < 0.0, a, b, hv, || format!("h(a,b,0) = {hv:e} >= 0"));
            if j == 0 && !(hv < 0.0) {
                boundary_ok = false;
            }
            if let Some(an) = model.df_da(a, b, 0.0) {
                let fd = central_diff(|x| model.f(x, b, 0.0), a);
                let ok = partial_agrees(an, fd, model.f(a, b, 0.0).abs());
                partials.check(ok, a, b, an - fd, || format!("df/da analytic {an:e} vs fd {fd:e}"));
            }
            if let Some(an) = model.dh_da(a, b, 0.0) {
                let fd = central_diff(|x| model.h(x, b, 0.0), a);
                let ok = partial_agrees(an, fd, hv.abs());
                partials.check(ok, a, b, an - fd, || format!("dh/da analytic {an:e} vs fd {fd:e}"));
            }
            if let Some(an) = model.dg_db(a, b, 0.0) {
                let fd = diff_b(|x| model.g(a, x, 0.0), b);
                let ok = partial_agrees(an, fd, model.g(a, b, 0.0).abs());
                partials.check(ok, a, b, an - fd, || format!("dg/db analytic {an:e} vs fd {fd:e}"));
            }
        }
    }

    Ok(ValidationReport {
        model: model.name().to_string(),
        grid: *grid,
        conditions: vec![finite, tf, th, tg, partials],
        boundary_row_passed: boundary_ok,
        flags: validate_flags(model, grid),
    })
}

fn rel_close(x: f64, y: f64, tol: f64) -> bool {
    (x - y).abs() <= tol * x.abs().max(y.abs()).max(1e-300)
}

/// Numerical check of every structure flag the model declares.
pub fn validate_flags(model: &dyn SlowFastModel, grid: &SampleGrid) -> Vec<ConditionResult> {
    let flags = model.structure();
    let mut out = Vec::new();
    let a_ref = 0.5 * (grid.a_lo + grid.a_hi);
    if flags.h_independent_of_a {
        let mut r = ConditionResult::new(Condition::HIndependentOfA);
        for b in grid.b_values() {
            let h_ref = model.h(a_ref, b, 0.0);
            for a in grid.a_values() {
                let hv = model.h(a, b, 0.0);
                r.check(rel_close(hv, h_ref, 1e-8), a, b, hv - h_ref, || "h varies with a".into());
            }
        }
        out.push(r);
    }
    if flags.separable_fh {
        let mut r = ConditionResult::new(Condition::SeparableFh);
        for b in grid.b_values() {
            let fr = model.f(a_ref, b, 0.0) / a_ref;
            let hr = model.h(a_ref, b, 0.0) / a_ref;
            for a in grid.a_values().filter(|a| *a != 0.0) {
                let fa = model.f(a, b, 0.0) / a;
                let ha = model.h(a, b, 0.0) / a;
                r.check(rel_close(fa, fr, 1e-8), a, b, fa - fr, || "f/a varies with a".into());
                r.check(rel_close(ha, hr, 1e-8), a, b, ha - hr, || "h/a varies with a".into());
            }
        }
        out.push(r);
    }
    if flags.g_factorizable {
        let mut r = ConditionResult::new(Condition::GFactorizable);
        match model.phi(0.0) {
            Some(p0) => r.check(p0 != 0.0 && p0.is_finite(), 0.0, 0.0, p0, || "phi(0) = 0".into()),
            None => r.check(false, 0.0, 0.0, f64::NAN, || "phi evaluator missing".into()),
        }
        for a in grid.a_values() {
            for b in grid.b_values() {
                let g = model.g(a, b, 0.0);
                let prod = model.phi(b).zip(model.big_g(a, b, 0.0)).map(|(p, gg)| p * gg);
                let ok = prod.is_some_and(|p| (p - g).abs() <= 1e-10 * (1.0 + g.abs()));
                r.check(ok, a, b, g - prod.unwrap_or(f64::NAN), || "g != phi(b) G(a,b,0)".into());
            }
        }
        out.push(r);
    }
    out
}
