//! chi scans over the heteroclinic family, root refinement, and
//! classification of relaxation-oscillation candidates.

use std::cell::RefCell;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::characteristics::{self, CharacteristicValues, LambdaForm};
use crate::error::{Error, Result};
use crate::heteroclinic::{orbit_at, HeteroclinicOrbit, HeteroclinicSettings, Parameterization};
use crate::model::SlowFastModel;
use crate::quadrature::{self, QuadOptions};
use crate::roots;

type LambdaFn<'a> = Box<dyn Fn(&HeteroclinicOrbit) -> Result<(f64, f64)> + Send + Sync + 'a>;

/// Evaluates chi and lambda at a family parameter s by recomputing the orbit.
pub struct Analyzer<'a> {
    pub model: &'a dyn SlowFastModel,
    pub param: Parameterization,
    pub settings: HeteroclinicSettings,
    lambda: Option<(LambdaForm, LambdaFn<'a>)>,
}

impl<'a> Analyzer<'a> {
    pub fn new(model: &'a dyn SlowFastModel, param: Parameterization, settings: HeteroclinicSettings) -> Self {
        Analyzer { model, param, settings, lambda: None }
    }

    /// Replaces the generic lambda evaluator (e.g. with a model-specific form).
    pub fn with_lambda(
        mut self,
        form: LambdaForm,
        f: impl Fn(&HeteroclinicOrbit) -> Result<(f64, f64)> + Send + Sync + 'a,
    ) -> Self {
        self.lambda = Some((form, Box::new(f)));
        self
    }

    pub fn orbit(&self, s: f64) -> Result<HeteroclinicOrbit> {
        orbit_at(self.model, s, self.param, &self.settings)
    }

    pub fn chi_of(&self, orbit: &HeteroclinicOrbit) -> Result<(f64, f64)> {
        characteristics::chi_endpoint(self.model, orbit)
    }

    pub fn lambda_of(&self, orbit: &HeteroclinicOrbit) -> Result<(LambdaForm, f64, f64)> {
        match &self.lambda {
            Some((form, f)) => f(orbit).map(|(l, e)| (*form, l, e)),
            None => {
                let form = characteristics::preferred_form(self.model);
                characteristics::lambda_with(self.model, orbit, form).map(|(l, e)| (form, l, e))
            }
        }
    }

    pub fn evaluate(&self, s: f64) -> Result<(HeteroclinicOrbit, CharacteristicValues)> {
        let orbit = self.orbit(s)?;
        let mut v = characteristics::evaluate_chi_only(self.model, &orbit)?;
        let (form, l, e) = self.lambda_of(&orbit)?;
        v.lambda = l;
        v.lambda_err = e;
        v.lambda_form = form;
        Ok((orbit, v))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub s: f64,
    pub values: Option<CharacteristicValues>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scan {
    pub parameterization: Parameterization,
    pub points: Vec<ScanPoint>,
}

impl Scan {
    pub fn ok_values(&self) -> impl Iterator<Item = &CharacteristicValues> {
        self.points.iter().filter_map(|p| p.values.as_ref())
    }

    /// Largest run of consecutive grid points where the orbit computation
    /// succeeded, as (s_first, s_last).
    pub fn valid_window(&self) -> Option<(f64, f64)> {
        let mut best: Option<(usize, usize)> = None;
        let mut start = None;
        for (i, p) in self.points.iter().enumerate() {
            match (p.values.is_some(), start) {
                (true, None) => start = Some(i),
                (false, Some(s0)) => {
                    if best.map_or(true, |(a, b)| i - s0 > b - a + 1) {
                        best = Some((s0, i - 1));
                    }
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s0) = start {
            let last = self.points.len() - 1;
            if best.map_or(true, |(a, b)| last - s0 > b - a) {
                best = Some((s0, last));
            }
        }
        best.map(|(a, b)| (self.points[a].s, self.points[b].s))
    }

    pub fn sign_changes(&self) -> usize {
        let v: Vec<f64> = self.ok_values().map(|c| c.chi).collect();
        v.windows(2).filter(|w| w[0] * w[1] < 0.0).count()
    }
}

/// Evaluates chi and lambda on `n_grid` equally spaced points of `window`
/// (endpoints included). Failing points are recorded.
pub fn scan_chi(an: &Analyzer, window: (f64, f64), n_grid: usize) -> Result<Scan> {
    let (lo, hi) = window;
    if n_grid < 8 {
        return Err(Error::Precondition(format!("n_grid = {n_grid} < 8")));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Precondition(format!("s-window ({lo}, {hi}) is empty")));
    }
    let grid: Vec<f64> = (0..n_grid).map(|i| lo + (hi - lo) * i as f64 / (n_grid - 1) as f64).collect();
    let points: Vec<ScanPoint> = grid
        .par_iter()
        .map(|&s| match an.evaluate(s) {
            Ok((_, v)) => ScanPoint { s, values: Some(v), error: None },
            Err(e) => ScanPoint { s, values: None, error: Some(e.to_string()) },
        })
        .collect();
    if points.iter().all(|p| p.values.is_none()) {
        return Err(Error::NoConnection(format!(
            "heteroclinic computation failed on the whole window ({lo}, {hi}): {}",
            points[n_grid / 2].error.as_deref().unwrap_or("")
        )));
    }
    Ok(Scan { parameterization: an.param, points })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Unstable,
    Degenerate,
}

/// Gamma(s0) = gamma(s0) together with the axis segment [a_omega, a_alpha].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularCycle {
    pub a_alpha: f64,
    pub a_omega: f64,
}

#[derive(Clone, Debug)]
pub struct CycleCandidate {
    pub s0: f64,
    pub chi0: f64,
    pub lambda0: f64,
    pub lambda_err: f64,
    pub lambda_form: LambdaForm,
    pub stability: Stability,
    pub gamma: HeteroclinicOrbit,
    pub singular_cycle: SingularCycle,
    pub predicted_period_coeff: f64,
    /// Finite-difference dchi/ds at s0 (diagnostic).
    pub chi_prime: Option<f64>,
    pub bracket: (f64, f64),
    pub warning: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub s0: f64,
    pub chi: f64,
    pub lambda: f64,
    pub lambda_err: f64,
    pub lambda_form: LambdaForm,
    pub stability: Stability,
    pub period_coeff: f64,
    pub a_alpha: f64,
    pub a_omega: f64,
    pub peak_b: f64,
    pub chi_prime: Option<f64>,
    pub bracket: (f64, f64),
    pub warning: Option<String>,
}

impl CycleCandidate {
    pub fn summary(&self) -> CandidateSummary {
        CandidateSummary {
            s0: self.s0,
            chi: self.chi0,
            lambda: self.lambda0,
            lambda_err: self.lambda_err,
            lambda_form: self.lambda_form,
            stability: self.stability,
            period_coeff: self.predicted_period_coeff,
            a_alpha: self.singular_cycle.a_alpha,
            a_omega: self.singular_cycle.a_omega,
            peak_b: self.gamma.peak_b,
            chi_prime: self.chi_prime,
            bracket: self.bracket,
            warning: self.warning.clone(),
        }
    }

    pub fn is_classified(&self) -> bool {
        self.stability != Stability::Degenerate
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateOptions {
    /// |chi(s0)| target; default 1e-8 times the largest |chi| on the scan.
    pub root_tol: Option<f64>,
    /// Base of the degeneracy threshold lambda_tol = base + 3 lambda_err.
    pub lambda_tol: f64,
    pub max_iter: usize,
}

impl Default for CandidateOptions {
    fn default() -> Self {
        CandidateOptions { root_tol: None, lambda_tol: 1e-4, max_iter: 100 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct CandidateReport {
    pub candidates: Vec<CycleCandidate>,
    pub warnings: Vec<String>,
}

impl CandidateReport {
    pub fn classified(&self) -> impl Iterator<Item = &CycleCandidate> {
        self.candidates.iter().filter(|c| c.is_classified())
    }
}

/// T coefficient: int_{a_omega}^{a_alpha} da / f(a,0,0).
pub fn period_coefficient(model: &dyn SlowFastModel, a_omega: f64, a_alpha: f64) -> Result<f64> {
    let bad = RefCell::new(None);
    let q = quadrature::integrate(
        &|a| {
            let f = model.f(a, 0.0, 0.0);
            if !(f > 0.0) {
                bad.borrow_mut().get_or_insert(a);
            }
            1.0 / f
        },
        a_omega,
        a_alpha,
        &QuadOptions { abs_tol: 1e-13, rel_tol: 1e-12, max_intervals: 10_000 },
    );
    if let Some(a) = bad.into_inner() {
        return Err(Error::Domain(format!("f({a},0,0) not positive on the slow segment")));
    }
    Ok(q.value)
}

/// Leading-order period (1/eps) int da/f.
pub fn predicted_period(c: &CycleCandidate, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Precondition(format!("eps = {eps} must be positive")));
    }
    if !c.is_classified() {
        return Err(Error::Precondition(format!("candidate at s0 = {} is degenerate", c.s0)));
    }
    Ok(c.predicted_period_coeff / eps)
}

pub fn classify(lambda: f64, lambda_err: f64, base_tol: f64) -> Stability {
    let tol = base_tol + 3.0 * lambda_err;
    if lambda < -tol {
        Stability::Stable
    } else if lambda > tol {
        Stability::Unstable
    } else {
        Stability::Degenerate
    }
}

enum Site {
    /// sign change between two significant points
    Bracket { lo: (f64, f64), hi: (f64, f64) },
    /// chi indistinguishable from zero on [s_first, s_last] without a sign change
    Plateau { s_first: f64, s_last: f64, s_min: f64 },
}

fn sites(scan: &Scan) -> Vec<Site> {
    let pts: Vec<&CharacteristicValues> = scan.ok_values().collect();
    let significant = |v: &CharacteristicValues| v.chi.abs() > 10.0 * v.chi_err;
    let mut out = Vec::new();
    let mut i = 0;
    let mut last_sig: Option<usize> = None;
    while i < pts.len() {
        if significant(pts[i]) {
            if let Some(j) = last_sig {
                if j + 1 == i && pts[j].chi * pts[i].chi < 0.0 {
                    out.push(Site::Bracket { lo: (pts[j].s, pts[j].chi), hi: (pts[i].s, pts[i].chi) });
                }
            }
            last_sig = Some(i);
            i += 1;
            continue;
        }
        let start = i;
        while i < pts.len() && !significant(pts[i]) {
            i += 1;
        }
        let end = i - 1;
        let next_sig = (i < pts.len()).then_some(i);
        match (last_sig, next_sig) {
            (Some(a), Some(b)) if pts[a].chi * pts[b].chi < 0.0 && end - start < 2 => {
                out.push(Site::Bracket { lo: (pts[a].s, pts[a].chi), hi: (pts[b].s, pts[b].chi) });
            }
            _ => {
                let m = (start..=end).min_by(|&x, &y| pts[x].chi.abs().total_cmp(&pts[y].chi.abs())).unwrap();
                out.push(Site::Plateau { s_first: pts[start].s, s_last: pts[end].s, s_min: pts[m].s });
            }
        }
    }
    out
}

fn chi_prime(an: &Analyzer, s0: f64) -> Option<f64> {
    let h = 1e-4 * s0.abs().max(1.0);
    let c = |s: f64| an.orbit(s).and_then(|o| an.chi_of(&o)).ok().map(|r| r.0);
    Some((c(s0 + h)? - c(s0 - h)?) / (2.0 * h))
}

fn candidate_at(
    an: &Analyzer,
    s0: f64,
    bracket: (f64, f64),
    opts: &CandidateOptions,
    mut warning: Option<String>,
    degenerate: bool,
) -> Result<CycleCandidate> {
    let orbit = an.orbit(s0)?;
    let (chi0, _) = an.chi_of(&orbit)?;
    let (form, lambda0, lambda_err) = an.lambda_of(&orbit)?;
    let mut stability = classify(lambda0, lambda_err, opts.lambda_tol);
    if degenerate {
        stability = Stability::Degenerate;
    } else if stability == Stability::Degenerate {
        warning.get_or_insert_with(|| format!("lambda({s0}) = {lambda0:e} is within the degeneracy threshold"));
    }
    let coeff = period_coefficient(an.model, orbit.a_omega, orbit.a_alpha)?;
    Ok(CycleCandidate {
        s0,
        chi0,
        lambda0,
        lambda_err,
        lambda_form: form,
        stability,
        singular_cycle: SingularCycle { a_alpha: orbit.a_alpha, a_omega: orbit.a_omega },
        gamma: orbit,
        predicted_period_coeff: coeff,
        chi_prime: chi_prime(an, s0),
        bracket,
        warning,
    })
}

fn refine(an: &Analyzer, lo: (f64, f64), hi: (f64, f64), root_tol: f64, opts: &CandidateOptions) -> Result<CycleCandidate> {
    let failure = RefCell::new(None);
    let chi = |s: f64| match an.orbit(s).and_then(|o| an.chi_of(&o)) {
        Ok((c, _)) => c,
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            f64::NAN
        }
    };
    let xtol = 1e-12 * lo.0.abs().max(hi.0.abs()).max(1.0);
    let r = roots::brent_with_values(&chi, lo.0, hi.0, lo.1, hi.1, xtol, opts.max_iter)?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let warning = (r.fx.abs() > root_tol)
        .then(|| format!("|chi(s0)| = {:e} above root tolerance {root_tol:e} (noise floor)", r.fx.abs()));
    candidate_at(an, r.x, (lo.0, hi.0), opts, warning, false)
}

/// Refines every sign change of the scan and reports near-zero plateaus as
/// degenerate candidates.
pub fn find_candidates(an: &Analyzer, scan: &Scan, opts: &CandidateOptions) -> Result<CandidateReport> {
    let scale = scan.ok_values().map(|v| v.chi.abs()).fold(0.0, f64::max);
    if scale == 0.0 && scan.ok_values().next().is_none() {
        return Err(Error::Empty("scan has no successful points"));
    }
    let root_tol = opts.root_tol.unwrap_or(1e-8 * scale.max(1e-300));
    let sites = sites(scan);
    let results: Vec<std::result::Result<CycleCandidate, String>> = sites
        .par_iter()
        .map(|site| match *site {
            Site::Bracket { lo, hi } => refine(an, lo, hi, root_tol, opts)
                .map_err(|e| format!("refinement on [{}, {}] failed: {e}", lo.0, hi.0)),
            Site::Plateau { s_first, s_last, s_min } => {
                let w = format!(
                    "chi is indistinguishable from zero on [{s_first}, {s_last}]; no stability classification"
                );
                candidate_at(an, s_min, (s_first, s_last), opts, Some(w), true)
                    .map_err(|e| format!("degenerate site at {s_min}: {e}"))
            }
        })
        .collect();
    let mut report = CandidateReport::default();
    for r in results {
        match r {
            Ok(c) => {
                if let Some(w) = &c.warning {
                    report.warnings.push(w.clone());
                }
                report.candidates.push(c);
            }
            Err(w) => report.warnings.push(w),
        }
    }
    report.candidates.sort_by(|a, b| a.s0.total_cmp(&b.s0));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Bound, Domain, FnModel};

    fn toy(shift: f64, bdep: f64) -> FnModel {
        FnModel::new(
            "toy",
            |_, _, _| 1.0,
            move |a, b, _| a - shift - bdep * b,
            |_, _, _| -1.0,
            Domain::new(Bound::Finite(-4.0), Bound::Finite(4.0), shift),
        )
    }

    #[test]
    fn symmetric_toy_is_degenerate_only() {
        let m = toy(0.0, 0.0);
        let an = Analyzer::new(&m, Parameterization::AlphaPoint, HeteroclinicSettings::default());
        let scan = scan_chi(&an, (0.3, 2.0), 8).unwrap();
        let rep = find_candidates(&an, &scan, &CandidateOptions::default()).unwrap();
        assert_eq!(rep.classified().count(), 0);
        assert!(!rep.warnings.is_empty());
        assert!(rep.candidates.iter().all(|c| c.stability == Stability::Degenerate));
    }

    #[test]
    fn weighted_toy_root_and_stability() {
        // orbits are the conics a_omega = -a_alpha; with 1/f = 1 + 0.3 a (a^2 - 1)
        // chi(s) = 0.6 (s^5/5 - s^3/3), root sqrt(5/3), lambda = ln(w(-s)/w(s))
        let w = |a: f64| 1.0 + 0.3 * a * (a * a - 1.0);
        let m = FnModel::new(
            "weighted",
            move |a, _, _| 1.0 / w(a),
            |a, _, _| a,
            |_, _, _| -1.0,
            Domain::new(Bound::Finite(-1.6), Bound::Finite(1.6), 0.0),
        );
        let an = Analyzer::new(&m, Parameterization::AlphaPoint, HeteroclinicSettings::default());
        let scan = scan_chi(&an, (0.4, 1.55), 10).unwrap();
        assert_eq!(scan.sign_changes(), 1);
        let rep = find_candidates(&an, &scan, &CandidateOptions::default()).unwrap();
        assert_eq!(rep.candidates.len(), 1);
        let c = &rep.candidates[0];
        let s0 = (5.0f64 / 3.0).sqrt();
        assert!((c.s0 - s0).abs() < 1e-6, "{}", c.s0);
        assert!(c.bracket.0 < c.s0 && c.s0 < c.bracket.1);
        assert_eq!(c.stability, Stability::Stable);
        assert!((c.lambda0 - (w(-s0) / w(s0)).ln()).abs() < 1e-5);
        assert!(c.chi_prime.unwrap() > 0.0);
    }

    #[test]
    fn period_scaling() {
        let m = toy(0.0, 0.25);
        let an = Analyzer::new(&m, Parameterization::AlphaPoint, HeteroclinicSettings::default());
        let c = candidate_at(&an, 1.0, (0.9, 1.1), &CandidateOptions::default(), None, false).unwrap();
        let t1 = predicted_period(&c, 1e-2).unwrap();
        let t2 = predicted_period(&c, 1e-3).unwrap();
        assert!((t2 - 10.0 * t1).abs() < 1e-9 * t2);
        assert!((c.predicted_period_coeff - (c.singular_cycle.a_alpha - c.singular_cycle.a_omega)).abs() < 1e-12);
    }

    #[test]
    fn classification_thresholds() {
        assert_eq!(classify(-0.1, 0.0, 1e-4), Stability::Stable);
        assert_eq!(classify(0.1, 0.0, 1e-4), Stability::Unstable);
        assert_eq!(classify(0.1, 0.04, 1e-4), Stability::Degenerate);
        assert_eq!(classify(5e-5, 0.0, 1e-4), Stability::Degenerate);
    }

    #[test]
    fn valid_window_picks_longest_run() {
        let mk = |s: f64, ok: bool| ScanPoint {
            s,
            values: ok.then(|| CharacteristicValues {
                s,
                chi: 1.0,
                chi_err: 0.0,
                lambda: 0.0,
                lambda_err: 0.0,
                lambda_form: LambdaForm::General,
                endpoint_data: characteristics::EndpointData { a_alpha: 0.0, a_omega: 0.0, f_alpha: 1.0, f_omega: 1.0 },
            }),
            error: None,
        };
        let scan = Scan {
            parameterization: Parameterization::AlphaPoint,
            points: vec![mk(0.0, true), mk(1.0, false), mk(2.0, true), mk(3.0, true), mk(4.0, true), mk(5.0, false)],
        };
        assert_eq!(scan.valid_window(), Some((2.0, 4.0)));
    }

    #[test]
    fn small_grid_rejected() {
        let m = toy(0.0, 0.0);
        let an = Analyzer::new(&m, Parameterization::AlphaPoint, HeteroclinicSettings::default());
        assert!(scan_chi(&an, (0.5, 1.0), 4).is_err());
    }
}
