//! Simulation of the eps > 0 system: Poincare return maps on the section
//! b = delta1, periodic-orbit shooting, entry-exit and Floquet checks.
//!
//! Planar runs use (a, ln b) so that the exponentially small b of the slow
//! passage stays representable.

use serde::{Deserialize, Serialize};

use crate::analysis::{predicted_period, CycleCandidate};
use crate::error::{Error, Result};
use crate::heteroclinic::{unstable_direction, HeteroclinicOrbit};
use crate::integrator::{integrate, Direction, Event, Options, Solution, Termination, Tolerance};
use crate::model::SlowFastModel;
use crate::models::epidemic::EpidemicParams;
use crate::orbit::{log_rhs, OrbitPath};
use crate::quadrature::{self, QuadOptions};
use crate::roots;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifySettings {
    pub tol: Tolerance,
    /// Horizon per return; default 50 / eps.
    pub t_max: Option<f64>,
    /// Section level; default 5% of the candidate's peak b.
    pub delta1: Option<f64>,
    pub max_iter: usize,
    /// Fixed-point tolerance relative to the slow-segment length.
    pub xtol: f64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            tol: Tolerance { rel: 1e-10, abs: 1e-12 },
            t_max: None,
            delta1: None,
            max_iter: 40,
            xtol: 1e-9,
        }
    }
}

impl VerifySettings {
    fn horizon(&self, eps: f64) -> f64 {
        self.t_max.unwrap_or(50.0 / eps)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub epsilon: f64,
    pub candidate_s0: f64,
    pub delta1: f64,
    /// a-coordinate of the fixed point on the section b = delta1
    pub fixed_point_a: f64,
    pub measured_period: f64,
    pub predicted_period: f64,
    pub period_rel_gap: f64,
    /// max over the periodic orbit of the distance to Gamma(s0)
    pub orbit_distance: f64,
    pub orbit_distance_over_eps: f64,
    /// return-map derivative at the fixed point
    pub floquet_estimate: f64,
    pub exp_lambda: f64,
    pub floquet_gap: f64,
    /// the finite-difference stencil left the basin of return
    pub floquet_degraded: bool,
    pub converged: bool,
    pub iterations: usize,
    pub diagnostic: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Return {
    pub a_out: f64,
    pub transit_time: f64,
    pub path: OrbitPath,
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::Precondition(format!("eps = {eps} must be positive")))
    }
}

/// Next downward crossing of b = delta1 with a < a_bar, starting on the
/// section at a_in.
pub fn return_map_path(
    model: &dyn SlowFastModel,
    eps: f64,
    delta1: f64,
    a_in: f64,
    settings: &VerifySettings,
) -> Result<Return> {
    check_eps(eps)?;
    if !(delta1 > 0.0) {
        return Err(Error::Precondition(format!("delta1 = {delta1} must be positive")));
    }
    let a_bar = model.domain().a_bar;
    let level = delta1.ln();
    let t_max = settings.horizon(eps);
    let opts = Options::with_tol(settings.tol);
    let mut y0 = [a_in, level];
    let mut t0 = 0.0;
    let mut full: Option<Solution<2>> = None;
    loop {
        let down = Event::new(move |_, y: &[f64; 2]| y[1] - level, Direction::Down);
        let sol = integrate(log_rhs(model, eps), t0, y0, t_max, &[down], &opts)?;
        let term = sol.termination;
        let diag = sol.diagnostic.clone();
        let end = sol.y_last();
        let t_end = sol.t_last();
        full = Some(match full {
            None => sol,
            Some(f) => f.concat(sol),
        });
        match term {
            Termination::EventHit if end[0] < a_bar => {
                return Ok(Return { a_out: end[0], transit_time: t_end, path: OrbitPath::from_log(full.unwrap()) });
            }
            Termination::EventHit => {
                // downward crossing on the wrong side: keep going
                y0 = end;
                t0 = t_end;
            }
            Termination::TimeLimit => return Err(Error::NoReturn(t_max)),
            Termination::StepFailure => return Err(Error::StepFailure(diag.unwrap_or_default())),
        }
    }
}

pub fn return_map(model: &dyn SlowFastModel, eps: f64, delta1: f64, a_in: f64, settings: &VerifySettings) -> Result<(f64, f64)> {
    return_map_path(model, eps, delta1, a_in, settings).map(|r| (r.a_out, r.transit_time))
}

/// Point where the descending branch of gamma crosses b = level.
pub fn descending_crossing(gamma: &HeteroclinicOrbit, level: f64) -> Result<f64> {
    let path = &gamma.path;
    let times = path.times();
    let b_at = |t: f64| path.state_at(t).map_or(f64::NAN, |s| s.1);
    let k = times
        .iter()
        .position(|&t| t > gamma.t_peak && b_at(t) < level)
        .ok_or_else(|| Error::NoConnection(format!("gamma never descends below b = {level:e}")))?;
    if k == 0 {
        return Err(Error::NoConnection("gamma starts below the section".into()));
    }
    let t = roots::brent(|t| b_at(t) - level, times[k - 1].max(gamma.t_peak), times[k], 1e-13 * times[k].abs().max(1.0), 200)?;
    Ok(path.state_at(t.x).unwrap().0)
}

fn seg_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let l2 = dx * dx + dy * dy;
    let t = if l2 > 0.0 { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / l2).clamp(0.0, 1.0) } else { 0.0 };
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

/// Polyline of the singular cycle: gamma plus the slow segment on b = 0.
pub fn singular_polyline(gamma: &HeteroclinicOrbit) -> Vec<(f64, f64)> {
    let mut pts = vec![(gamma.a_alpha, 0.0)];
    pts.extend(gamma.path.samples().map(|(_, a, b)| (a, b)));
    pts.push((gamma.a_omega, 0.0));
    pts.push((gamma.a_alpha, 0.0));
    pts
}

/// max over dense samples of `path` of the distance to the polyline.
pub fn orbit_distance(path: &OrbitPath, polyline: &[(f64, f64)]) -> f64 {
    let times = path.times();
    let mut worst: f64 = 0.0;
    for w in times.windows(2) {
        for k in 0..4 {
            let t = w[0] + (w[1] - w[0]) * k as f64 / 4.0;
            let Some(p) = path.state_at(t) else { continue };
            let d = polyline.windows(2).map(|s| seg_dist(p, s[0], s[1])).fold(f64::INFINITY, f64::min);
            worst = worst.max(d);
        }
    }
    worst
}

/// Central-difference derivative of the return map.
pub fn floquet_check(
    model: &dyn SlowFastModel,
    eps: f64,
    report: &VerificationReport,
    a_omega: f64,
    settings: &VerifySettings,
) -> Result<(f64, f64, f64, bool)> {
    if !report.converged {
        return Err(Error::Precondition("floquet check needs a converged report".into()));
    }
    let a = report.fixed_point_a;
    let h = (1e-3 * (a - a_omega).abs()).max(1e-6);
    let plus = return_map(model, eps, report.delta1, a + h, settings);
    let minus = return_map(model, eps, report.delta1, a - h, settings);
    let (det, degraded) = match (plus, minus) {
        (Ok(p), Ok(m)) => ((p.0 - m.0) / (2.0 * h), false),
        (Ok(p), Err(_)) => ((p.0 - a) / h, true),
        (Err(_), Ok(m)) => ((a - m.0) / h, true),
        (Err(e), Err(_)) => return Err(e),
    };
    Ok((det, report.exp_lambda, (det - report.exp_lambda).abs(), degraded))
}

/// Solves P(a) = a by damped secant iteration from gamma(s0) on the section.
pub fn find_periodic_orbit(
    model: &dyn SlowFastModel,
    eps: f64,
    candidate: &CycleCandidate,
    settings: &VerifySettings,
) -> Result<VerificationReport> {
    check_eps(eps)?;
    let gamma = &candidate.gamma;
    let delta1 = settings.delta1.unwrap_or(0.05 * gamma.peak_b);
    let scale = (gamma.a_alpha - gamma.a_omega).abs();
    let xtol = settings.xtol * scale.max(1.0);
    let predicted = predicted_period(candidate, eps)?;
    let f = |a: f64| return_map(model, eps, delta1, a, settings).map(|r| r.0 - a);

    let mut a0 = descending_crossing(gamma, delta1)?;
    let mut f0 = f(a0)?;
    let mut a1 = a0 + f0;
    if (a1 - a0).abs() < xtol {
        a1 = a0 + 10.0 * xtol;
    }
    let mut f1 = f(a1)?;
    let mut iterations = 2;
    let mut converged = f1.abs() < xtol;
    let mut diagnostic = None;
    let max_step = 0.1 * scale;
    while !converged && iterations < settings.max_iter {
        let denom = f1 - f0;
        if denom == 0.0 {
            diagnostic = Some("secant slope vanished".into());
            break;
        }
        let mut step = -f1 * (a1 - a0) / denom;
        if step.abs() > max_step {
            step = max_step * step.signum();
        }
        // damp until the trial point returns
        let mut trial = None;
        for _ in 0..8 {
            iterations += 1;
            match f(a1 + step) {
                Ok(v) => {
                    trial = Some(v);
                    break;
                }
                Err(_) => step *= 0.5,
            }
        }
        let Some(f2) = trial else {
            diagnostic = Some(format!("no return near a = {a1}"));
            break;
        };
        (a0, f0, a1, f1) = (a1, f1, a1 + step, f2);
        converged = f1.abs() < xtol || (step.abs() < xtol && f1.abs() < 1e3 * xtol);
    }
    if !converged && diagnostic.is_none() {
        diagnostic = Some(format!("no convergence in {iterations} return-map evaluations, |P(a) - a| = {:e}", f1.abs()));
    }

    let exp_lambda = candidate.lambda0.exp();
    let mut report = VerificationReport {
        epsilon: eps,
        candidate_s0: candidate.s0,
        delta1,
        fixed_point_a: a1,
        measured_period: f64::NAN,
        predicted_period: predicted,
        period_rel_gap: f64::NAN,
        orbit_distance: f64::NAN,
        orbit_distance_over_eps: f64::NAN,
        floquet_estimate: f64::NAN,
        exp_lambda,
        floquet_gap: f64::NAN,
        floquet_degraded: false,
        converged,
        iterations,
        diagnostic,
    };
    if !converged {
        return Ok(report);
    }
    let ret = return_map_path(model, eps, delta1, a1, settings)?;
    report.measured_period = ret.transit_time;
    report.period_rel_gap = (ret.transit_time - predicted).abs() / predicted;
    report.orbit_distance = orbit_distance(&ret.path, &singular_polyline(gamma));
    report.orbit_distance_over_eps = report.orbit_distance / eps;
    match floquet_check(model, eps, &report, gamma.a_omega, settings) {
        Ok((det, _, gap, degraded)) => {
            report.floquet_estimate = det;
            report.floquet_gap = gap;
            report.floquet_degraded = degraded;
        }
        Err(e) => {
            report.floquet_degraded = true;
            report.diagnostic = Some(format!("floquet: {e}"));
        }
    }
    Ok(report)
}

/// Root x of int_{a_entry}^{x} g(a,0,0)/f(a,0,0) da = 0 beyond a_bar.
pub fn predicted_exit(model: &dyn SlowFastModel, a_entry: f64) -> Result<f64> {
    let d = model.domain();
    if !(model.g(a_entry, 0.0, 0.0) < 0.0) {
        return Err(Error::Precondition(format!("a_entry = {a_entry} is not on the attracting side")));
    }
    let w = |a: f64| model.g(a, 0.0, 0.0) / model.f(a, 0.0, 0.0);
    let qo = QuadOptions { abs_tol: 1e-14, rel_tol: 1e-13, max_intervals: 10_000 };
    let base = quadrature::integrate(&w, a_entry, d.a_bar, &qo).value;
    let partial = |x: f64| base + quadrature::integrate(&w, d.a_bar, x, &qo).value;
    let dir = (d.a_bar - a_entry).signum();
    let limit = if dir > 0.0 { d.a_max.finite() } else { d.a_min.finite() };
    let span = (d.a_bar - a_entry).abs().max(1e-3);
    let mut hi = match limit {
        Some(l) if dir * (d.a_bar + dir * span - l) >= 0.0 => d.a_bar + 0.5 * (l - d.a_bar),
        _ => d.a_bar + dir * span,
    };
    let mut k = 0;
    while partial(hi) < 0.0 {
        k += 1;
        if k > 60 {
            return Err(Error::NoReturn(hi));
        }
        let step = dir * span * 2f64.powi(k);
        hi = match limit {
            Some(l) => d.a_bar + (l - d.a_bar) * (1.0 - 0.5f64.powi(k)),
            None => d.a_bar + step,
        };
        if !(partial(hi).is_finite()) {
            return Err(Error::Domain(format!("partial integral not finite at {hi}")));
        }
    }
    let (lo, hi) = if dir > 0.0 { (d.a_bar, hi) } else { (hi, d.a_bar) };
    Ok(roots::brent(partial, lo, hi, 1e-14 * (1.0 + lo.abs().max(hi.abs())), 300)?.x)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryExit {
    pub a_entry: f64,
    /// entry projected along the fast fibre onto b = 0
    pub a_entry_axis: f64,
    pub a_exit_axis: f64,
    /// axis exit lifted along the fast fibre back to b = delta1
    pub a_exit_predicted: f64,
    pub a_exit_measured: f64,
    pub gap: f64,
}

/// Compares the measured exit of the eps-flow from (a_entry, delta1) with the
/// entry-exit prediction.
pub fn entry_exit_check(
    model: &dyn SlowFastModel,
    eps: f64,
    a_entry: f64,
    delta1: f64,
    settings: &VerifySettings,
) -> Result<EntryExit> {
    check_eps(eps)?;
    let level = delta1.ln();
    let opts = Options::with_tol(settings.tol);

    // fast descent of the limiting flow
    let floor = level - 40.0;
    let down = Event::new(move |_, y: &[f64; 2]| y[1] - floor, Direction::Down);
    let sol = integrate(log_rhs(model, 0.0), 0.0, [a_entry, level], 1e9, &[down], &opts)?;
    if sol.termination != Termination::EventHit {
        return Err(Error::NoReturn(1e9));
    }
    let entry_axis = sol.y_last()[0];
    let exit_axis = predicted_exit(model, entry_axis)?;

    // fast ascent of the limiting flow from the exit point
    let dir = unstable_direction(model, exit_axis)?;
    let seed = 1e-12_f64.max(delta1 * 1e-10);
    let up = Event::new(move |_, y: &[f64; 2]| y[1] - level, Direction::Up);
    let sol = integrate(
        log_rhs(model, 0.0),
        0.0,
        [exit_axis + seed * dir[0], (seed * dir[1]).ln()],
        1e9,
        &[up],
        &opts,
    )?;
    if sol.termination != Termination::EventHit {
        return Err(Error::NoReturn(1e9));
    }
    let predicted = sol.y_last()[0];

    let up = Event::new(move |_, y: &[f64; 2]| y[1] - level, Direction::Up);
    let sol = integrate(log_rhs(model, eps), 0.0, [a_entry, level], settings.horizon(eps), &[up], &opts)?;
    match sol.termination {
        Termination::EventHit => {}
        Termination::TimeLimit => return Err(Error::NoReturn(settings.horizon(eps))),
        Termination::StepFailure => return Err(Error::StepFailure(sol.diagnostic.unwrap_or_default())),
    }
    let measured = sol.y_last()[0];
    Ok(EntryExit {
        a_entry,
        a_entry_axis: entry_axis,
        a_exit_axis: exit_axis,
        a_exit_predicted: predicted,
        a_exit_measured: measured,
        gap: (measured - predicted).abs(),
    })
}

/// State of a 3-D epidemic run at a recorded event.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpidemicHit {
    pub t: f64,
    pub s: f64,
    pub i: f64,
    pub n: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpidemicRun {
    /// downward crossings of I = section level
    pub section: Vec<EpidemicHit>,
    /// local maxima of I
    pub maxima: Vec<EpidemicHit>,
    pub end: EpidemicHit,
}

impl EpidemicRun {
    /// Relative change of the last two section crossings in N.
    pub fn section_settled(&self, rtol: f64) -> Option<f64> {
        let k = self.section.len();
        if k < 2 {
            return None;
        }
        let (a, b) = (self.section[k - 2].n, self.section[k - 1].n);
        ((a - b).abs() <= rtol * b.abs()).then_some(b)
    }

    /// Maxima of I strictly decreasing over the recorded returns.
    pub fn amplitude_decays(&self) -> bool {
        self.maxima.len() >= 2 && self.maxima.windows(2).all(|w| w[1].i < w[0].i)
    }
}

/// Integrates the full epidemic system in (S, ln I, N) from (S, I, N),
/// recording section crossings and I-maxima.
pub fn epidemic_run(params: &EpidemicParams, eps: f64, z0: [f64; 3], section_i: f64, t_max: f64, tol: Tolerance) -> Result<EpidemicRun> {
    check_eps(eps)?;
    params.validate()?;
    if !(z0[1] > 0.0 && section_i > 0.0) {
        return Err(Error::Precondition("I and the section level must be positive".into()));
    }
    let level = section_i.ln();
    let p = *params;
    let a = p.a_comb();
    let events = [
        Event::new(move |_, z: &[f64; 3]| z[1] - level, Direction::Down).recording(),
        Event::new(move |_, z: &[f64; 3]| p.incidence(z[0], z[2]) - a, Direction::Down).recording(),
    ];
    let sol = integrate(params.rhs_log(eps), 0.0, [z0[0], z0[1].ln(), z0[2]], t_max, &events, &Options::with_tol(tol))?;
    if sol.termination == Termination::StepFailure {
        return Err(Error::StepFailure(sol.diagnostic.unwrap_or_default()));
    }
    let hit = |t: f64, z: [f64; 3]| EpidemicHit { t, s: z[0], i: z[1].exp(), n: z[2] };
    let mut run = EpidemicRun { section: Vec::new(), maxima: Vec::new(), end: hit(sol.t_last(), sol.y_last()) };
    for e in &sol.events {
        let h = hit(e.t, e.y);
        if e.index == 0 {
            run.section.push(h);
        } else {
            run.maxima.push(h);
        }
    }
    Ok(run)
}
