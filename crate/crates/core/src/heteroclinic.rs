//! Heteroclinic orbits gamma(s) of the limiting system `a' = b h`, `b' = b g`
//! connecting (a_alpha, 0) to (a_omega, 0) across the turning point.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{integrate, Direction, Event, Options, Solution, Termination, Tolerance};
use crate::model::SlowFastModel;
use crate::orbit::{log_rhs, OrbitPath};
use crate::roots;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// s = a_alpha
    AlphaPoint,
    /// s = peak height of b; the orbit passes through the point where
    /// g(a, s, 0) = 0
    PeakHeight,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeteroclinicSettings {
    pub tol: Tolerance,
    /// Seed offset; default 1e-8 times the orbit's peak b.
    pub delta: Option<f64>,
    /// Truncation level; default 1e-7 times the orbit's peak b.
    pub b_stop: Option<f64>,
    pub t_max: f64,
    /// Admissible a-window; defaults to the model's finite domain bounds.
    pub window: Option<(f64, f64)>,
}

impl Default for HeteroclinicSettings {
    fn default() -> Self {
        HeteroclinicSettings {
            tol: Tolerance { rel: 1e-11, abs: 1e-13 },
            delta: None,
            b_stop: None,
            t_max: 1e9,
            window: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HeteroclinicOrbit {
    pub s: f64,
    pub parameterization: Parameterization,
    pub a_alpha: f64,
    pub a_omega: f64,
    pub path: OrbitPath,
    pub seed_offset: f64,
    pub tail_cut: f64,
    /// a_omega minus the a-coordinate where the path ends.
    pub tail_correction: f64,
    /// a_alpha minus the a-coordinate where the path starts.
    pub alpha_tail_correction: f64,
    pub peak_b: f64,
    pub t_peak: f64,
    /// Uncertainty of the endpoints from truncation and integration error.
    pub endpoint_err: f64,
}

fn endpoint_err(tail: f64, a: f64, tol: Tolerance) -> f64 {
    1e-3 * tail.abs() + 10.0 * tol.rel * (1.0 + a.abs())
}

/// Unit eigenvector (h/g, 1)/|.| of the limiting flow at (a, 0) for the
/// eigenvalue g(a,0,0); requires g > 0.
pub fn unstable_direction(model: &dyn SlowFastModel, a: f64) -> Result<[f64; 2]> {
    let g = model.g(a, 0.0, 0.0);
    if !(g > 0.0) {
        return Err(Error::Precondition(format!("g({a},0,0) = {g:e} is not positive")));
    }
    Ok(axis_direction(model, a))
}

/// Eigenvector (h/g, 1) normalised, valid on either side of the turning point.
pub fn axis_direction(model: &dyn SlowFastModel, a: f64) -> [f64; 2] {
    let r = model.h(a, 0.0, 0.0) / model.g(a, 0.0, 0.0);
    let n = r.hypot(1.0);
    [r / n, 1.0 / n]
}

fn window_of(model: &dyn SlowFastModel, settings: &HeteroclinicSettings) -> (f64, f64) {
    settings.window.unwrap_or_else(|| {
        let d = model.domain();
        (d.a_min.finite().unwrap_or(f64::NEG_INFINITY), d.a_max.finite().unwrap_or(f64::INFINITY))
    })
}

/// First-order a-drift from (a, b) down to the axis along the orbit:
/// da/db = h/g integrated from b to 0.
fn tail_drift(model: &dyn SlowFastModel, a: f64, b: f64) -> f64 {
    -b * model.h(a, b, 0.0) / model.g(a, b, 0.0)
}

struct Run {
    sol: Solution<2>,
    peaks: usize,
    valleys: usize,
}

/// Limiting-flow run in log coordinates with truncation at b_stop, window
/// exits, and peak/valley recording (u' = g changing sign).
fn run_limit(
    model: &dyn SlowFastModel,
    y0: [f64; 2],
    t_end: f64,
    b_stop: f64,
    window: (f64, f64),
    tol: Tolerance,
) -> Result<Run> {
    let ls = b_stop.ln();
    let mut events = vec![Event::new(move |_, y: &[f64; 2]| y[1] - ls, Direction::Down)];
    if window.0.is_finite() {
        let lo = window.0;
        events.push(Event::new(move |_, y: &[f64; 2]| y[0] - lo, Direction::Down));
    }
    if window.1.is_finite() {
        let hi = window.1;
        events.push(Event::new(move |_, y: &[f64; 2]| y[0] - hi, Direction::Up));
    }
    let forward = t_end > 0.0;
    let gsign = if forward { 1.0 } else { -1.0 };
    let n_term = events.len();
    events.push(Event::new(move |_, y: &[f64; 2]| gsign * model.g(y[0], y[1].exp(), 0.0), Direction::Down).recording());
    events.push(Event::new(move |_, y: &[f64; 2]| gsign * model.g(y[0], y[1].exp(), 0.0), Direction::Up).recording());
    let sol = integrate(log_rhs(model, 0.0), 0.0, y0, t_end, &events, &Options::with_tol(tol))?;
    match sol.termination {
        Termination::EventHit if sol.terminal_event().unwrap().index == 0 => {}
        Termination::EventHit => {
            let e = sol.terminal_event().unwrap();
            return Err(Error::NoConnection(format!(
                "orbit left a-window {:?} at a={} (b={:e})",
                window,
                e.y[0],
                e.y[1].exp()
            )));
        }
        Termination::TimeLimit => {
            return Err(Error::NoConnection(format!("b stayed above b_stop={b_stop:e} up to |t|={}", t_end.abs())));
        }
        Termination::StepFailure => {
            return Err(Error::StepFailure(sol.diagnostic.clone().unwrap_or_default()));
        }
    }
    let peaks = sol.events.iter().filter(|e| e.index == n_term).count();
    let valleys = sol.events.iter().filter(|e| e.index == n_term + 1).count();
    Ok(Run { sol, peaks, valleys })
}

fn pilot_scale(model: &dyn SlowFastModel, a_alpha: f64, window: (f64, f64), t_max: f64) -> Result<f64> {
    let v = unstable_direction(model, a_alpha)?;
    let d = 1e-6 * (1.0 + a_alpha.abs());
    let y0 = [a_alpha + d * v[0], (d * v[1]).ln()];
    let run = run_limit(model, y0, t_max, d * 0.5, window, Tolerance { rel: 1e-7, abs: 1e-10 })?;
    Ok(run.sol.y.iter().map(|y| y[1]).fold(f64::NEG_INFINITY, f64::max).exp())
}

/// Orbit leaving (a_alpha, 0) along the unstable eigenvector, truncated
/// where b drops below b_stop on the attracting side.
pub fn compute_heteroclinic(
    model: &dyn SlowFastModel,
    a_alpha: f64,
    settings: &HeteroclinicSettings,
) -> Result<HeteroclinicOrbit> {
    let dom = model.domain();
    if !(dom.contains(a_alpha) && a_alpha > dom.a_bar) {
        return Err(Error::Precondition(format!("a_alpha={a_alpha} not in (a_bar, a_max)")));
    }
    let window = window_of(model, settings);
    let v = unstable_direction(model, a_alpha)?;
    let (delta, b_stop) = match (settings.delta, settings.b_stop) {
        (Some(d), Some(s)) => (d, s),
        (d, s) => {
            let scale = pilot_scale(model, a_alpha, window, settings.t_max)?;
            (d.unwrap_or(1e-8 * scale), s.unwrap_or(1e-7 * scale))
        }
    };
    if !(delta > 0.0 && b_stop > 0.0) {
        return Err(Error::Precondition("delta and b_stop must be positive".into()));
    }
    let y0 = [a_alpha + delta * v[0], (delta * v[1]).ln()];
    let run = run_limit(model, y0, settings.t_max, b_stop, window, settings.tol)?;
    if run.peaks != 1 || run.valleys != 0 {
        return Err(Error::Domain(format!("orbit from a_alpha={a_alpha} is not single-peaked")));
    }
    let t_peak = run.sol.events.iter().find(|e| e.index != 0).map(|e| e.t).unwrap_or(0.0);
    let end = run.sol.y_last();
    let (a_end, b_end) = (end[0], end[1].exp());
    let tail = tail_drift(model, a_end, b_end);
    let a_omega = a_end + tail;
    if !(a_omega < dom.a_bar) {
        return Err(Error::NoConnection(format!("omega endpoint {a_omega} not left of a_bar")));
    }
    let path = OrbitPath::from_log(run.sol);
    let peak_b = path.state_at(t_peak).map_or_else(|| path.peak_b(), |s| s.1);
    Ok(HeteroclinicOrbit {
        s: a_alpha,
        parameterization: Parameterization::AlphaPoint,
        a_alpha,
        a_omega,
        path,
        seed_offset: delta,
        tail_cut: b_stop,
        tail_correction: tail,
        alpha_tail_correction: -delta * v[0],
        peak_b,
        t_peak,
        endpoint_err: endpoint_err(tail, a_omega, settings.tol),
    })
}

/// a where g(a, b_peak, 0) = 0, from the model or by bracketing in the window.
pub fn peak_point(model: &dyn SlowFastModel, b_peak: f64, window: (f64, f64)) -> Result<f64> {
    if let Some(a) = model.peak_a(b_peak) {
        return Ok(a);
    }
    let (lo, hi) = window;
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::Precondition("peak parameterization needs a finite a-window".into()));
    }
    let n = 200;
    let g = |a: f64| model.g(a, b_peak, 0.0);
    let mut prev = (lo, g(lo));
    for i in 1..=n {
        let a = lo + (hi - lo) * i as f64 / n as f64;
        let ga = g(a);
        if prev.1 > 0.0 && ga <= 0.0 || prev.1 < 0.0 && ga >= 0.0 {
            return Ok(roots::brent(g, prev.0, a, 1e-14 * (1.0 + a.abs()), 200)?.x);
        }
        prev = (a, ga);
    }
    Err(Error::NoConnection(format!("g(., {b_peak}, 0) has no zero in window")))
}

/// Orbit through the peak point at height `b_peak`, integrated forward and
/// backward until b < b_stop at both ends.
pub fn compute_heteroclinic_through_peak(
    model: &dyn SlowFastModel,
    b_peak: f64,
    settings: &HeteroclinicSettings,
) -> Result<HeteroclinicOrbit> {
    if !(b_peak > 0.0) {
        return Err(Error::Precondition(format!("peak height {b_peak} must be positive")));
    }
    let window = window_of(model, settings);
    let a_peak = peak_point(model, b_peak, window)?;
    let b_stop = settings.b_stop.unwrap_or(1e-7 * b_peak);
    let y0 = [a_peak, b_peak.ln()];
    let fwd = run_limit(model, y0, settings.t_max, b_stop, window, settings.tol)?;
    let bwd = run_limit(model, y0, -settings.t_max, b_stop, window, settings.tol)?;
    if fwd.peaks + fwd.valleys + bwd.peaks + bwd.valleys != 0 {
        return Err(Error::Domain(format!("orbit through peak b={b_peak} is not single-peaked")));
    }
    let sol = bwd.sol.into_ascending().concat(fwd.sol);
    let path = OrbitPath::from_log(sol);
    let (a_start, b_start) = path.start();
    let (a_end, b_end) = path.end();
    let alpha_tail = tail_drift(model, a_start, b_start);
    let tail = tail_drift(model, a_end, b_end);
    let (a_alpha, a_omega) = (a_start + alpha_tail, a_end + tail);
    let abar = model.domain().a_bar;
    if !(a_omega < abar && a_alpha > abar) {
        return Err(Error::NoConnection(format!("endpoints ({a_alpha}, {a_omega}) do not straddle a_bar")));
    }
    Ok(HeteroclinicOrbit {
        s: b_peak,
        parameterization: Parameterization::PeakHeight,
        a_alpha,
        a_omega,
        path,
        seed_offset: b_stop,
        tail_cut: b_stop,
        tail_correction: tail,
        alpha_tail_correction: alpha_tail,
        peak_b: b_peak,
        t_peak: 0.0,
        endpoint_err: endpoint_err(tail.abs().max(alpha_tail.abs()), a_omega.abs().max(a_alpha.abs()), settings.tol),
    })
}

pub fn orbit_at(
    model: &dyn SlowFastModel,
    s: f64,
    param: Parameterization,
    settings: &HeteroclinicSettings,
) -> Result<HeteroclinicOrbit> {
    match param {
        Parameterization::AlphaPoint => compute_heteroclinic(model, s, settings),
        Parameterization::PeakHeight => compute_heteroclinic_through_peak(model, s, settings),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaEntry {
    pub a_alpha: f64,
    pub a_omega: Option<f64>,
    pub peak_b: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaMap {
    pub entries: Vec<OmegaEntry>,
    /// a_omega strictly decreasing in a_alpha over successful entries.
    pub monotone_decreasing: bool,
}

pub fn omega_map(model: &dyn SlowFastModel, a_grid: &[f64], settings: &HeteroclinicSettings) -> Result<OmegaMap> {
    if a_grid.is_empty() {
        return Err(Error::Empty("empty a_alpha grid"));
    }
    let abar = model.domain().a_bar;
    if let Some(bad) = a_grid.iter().find(|a| !(model.domain().contains(**a) && **a > abar)) {
        return Err(Error::Precondition(format!("grid point {bad} not in (a_bar, a_max)")));
    }
    let entries: Vec<OmegaEntry> = a_grid
        .par_iter()
        .map(|&a| match compute_heteroclinic(model, a, settings) {
            Ok(o) => OmegaEntry { a_alpha: a, a_omega: Some(o.a_omega), peak_b: Some(o.peak_b), error: None },
            Err(e) => OmegaEntry { a_alpha: a, a_omega: None, peak_b: None, error: Some(e.to_string()) },
        })
        .collect();
    let ok: Vec<(f64, f64)> = entries.iter().filter_map(|e| e.a_omega.map(|w| (e.a_alpha, w))).collect();
    let mut sorted = ok.clone();
    sorted.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let monotone_decreasing = sorted.windows(2).all(|w| w[1].1 < w[0].1);
    Ok(OmegaMap { entries, monotone_decreasing })
}

/// Orbit-family CSV: a_alpha, a_omega, peak_b, path_file.
pub fn write_family_csv<W: Write>(mut w: W, rows: &[(f64, f64, f64, String)]) -> io::Result<()> {
    writeln!(w, "a_alpha,a_omega,peak_b,path_file")?;
    for (aa, aw, pb, f) in rows {
        writeln!(w, "{aa:e},{aw:e},{pb:e},{f}")?;
    }
    Ok(())
}
